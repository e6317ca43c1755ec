"""Full experiment grid: {target sizes} x {surrogate families} x {trunks},
replicated over seeds, with fidelity scored at each configured forward-pass
count. Rows are keyed and sorted so report assembly is order-independent, and
every random decision derives from the row's seed — two runs of the same
config produce identical reports byte for byte.

Wall-clock training times are inherently not reproducible, so they live in a
separate timing ledger rather than in the report rows.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data import gen_blobs, gen_spirals, split_halves, take
from .errors import StealLabError
from .extraction import (ENSEMBLE_FAMILIES, SurrogateSpec, TargetSpec,
                         accuracy, build_surrogate_set, evaluate_fidelity,
                         fidelity_rng, surrogate_specs_for, train_surrogate,
                         train_target)
from .network import save_checkpoint
from .oracle import InProcessOracle
from .seeding import DATA_TEST, DATA_TRAIN, SPLIT, derive_seed

log = logging.getLogger("steal_lab.experiment")


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def merge(self, other):
        self.rows.extend(other.rows)
        self.curves.extend(other.curves)
        self.timings.extend(other.timings)
        self.errors.extend(other.errors)


def generate_data(config, seed):
    """The seed's train/test datasets (fresh replication per seed)."""
    if config.dataset == "blobs":
        train = gen_blobs(config.classes, config.dims, config.train_points,
                          config.spread, derive_seed(seed, DATA_TRAIN))
        test = gen_blobs(config.classes, config.dims, config.test_points,
                         config.spread, derive_seed(seed, DATA_TEST))
    elif config.dataset == "spirals":
        train = gen_spirals(config.classes, config.train_points, config.noise,
                            derive_seed(seed, DATA_TRAIN))
        test = gen_spirals(config.classes, config.test_points, config.noise,
                           derive_seed(seed, DATA_TEST))
    else:
        raise StealLabError(f"unknown dataset {config.dataset!r}")
    return train, test


def grid_cells(config):
    """(family, trunk) cells in report order."""
    cells = []
    for family in config.families:
        for spec in surrogate_specs_for(family, config.trunks):
            cells.append((family, spec.trunk))
    return cells


def expected_report_rows(config):
    """Grid size: trunked families get one row per configured M; ensembles
    appear once per seed since their forward-pass count is pinned to the
    member count."""
    per_seed = 0
    for family, _ in grid_cells(config):
        per_seed += 1 if family in ENSEMBLE_FAMILIES else len(config.m_values)
    return per_seed * len(config.target_sizes) * len(config.seeds)


def surrogate_spec_for_cell(config, family, trunk):
    epochs = config.bnn_epochs if family == "bnn" else config.epochs
    return SurrogateSpec(family, trunk, m_passes=max(config.m_values),
                         epochs=epochs, members=config.members,
                         dropout_rate=config.dropout_rate,
                         temperature=config.temperature,
                         prior_std=config.prior_std, lr=config.lr)


def run_seed(config, seed, checkpoint_dir=None):
    """Everything for one seed: targets, surrogate sets, family training,
    fidelity scoring. Cell failures are recorded and do not stop the grid."""
    result = ExperimentResult()
    train_ds, test_ds = generate_data(config, seed)
    plan = split_halves(train_ds, test_ds, derive_seed(seed, SPLIT))
    target_train = take(train_ds, plan.target_train)
    query_inputs = train_ds.features[plan.surrogate_query]
    target_test = take(test_ds, plan.target_test)
    fidelity_inputs = test_ds.features[plan.fidelity_test]

    for size_index, size in enumerate(config.target_sizes):
        tspec = TargetSpec(size, epochs=config.epochs, lr=config.lr)
        cell_key = {"dataset": config.dataset, "target_size": size,
                    "seed": seed}
        try:
            target = train_target(tspec, target_train,
                                  derive_seed(seed, size_index))
        except StealLabError as exc:
            log.warning("target %s failed for seed %d: %s", size, seed, exc)
            for family, trunk in grid_cells(config):
                _record_failure(result, config, cell_key, family, trunk,
                                "train_target", exc)
            continue
        target_acc = accuracy(target, target_test.features, target_test.labels)
        oracle = InProcessOracle(target,
                                 name=f"{config.dataset}-{size}-seed{seed}")
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir)
            path.mkdir(parents=True, exist_ok=True)
            save_checkpoint(target, path / f"target_{size}_seed{seed}.json")
        surrogate_set = build_surrogate_set(oracle, query_inputs)
        queries_used = oracle.ledger.total_queries

        for family, trunk in grid_cells(config):
            spec = surrogate_spec_for_cell(config, family, trunk)
            cell_seed = derive_seed(seed, size_index,
                                    config.families.index(family),
                                    0 if family == "het_ensemble"
                                    else config.trunks.index(trunk))
            log.info("seed %d size %s family %s trunk %s", seed, size,
                     family, trunk)
            started = time.perf_counter()
            try:
                sampler, curve = train_surrogate(spec, surrogate_set,
                                                 fidelity_inputs, cell_seed)
            except StealLabError as exc:
                log.warning("cell failed (%s/%s/%s seed %d): %s", size, family,
                            trunk, seed, exc)
                _record_failure(result, config, cell_key, family, trunk,
                                "train_surrogate", exc,
                                target_acc=target_acc, queries=queries_used)
                continue
            elapsed = time.perf_counter() - started
            result.timings.append({"dataset": config.dataset,
                                   "target_size": size, "family": family,
                                   "trunk": trunk, "seed": seed,
                                   "train_seconds": elapsed})
            for epoch, value in enumerate(curve.values):
                result.curves.append({"dataset": config.dataset,
                                      "target_size": size, "family": family,
                                      "trunk": trunk, "seed": seed,
                                      "epoch": epoch, "variance": value})
            m_values = ([sampler.m] if family in ENSEMBLE_FAMILIES
                        else list(config.m_values))
            for m in m_values:
                fid = evaluate_fidelity(sampler.with_m(m), oracle,
                                        fidelity_inputs,
                                        fidelity_rng(seed, size_index, family,
                                                     trunk, m))
                result.rows.append({"dataset": config.dataset,
                                    "target_size": size, "family": family,
                                    "trunk": trunk, "M": m, "seed": seed,
                                    "fidelity": fid, "target_acc": target_acc,
                                    "queries": queries_used})
    return result


def _record_failure(result, config, cell_key, family, trunk, stage, exc,
                    target_acc=None, queries=None):
    result.errors.append({**cell_key, "family": family, "trunk": trunk,
                          "stage": stage, "message": str(exc)})
    m_values = ([config.members] if family in ENSEMBLE_FAMILIES
                else list(config.m_values))
    for m in m_values:
        result.rows.append({**cell_key, "family": family, "trunk": trunk,
                            "M": m, "fidelity": None, "target_acc": target_acc,
                            "queries": queries})


def _sort_rows(config, result):
    size_order = {s: i for i, s in enumerate(config.target_sizes)}
    family_order = {f: i for i, f in enumerate(config.families)}

    def row_key(row):
        return (row["dataset"], size_order[row["target_size"]],
                family_order[row["family"]], row["trunk"], -row["M"],
                row["seed"])

    result.rows.sort(key=row_key)
    result.curves.sort(key=lambda r: (r["dataset"],
                                      size_order[r["target_size"]],
                                      family_order[r["family"]], r["trunk"],
                                      r["seed"], r["epoch"]))
    result.timings.sort(key=lambda r: (r["dataset"],
                                       size_order[r["target_size"]],
                                       family_order[r["family"]], r["trunk"],
                                       r["seed"]))
    result.errors.sort(key=lambda r: (r["target_size"], r["family"],
                                      r["trunk"], r["seed"]))


def _seed_job(args):
    config, seed, checkpoint_dir = args
    return run_seed(config, seed, checkpoint_dir)


def run_experiment(config, jobs=1, checkpoint_dir=None):
    """The full grid over all configured seeds.

    jobs > 1 distributes whole seeds over worker processes; assembly sorts
    rows by key, so the report is identical regardless of jobs.
    """
    result = ExperimentResult()
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            work = [(config, seed, checkpoint_dir) for seed in config.seeds]
            for part in pool.map(_seed_job, work):
                result.merge(part)
    else:
        for seed in config.seeds:
            result.merge(run_seed(config, seed, checkpoint_dir))
    _sort_rows(config, result)
    return result
