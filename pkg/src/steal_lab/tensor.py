"""Dense float64 numerics: matmul, stable softmax, cross-entropy, Adam, and a
central finite-difference harness for verifying analytic layer gradients.

Matrices are plain 2-D ``numpy.ndarray`` in row-major order; every public
operation works in 64-bit and is deterministic for fixed inputs on a fixed
platform.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

# -log(0) guard for hard one-hot collisions in cross_entropy.
PROB_FLOOR = 1e-12


def as_matrix(x, name="matrix"):
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with explicit shape checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    return a @ b


def softmax_rows(logits):
    """Row-wise softmax with per-row max subtraction for stability.

    Accepts any array whose last axis holds the logits, so stacked
    (samples, rows, classes) inputs work unchanged.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax_rows: logits must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class, in nats.

    Probabilities are clamped at 1e-12 before the log so one-hot collisions
    with hard labels stay finite.
    """
    p = as_matrix(probs, "probs")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != p.shape[0]:
        raise ShapeError(f"labels shape {y.shape} does not match probs rows {p.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DomainError("labels must be integers")
    k = p.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DomainError(f"label out of range [0, {k})")
    picked = p[np.arange(p.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def one_hot(labels, num_classes):
    y = np.asarray(labels)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def sigmoid(x):
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_scalar(x):
    return float(sigmoid(np.asarray([float(x)]))[0])


def softplus(x):
    return np.logaddexp(0.0, x)


def he_uniform(rng, out_dim, in_dim):
    """He-uniform weight init: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, value):
        return cls(m=np.zeros_like(value), v=np.zeros_like(value), t=0)


def adam_step(value, grad, state, lr, *, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0):
    """One Adam update, in place, with optional decoupled weight decay.

    The decay is applied multiplicatively (value *= 1 - lr*wd) before the
    moment update, AdamW-style. Returns (value, state) for convenience.
    """
    if lr <= 0:
        raise DomainError("adam_step: lr must be positive")
    if value.shape != grad.shape:
        raise ShapeError(f"adam_step: value {value.shape} vs grad {grad.shape}")
    if weight_decay:
        value *= 1.0 - lr * weight_decay
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, state


class AdamOptimizer:
    """Adam over a list of Param objects (see layers.Param).

    step() inlines the same update as adam_step (minus redundant shape
    checks) because it runs once per parameter per minibatch.
    """

    def __init__(self, params, lr, *, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.states = [AdamState.for_param(p.value) for p in self.params]

    def step(self):
        lr, b1, b2, eps = self.lr, self.beta1, self.beta2, self.eps
        decay = 1.0 - lr * self.weight_decay if self.weight_decay else None
        for p, s in zip(self.params, self.states):
            if decay is not None:
                p.value *= decay
            s.t += 1
            s.m *= b1
            s.m += (1.0 - b1) * p.grad
            s.v *= b2
            s.v += (1.0 - b2) * p.grad * p.grad
            m_hat = s.m / (1.0 - b1 ** s.t)
            v_hat = s.v / (1.0 - b2 ** s.t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class FlatAdam:
    """Adam over one fused parameter vector.

    Parameter values and gradients are rebound to views into two contiguous
    arrays, so the update is a handful of vector ops per step instead of one
    per parameter. The arithmetic is elementwise-identical to AdamOptimizer
    (asserted by tests), it just runs fused.
    """

    def __init__(self, params, lr, *, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        total = sum(int(p.value.size) for p in self.params)
        self.values = np.empty(total)
        self.grads = np.zeros(total)
        offset = 0
        for p in self.params:
            size = int(p.value.size)
            shape = p.value.shape
            self.values[offset:offset + size] = p.value.reshape(-1)
            p.value = self.values[offset:offset + size].reshape(shape)
            p.grad = self.grads[offset:offset + size].reshape(shape)
            offset += size
        self.m = np.zeros(total)
        self.v = np.zeros(total)
        self.t = 0

    def zero_grads(self):
        self.grads[...] = 0.0

    def step(self):
        lr, b1, b2 = self.lr, self.beta1, self.beta2
        if self.weight_decay:
            self.values *= 1.0 - lr * self.weight_decay
        self.t += 1
        self.m *= b1
        self.m += (1.0 - b1) * self.grads
        self.v *= b2
        self.v += (1.0 - b2) * self.grads * self.grads
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        self.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    """Outcome of a central finite-difference comparison.

    ``worst_index`` indexes the flat concatenation of all checked parameter
    components followed by all input components; ``param_count`` counts only
    the parameter components.
    """

    max_rel_error: float
    param_count: int
    worst_index: int


def finite_diff_check(layer, x, eps=1e-3, *, labels=None, loss="softmax_ce",
                      reg_weight=0.0, n_data=100, noise_seed=0):
    """Compare analytic parameter and input gradients against central differences.

    The layer's stochastic draws (dropout masks, concrete u, reparameterization
    noise) are frozen by re-seeding an identical Generator for every forward
    evaluation, so the objective is a smooth function of parameters and input.

    ``loss`` is the scalar composition on top of the layer output:
    "softmax_ce" (labels required or derived as row index mod k) or
    "quadratic" (0.5 * sum(out**2)). ``reg_weight`` > 0 adds the layer's own
    regularizer (KL / concrete term) so its gradients are exercised too.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise DomainError("finite_diff_check: eps must be positive")
    x = as_matrix(x, "input")
    x_work = x.copy()

    def run_forward():
        rng = np.random.default_rng(noise_seed)
        return layer.forward(x_work, rng)

    def objective(out):
        if loss == "quadratic":
            return 0.5 * float(np.sum(out * out))
        probs = softmax_rows(out)
        return cross_entropy(probs, _labels)

    out0 = run_forward()
    if loss == "softmax_ce":
        if labels is None:
            _labels = np.arange(out0.shape[0]) % out0.shape[1]
        else:
            _labels = np.asarray(labels)
    else:
        _labels = None

    def objective_value():
        val = objective(run_forward())
        if reg_weight:
            val += reg_weight * layer.reg_loss(n_data)
        return val

    # Analytic pass: forward once more (same frozen noise), backprop the loss.
    for p in layer.params():
        p.grad[...] = 0.0
    out = run_forward()
    if loss == "quadratic":
        dout = out.copy()
    else:
        probs = softmax_rows(out)
        dout = (probs - one_hot(_labels, out.shape[1])) / out.shape[0]
    dx = layer.backward(dout)
    if reg_weight:
        layer.add_reg_grads(reg_weight, n_data)

    analytic = [p.grad.copy() for p in layer.params()] + [dx.copy()]
    arrays = [p.value for p in layer.params()] + [x_work]
    param_count = sum(int(p.value.size) for p in layer.params())

    max_rel = 0.0
    worst = 0
    flat_pos = 0
    for arr, ana in zip(arrays, analytic):
        flat = arr.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = objective_value()
            flat[i] = orig - eps
            f_minus = objective_value()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(num), abs(aflat[i]), 1e-8)
            rel = abs(num - aflat[i]) / denom
            if rel > max_rel:
                max_rel = rel
                worst = flat_pos + i
        flat_pos += flat.size

    return GradCheckResult(max_rel_error=max_rel, param_count=param_count,
                           worst_index=worst)
