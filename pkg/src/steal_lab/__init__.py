"""steal-lab: a desk-scale model-extraction laboratory.

Targets are trained black-box classifiers queried through a hard-label
oracle; surrogates come in six families (a deterministic baseline, MC
dropout, concrete dropout, a variational/Bayes-by-backprop head, deep
ensembles, heterogeneous ensembles), all funnelled through the same Monte
Carlo predictive average for fidelity and variance analysis.
"""

__version__ = "0.1.0"

from .data import Dataset, SplitPlan, gen_blobs, gen_spirals, load_csv, save_csv, split_halves
from .errors import (ConfigError, DataFormatError, DomainError, ProtocolError,
                     ShapeError, StealLabError, TrainingDivergedError,
                     TransportError)
from .extraction import (SurrogateSpec, TargetSpec, build_surrogate_set,
                         evaluate_fidelity, train_surrogate, train_target)
from .layers import (ConcreteDropoutLayer, DenseLayer, McDropoutLayer,
                     VariationalDenseLayer, concrete_mask,
                     concrete_regularizer, kl_gaussian)
from .network import Network, UqLoss, load_checkpoint, save_checkpoint, uq_loss
from .oracle import InProcessOracle, OracleMetadata, RemoteOracle, remote_oracle
from .predictive import (ParamSampler, PredictiveResult, mc_predict,
                         predict_labels, prediction_variance)
from .server import OracleServer, serve
from .tensor import (AdamState, GradCheckResult, adam_step, cross_entropy,
                     finite_diff_check, matmul, softmax_rows)
