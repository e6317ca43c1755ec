"""Layer zoo: deterministic dense layers plus the three stochastic families
surrogates are assembled from (MC dropout, concrete dropout, variational
dense), each with forward/backward pairs and its training-time loss term.

Conventions shared by all layers:

* ``forward(x, rng)`` consumes a single parameter draw and caches what
  ``backward`` needs; stochastic layers resample on every call, training and
  inference alike.
* ``sample_noise(rng, m)`` draws the per-sample noise for ``m`` Monte Carlo
  passes in one stacked array whose row ``i`` is exactly what pass ``i`` of a
  sequential loop would have drawn (numpy Generators fill row-major).
* ``forward_multi(x, noise)`` evaluates all stacked samples at once. x may
  still be a plain (rows, features) matrix: deterministic layers pass it
  through unchanged and the first stochastic layer broadcasts it against its
  (m, ...) noise, so a shared deterministic trunk is computed only once.
* Dropout-style masks keep a unit iff its uniform draw u >= p.
"""

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import he_uniform, sigmoid, sigmoid_scalar, softplus

ACTIVATIONS = ("relu", "identity")

# Gal-style concrete-dropout regularizer scales; the temperature default
# matches the usual relaxation setting.
CONCRETE_W_SCALE = 1e-4
CONCRETE_D_SCALE = 1e-3
CONCRETE_TEMPERATURE = 0.1
CONCRETE_U_EPS = 1e-12


class Param:
    """A named trainable array with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def _check_activation(activation):
    if activation not in ACTIVATIONS:
        raise DomainError(f"unknown activation {activation!r}")


class DenseLayer:
    """Affine map with an elementwise activation: y = act(x W^T + b)."""

    stochastic = False

    def __init__(self, w, b, activation="relu", name="dense"):
        _check_activation(activation)
        self.w = Param(f"{name}.W", w)
        self.b = Param(f"{name}.b", b)
        if self.w.value.ndim != 2 or self.b.value.shape != (self.w.value.shape[0],):
            raise ShapeError("DenseLayer: W must be (out, in), b must be (out,)")
        self.activation = activation
        self._relu = activation == "relu"
        self.name = name
        self._cache = None

    @classmethod
    def init(cls, rng, in_dim, out_dim, activation="relu", name="dense"):
        return cls(he_uniform(rng, out_dim, in_dim), np.zeros(out_dim),
                   activation, name)

    @property
    def in_dim(self):
        return self.w.value.shape[1]

    @property
    def out_dim(self):
        return self.w.value.shape[0]

    def params(self):
        return [self.w, self.b]

    def forward(self, x, rng=None):
        z = x @ self.w.value.T + self.b.value
        self._cache = (x, z)
        return np.maximum(z, 0.0) if self._relu else z

    def backward(self, dout):
        x, z = self._cache
        dz = dout * (z > 0) if self._relu else dout
        self.w.grad += dz.T @ x
        self.b.grad += dz.sum(axis=0)
        return dz @ self.w.value

    def sample_noise(self, rng, m):
        return None

    def forward_multi(self, x, noise):
        z = x @ self.w.value.T + self.b.value
        return np.maximum(z, 0.0) if self._relu else z

    def reg_loss(self, n_data):
        return 0.0

    def add_reg_grads(self, weight, n_data):
        pass

    def spec(self):
        return {"type": "dense", "in": self.in_dim, "out": self.out_dim,
                "activation": self.activation, "name": self.name}


class McDropoutLayer:
    """Inverted Bernoulli dropout on the inner dense layer's input units.

    One mask per forward pass, shared across the batch rows: a mask is one
    parameter draw, i.e. one subnetwork. The mask is resampled at train and
    inference time alike.
    """

    def __init__(self, rate, inner, name="mcd"):
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.inner = inner
        self.name = name
        self._cache = None

    @property
    def stochastic(self):
        return self.rate > 0.0

    @property
    def in_dim(self):
        return self.inner.in_dim

    @property
    def out_dim(self):
        return self.inner.out_dim

    def params(self):
        return self.inner.params()

    def _draw_mask(self, rng):
        if rng is None:
            if self.rate == 0.0:
                return np.ones(self.in_dim)
            raise DomainError("stochastic forward requires an rng")
        u = rng.random(self.in_dim)
        return (u >= self.rate) / (1.0 - self.rate)

    def forward(self, x, rng=None):
        mask = self._draw_mask(rng)
        self._cache = mask
        return self.inner.forward(x * mask, rng)

    def backward(self, dout):
        dxm = self.inner.backward(dout)
        return dxm * self._cache

    def sample_noise(self, rng, m):
        u = rng.random((m, self.in_dim))
        return (u >= self.rate) / (1.0 - self.rate)

    def forward_multi(self, x, noise):
        return self.inner.forward_multi(x * noise[:, None, :], None)

    def reg_loss(self, n_data):
        return 0.0

    def add_reg_grads(self, weight, n_data):
        pass

    def spec(self):
        return {"type": "mc_dropout", "rate": self.rate, "name": self.name,
                "inner": self.inner.spec()}


def mc_dropout_forward(layer, x, rng):
    """Functional alias for one stochastic pass through an McDropoutLayer."""
    return layer.forward(x, rng)


def concrete_mask(p, t, u):
    """Relaxed Bernoulli drop value z in (0, 1).

    z = sigmoid((log p - log(1-p) + log u - log(1-u)) / t); the layer
    multiplies each unit by (1 - z)/(1 - p).
    """
    if not 0.0 < p < 1.0 or not 0.0 < u < 1.0:
        raise DomainError("concrete_mask: p and u must lie strictly in (0, 1)")
    if t <= 0.0:
        raise DomainError("concrete_mask: temperature must be positive")
    logits = np.log(p) - np.log1p(-p) + np.log(u) - np.log1p(-u)
    return sigmoid_scalar(logits / t)


class ConcreteDropoutLayer:
    """Dropout whose rate is learned through the concrete relaxation.

    The learnable parameter is logit_p (so p = sigmoid(logit_p) stays in
    (0, 1) by construction); the temperature is fixed during training.
    """

    stochastic = True

    def __init__(self, inner, init_p=0.1, temperature=CONCRETE_TEMPERATURE,
                 w_scale=CONCRETE_W_SCALE, d_scale=CONCRETE_D_SCALE, name="cd"):
        if not 0.0 < init_p < 1.0:
            raise DomainError("init_p must lie strictly in (0, 1)")
        if temperature <= 0.0:
            raise DomainError("temperature must be positive")
        self.logit_p = Param(f"{name}.logit_p",
                             np.array(np.log(init_p) - np.log1p(-init_p)))
        self.temperature = float(temperature)
        self.w_scale = float(w_scale)
        self.d_scale = float(d_scale)
        self.inner = inner
        self.name = name
        self._cache = None

    @property
    def p(self):
        return sigmoid_scalar(self.logit_p.value)

    @property
    def in_dim(self):
        return self.inner.in_dim

    @property
    def out_dim(self):
        return self.inner.out_dim

    def params(self):
        return [self.logit_p] + self.inner.params()

    def _keep_multiplier(self, u):
        # log p - log(1-p) is exactly logit_p, so the relaxation reads
        # z = sigmoid((logit_p + log u - log(1-u)) / t).
        lp = float(self.logit_p.value)
        z = sigmoid((lp + np.log(u) - np.log1p(-u)) / self.temperature)
        keep = (1.0 - z) / (1.0 - self.p)
        return z, keep

    def forward(self, x, rng):
        if rng is None:
            raise DomainError("concrete dropout forward requires an rng")
        u = np.clip(rng.random(self.in_dim), CONCRETE_U_EPS, 1.0 - CONCRETE_U_EPS)
        z, keep = self._keep_multiplier(u)
        self._cache = (x, z, keep)
        return self.inner.forward(x * keep, rng)

    def backward(self, dout):
        x, z, keep = self._cache
        p = self.p
        dxm = self.inner.backward(dout)
        dkeep = (dxm * x).sum(axis=0)
        # keep_j = (1 - z_j)/(1 - p): dz/dlogit = z(1-z)/t, dp/dlogit = p(1-p).
        dz = dkeep * (-1.0 / (1.0 - p))
        d_logit = float(np.sum(dz * z * (1.0 - z))) / self.temperature
        d_logit += float(np.sum(dkeep * (1.0 - z))) / (1.0 - p) ** 2 * p * (1.0 - p)
        self.logit_p.grad += d_logit
        return dxm * keep

    def sample_noise(self, rng, m):
        u = np.clip(rng.random((m, self.in_dim)), CONCRETE_U_EPS,
                    1.0 - CONCRETE_U_EPS)
        _, keep = self._keep_multiplier(u)
        return keep

    def forward_multi(self, x, noise):
        return self.inner.forward_multi(x * noise[:, None, :], None)

    def reg_loss(self, n_data):
        return concrete_regularizer(self, n_data)

    def add_reg_grads(self, weight, n_data):
        if n_data <= 0:
            raise DomainError("n_data must be positive")
        p = self.p
        w = self.inner.w
        w_sq = float(np.sum(w.value * w.value))
        w.grad += weight * 2.0 * self.w_scale * w.value / ((1.0 - p) * n_data)
        d_reg_dp = (self.w_scale * w_sq / ((1.0 - p) ** 2 * n_data)
                    + self.d_scale * self.in_dim
                    * (np.log(p) - np.log1p(-p)) / n_data)
        self.logit_p.grad += weight * d_reg_dp * p * (1.0 - p)

    def spec(self):
        return {"type": "concrete_dropout", "temperature": self.temperature,
                "w_scale": self.w_scale, "d_scale": self.d_scale,
                "name": self.name, "inner": self.inner.spec()}


def concrete_regularizer(layer, n_data):
    """Weight-norm plus mask-entropy penalty for a ConcreteDropoutLayer:

    w_scale*||W||^2 / ((1-p)*n) + d_scale*D_in*(p log p + (1-p) log(1-p)) / n
    """
    if n_data <= 0:
        raise DomainError("n_data must be positive")
    p = layer.p
    w_sq = float(np.sum(layer.inner.w.value ** 2))
    weight_term = layer.w_scale * w_sq / ((1.0 - p) * n_data)
    entropy_term = (layer.d_scale * layer.in_dim
                    * (p * np.log(p) + (1.0 - p) * np.log1p(-p)) / n_data)
    return float(weight_term + entropy_term)


class VariationalDenseLayer:
    """Mean-field Gaussian dense layer trained by the reparameterization trick.

    Each forward pass draws eps ~ N(0, 1) per parameter and uses
    theta = mu + softplus(rho) * eps, one posterior sample per call; the KL
    to the N(0, prior_std^2) prior is available as the layer's reg term.
    """

    stochastic = True

    def __init__(self, mu_w, rho_w, mu_b, rho_b, activation="relu",
                 prior_std=1.0, name="vdense"):
        _check_activation(activation)
        if prior_std <= 0:
            raise DomainError("prior_std must be positive")
        self.mu_w = Param(f"{name}.mu_W", mu_w)
        self.rho_w = Param(f"{name}.rho_W", rho_w)
        self.mu_b = Param(f"{name}.mu_b", mu_b)
        self.rho_b = Param(f"{name}.rho_b", rho_b)
        self.activation = activation
        self._relu = activation == "relu"
        self.prior_std = float(prior_std)
        self.name = name
        self._cache = None

    @classmethod
    def init(cls, rng, in_dim, out_dim, activation="relu", prior_std=1.0,
             sigma_init=0.05, name="vdense"):
        # rho chosen so softplus(rho) == sigma_init.
        rho0 = float(np.log(np.expm1(sigma_init)))
        return cls(he_uniform(rng, out_dim, in_dim),
                   np.full((out_dim, in_dim), rho0),
                   np.zeros(out_dim), np.full(out_dim, rho0),
                   activation, prior_std, name)

    @property
    def in_dim(self):
        return self.mu_w.value.shape[1]

    @property
    def out_dim(self):
        return self.mu_w.value.shape[0]

    def params(self):
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]

    def forward(self, x, rng):
        if rng is None:
            raise DomainError("variational forward requires an rng")
        eps_w = rng.standard_normal(self.mu_w.value.shape)
        eps_b = rng.standard_normal(self.mu_b.value.shape)
        sig_w = softplus(self.rho_w.value)
        sig_b = softplus(self.rho_b.value)
        w = self.mu_w.value + sig_w * eps_w
        b = self.mu_b.value + sig_b * eps_b
        z = x @ w.T + b
        self._cache = (x, z, w, eps_w, eps_b)
        return np.maximum(z, 0.0) if self._relu else z

    def backward(self, dout):
        x, z, w, eps_w, eps_b = self._cache
        dz = dout * (z > 0) if self._relu else dout
        dw = dz.T @ x
        db = dz.sum(axis=0)
        self.mu_w.grad += dw
        self.rho_w.grad += dw * eps_w * sigmoid(self.rho_w.value)
        self.mu_b.grad += db
        self.rho_b.grad += db * eps_b * sigmoid(self.rho_b.value)
        return dz @ w

    def sample_noise(self, rng, m):
        # One flat row per sample (weights then bias) keeps row i identical
        # no matter how samples are grouped into chunks.
        return rng.standard_normal((m, self.mu_w.value.size + self.out_dim))

    def forward_multi(self, x, noise):
        m = noise.shape[0]
        n_w = self.mu_w.value.size
        eps_w = noise[:, :n_w].reshape((m,) + self.mu_w.value.shape)
        eps_b = noise[:, n_w:]
        w = self.mu_w.value + softplus(self.rho_w.value) * eps_w  # (m, out, in)
        b = self.mu_b.value + softplus(self.rho_b.value) * eps_b  # (m, out)
        z = x @ np.swapaxes(w, 1, 2) + b[:, None, :]
        return np.maximum(z, 0.0) if self._relu else z

    def kl(self):
        """Total KL(q || prior) over every weight and bias, in nats."""
        total = 0.0
        for mu, rho in ((self.mu_w, self.rho_w), (self.mu_b, self.rho_b)):
            sig = softplus(rho.value)
            total += float(np.sum(np.log(self.prior_std / sig)
                                  + (sig ** 2 + mu.value ** 2)
                                  / (2.0 * self.prior_std ** 2) - 0.5))
        return total

    def reg_loss(self, n_data):
        return self.kl()

    def add_reg_grads(self, weight, n_data):
        pv = self.prior_std ** 2
        for mu, rho in ((self.mu_w, self.rho_w), (self.mu_b, self.rho_b)):
            sig = softplus(rho.value)
            mu.grad += weight * mu.value / pv
            rho.grad += weight * (-1.0 / sig + sig / pv) * sigmoid(rho.value)

    def spec(self):
        return {"type": "variational_dense", "in": self.in_dim,
                "out": self.out_dim, "activation": self.activation,
                "prior_std": self.prior_std, "name": self.name}


def variational_forward(layer, x, rng):
    """Functional alias for one reparameterized pass through a variational layer."""
    return layer.forward(x, rng)


def kl_gaussian(mu, sigma, prior_std):
    """KL(N(mu, sigma^2) || N(0, prior_std^2)) in nats, scalar closed form."""
    if sigma <= 0 or prior_std <= 0:
        raise DomainError("kl_gaussian: sigma and prior_std must be positive")
    return float(np.log(prior_std / sigma)
                 + (sigma ** 2 + mu ** 2) / (2.0 * prior_std ** 2) - 0.5)


def relu_margin(layer):
    """Smallest |pre-activation| cached by the last forward pass, inf for
    activation-free layers. Central finite differences are invalid within
    eps of a ReLU kink, so gradient checks resample points below a guard."""
    inner = getattr(layer, "inner", None)
    if inner is not None:
        return relu_margin(inner)
    if getattr(layer, "activation", "identity") != "relu" or layer._cache is None:
        return float("inf")
    z = layer._cache[1]
    return float(np.abs(z).min())
