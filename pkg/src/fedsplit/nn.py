"""Dense network primitives: trunk/head forward passes, hand-derived
backpropagation, Adam, and a full-batch logistic-regression trainer.

Everything operates on float64 numpy arrays. There is no autograd; gradients
are derived for the fixed architecture (two ReLU layers into two linear
heads, plus an optional residual adapter block at the cut representation).
Updates are functional: parameter and optimizer values are never mutated in
place, so states can be shared by reference until replaced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolationError, DegenerateLabelsError, DimensionError

HIDDEN_DIM = 64
CUT_DIM = 32

# Clamp applied to probabilities before logarithms in the cross-entropy.
PROB_EPS = 1e-7

# Largest float64 strictly below 1; sigmoid outputs are clamped into
# (0, 1) so downstream code can rely on strict bounds.
_ONE_MINUS = np.nextafter(1.0, 0.0)
_ZERO_PLUS = np.nextafter(0.0, 1.0)


# ---------------------------------------------------------------------------
# deterministic generator streams


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Derive an independent generator from a base seed and a key path.

    String keys are hashed to stable 64-bit integers so streams like
    (seed, "batch", round, client) never collide across purposes.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            digest = hashlib.sha256(key.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:8], "big"))
        else:
            entropy.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class DenseLayer:
    """Affine map parameters; weights are (out, in), bias is (out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("DenseLayer expects 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} output units"
            )

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class TrunkParams:
    """Two-layer ReLU trunk mapping d features to the 32-dim cut output."""

    layer1: DenseLayer
    layer2: DenseLayer

    def __post_init__(self):
        if self.layer1.out_dim != self.layer2.in_dim:
            raise DimensionError("trunk layer widths disagree")
        if self.layer2.out_dim != CUT_DIM:
            raise DimensionError(f"trunk must end in {CUT_DIM} units")

    @property
    def in_dim(self) -> int:
        return self.layer1.in_dim


@dataclass
class HeadParams:
    """Single-logit linear head on the cut representation."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise DimensionError("head weights must be a vector")
        self.bias = float(self.bias)


@dataclass
class AdapterParams:
    """Client-local residual block at the cut: z + W2 relu(W1 z + b1) + b2."""

    layer1: DenseLayer
    layer2: DenseLayer

    def __post_init__(self):
        shapes = (
            self.layer1.in_dim,
            self.layer1.out_dim,
            self.layer2.in_dim,
            self.layer2.out_dim,
        )
        if shapes != (CUT_DIM, CUT_DIM, CUT_DIM, CUT_DIM):
            raise DimensionError(f"adapter layers must be {CUT_DIM}x{CUT_DIM}")


# ---------------------------------------------------------------------------
# param dict helpers (used by the optimizer and by aggregation)


def trunk_to_dict(trunk: TrunkParams) -> dict[str, np.ndarray]:
    return {
        "w1": trunk.layer1.weights,
        "b1": trunk.layer1.bias,
        "w2": trunk.layer2.weights,
        "b2": trunk.layer2.bias,
    }


def dict_to_trunk(params: dict[str, np.ndarray]) -> TrunkParams:
    return TrunkParams(
        layer1=DenseLayer(params["w1"], params["b1"]),
        layer2=DenseLayer(params["w2"], params["b2"]),
    )


def head_to_dict(head: HeadParams) -> dict[str, np.ndarray]:
    return {"w": head.weights, "b": np.float64(head.bias)}


def dict_to_head(params: dict[str, np.ndarray]) -> HeadParams:
    return HeadParams(weights=params["w"], bias=float(params["b"]))


def adapter_to_dict(adapter: AdapterParams) -> dict[str, np.ndarray]:
    return {
        "w1": adapter.layer1.weights,
        "b1": adapter.layer1.bias,
        "w2": adapter.layer2.weights,
        "b2": adapter.layer2.bias,
    }


def dict_to_adapter(params: dict[str, np.ndarray]) -> AdapterParams:
    return AdapterParams(
        layer1=DenseLayer(params["w1"], params["b1"]),
        layer2=DenseLayer(params["w2"], params["b2"]),
    )


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(np.size(v) for v in params.values()))


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_trunk(n_features: int, rng: np.random.Generator) -> TrunkParams:
    return TrunkParams(
        layer1=DenseLayer(glorot_uniform(rng, HIDDEN_DIM, n_features), np.zeros(HIDDEN_DIM)),
        layer2=DenseLayer(glorot_uniform(rng, CUT_DIM, HIDDEN_DIM), np.zeros(CUT_DIM)),
    )


def init_head(rng: np.random.Generator) -> HeadParams:
    return HeadParams(weights=glorot_uniform(rng, 1, CUT_DIM)[0], bias=0.0)


def init_adapter(rng: np.random.Generator) -> AdapterParams:
    # First layer is randomly initialized, second is zero: the block outputs
    # exactly zero at init (residual identity) while gradient still reaches
    # both layers. An all-zero block would sit at a saddle and never train.
    return AdapterParams(
        layer1=DenseLayer(glorot_uniform(rng, CUT_DIM, CUT_DIM), np.zeros(CUT_DIM)),
        layer2=DenseLayer(np.zeros((CUT_DIM, CUT_DIM)), np.zeros(CUT_DIM)),
    )


# ---------------------------------------------------------------------------
# elementary ops


def sigmoid(x):
    """Numerically stable logistic sigmoid, clamped strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = np.clip(out, _ZERO_PLUS, _ONE_MINUS)
    return out if out.ndim else float(out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def bce_loss(y: np.ndarray, p: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    if y.shape != p.shape:
        raise DimensionError("labels and probabilities differ in length")
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def _ensure_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ContractViolationError(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class TrunkCache:
    """Intermediates kept for backprop, tied to the producing trunk arrays."""

    x: np.ndarray
    h1_pre: np.ndarray
    h1: np.ndarray
    h2_pre: np.ndarray
    z: np.ndarray
    w1_ref: np.ndarray
    w2_ref: np.ndarray


def forward_trunk(trunk: TrunkParams, x: np.ndarray) -> tuple[np.ndarray, TrunkCache]:
    """Run the two-layer ReLU trunk on a (B, d) batch.

    Returns the (B, 32) cut representation and the cache needed by
    ``trunk_backward``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("trunk input must be a 2-D batch")
    if x.shape[0] < 1:
        raise DimensionError("trunk input batch is empty")
    if x.shape[1] != trunk.in_dim:
        raise DimensionError(
            f"trunk expects {trunk.in_dim} features, got {x.shape[1]}"
        )
    h1_pre = x @ trunk.layer1.weights.T + trunk.layer1.bias
    h1 = relu(h1_pre)
    h2_pre = h1 @ trunk.layer2.weights.T + trunk.layer2.bias
    z = relu(h2_pre)
    _ensure_finite("trunk output", z)
    cache = TrunkCache(
        x=x,
        h1_pre=h1_pre,
        h1=h1,
        h2_pre=h2_pre,
        z=z,
        w1_ref=trunk.layer1.weights,
        w2_ref=trunk.layer2.weights,
    )
    return z, cache


def forward_head(head: HeadParams, z: np.ndarray) -> np.ndarray:
    """Linear head logits: <weights, z_i> + bias for every row of z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != head.weights.shape[0]:
        raise DimensionError(
            f"head expects (B, {head.weights.shape[0]}) input, got {z.shape}"
        )
    return z @ head.weights + head.bias


@dataclass
class AdapterCache:
    z: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray


def adapter_forward(adapter: AdapterParams, z: np.ndarray) -> tuple[np.ndarray, AdapterCache]:
    """Residual adapter: z + W2 relu(W1 z + b1) + b2."""
    h_pre = z @ adapter.layer1.weights.T + adapter.layer1.bias
    h = relu(h_pre)
    z_tilde = z + h @ adapter.layer2.weights.T + adapter.layer2.bias
    return z_tilde, AdapterCache(z=z, h_pre=h_pre, h=h)


def adapter_backward(
    adapter: AdapterParams, cache: AdapterCache, g_out: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the adapter parameters plus the gradient w.r.t. its input."""
    g_h = (g_out @ adapter.layer2.weights) * (cache.h_pre > 0)
    grads = {
        "w1": g_h.T @ cache.z,
        "b1": g_h.sum(axis=0),
        "w2": g_out.T @ cache.h,
        "b2": g_out.sum(axis=0),
    }
    g_z = g_out + g_h @ adapter.layer1.weights
    return grads, g_z


# ---------------------------------------------------------------------------
# loss backward


@dataclass
class TwoHeadGrads:
    trunk: dict[str, np.ndarray]
    head1: dict[str, np.ndarray]
    head0: dict[str, np.ndarray]
    grad_z: np.ndarray


def head_loss_backward(
    head1: HeadParams,
    head0: HeadParams,
    z_in: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray], np.ndarray]:
    """Loss plus exact gradients of the mean factual cross-entropy.

    Each sample contributes only through the head selected by its treatment
    indicator. Returns (loss, head1 grads, head0 grads, grad wrt z_in); the
    z gradient is what a split server sends back to the client.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    batch = z_in.shape[0]
    mu1 = sigmoid(forward_head(head1, z_in))
    mu0 = sigmoid(forward_head(head0, z_in))
    p = t * mu1 + (1.0 - t) * mu0
    loss = bce_loss(y, p)
    # The clamp inside bce_loss flattens the loss outside [eps, 1-eps]; the
    # gradient there is exactly zero, hence the indicator.
    active = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
    g_logit1 = t * (mu1 - y) * active / batch
    g_logit0 = (1.0 - t) * (mu0 - y) * active / batch
    g_head1 = {"w": z_in.T @ g_logit1, "b": np.float64(g_logit1.sum())}
    g_head0 = {"w": z_in.T @ g_logit0, "b": np.float64(g_logit0.sum())}
    grad_z = np.outer(g_logit1, head1.weights) + np.outer(g_logit0, head0.weights)
    return loss, g_head1, g_head0, grad_z


def trunk_backward(
    trunk: TrunkParams, cache: TrunkCache, grad_z: np.ndarray
) -> dict[str, np.ndarray]:
    """Backpropagate a cut-layer gradient through the trunk."""
    if cache.w1_ref is not trunk.layer1.weights or cache.w2_ref is not trunk.layer2.weights:
        raise ContractViolationError("backprop cache is stale for this trunk")
    if grad_z.shape != cache.z.shape:
        raise DimensionError("grad_z shape does not match cached activations")
    g_h2 = grad_z * (cache.h2_pre > 0)
    g_h1 = (g_h2 @ trunk.layer2.weights) * (cache.h1_pre > 0)
    return {
        "w1": g_h1.T @ cache.x,
        "b1": g_h1.sum(axis=0),
        "w2": g_h2.T @ cache.h1,
        "b2": g_h2.sum(axis=0),
    }


def backprop(
    trunk: TrunkParams,
    head1: HeadParams,
    head0: HeadParams,
    cache: TrunkCache,
    t: np.ndarray,
    y: np.ndarray,
) -> tuple[float, TwoHeadGrads]:
    """Full analytic gradient of the factual loss when heads read the raw cut."""
    loss, g_head1, g_head0, grad_z = head_loss_backward(head1, head0, cache.z, t, y)
    g_trunk = trunk_backward(trunk, cache, grad_z)
    return loss, TwoHeadGrads(trunk=g_trunk, head1=g_head1, head0=g_head0, grad_z=grad_z)


def two_head_loss(
    trunk: TrunkParams,
    head1: HeadParams,
    head0: HeadParams,
    x: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
) -> float:
    """Forward-only factual loss; the finite-difference target in tests."""
    z, _ = forward_trunk(trunk, x)
    mu1 = sigmoid(forward_head(head1, z))
    mu0 = sigmoid(forward_head(head0, z))
    t = np.asarray(t, dtype=np.float64)
    return bce_loss(y, t * mu1 + (1.0 - t) * mu0)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if set(params) != set(grads):
        raise DimensionError("gradient keys do not match parameter keys")
    step = state.step_count + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for key, value in params.items():
        grad = np.asarray(grads[key], dtype=np.float64)
        if np.shape(grad) != np.shape(value):
            raise DimensionError(f"gradient shape mismatch for '{key}'")
        m_prev = state.m.get(key, np.zeros_like(np.asarray(value, dtype=np.float64)))
        v_prev = state.v.get(key, np.zeros_like(np.asarray(value, dtype=np.float64)))
        m = state.beta1 * m_prev + (1.0 - state.beta1) * grad
        v = state.beta2 * v_prev + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        new_params[key] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[key] = m
        new_v[key] = v
    return new_params, replace(state, step_count=step, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# logistic regression (propensity model and membership attacker)


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1e-4
    max_iter: int = 2000
    step_size: float = 0.1
    tol: float = 1e-6


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    converged: bool
    n_iter: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.weights.shape[0]:
            raise DimensionError("feature count does not match fitted model")
        return sigmoid(x @ self.weights + self.bias)


def _logistic_loss(x, y, w, b, l2):
    p = sigmoid(x @ w + b)
    return bce_loss(y, p) + 0.5 * l2 * float(w @ w)


def train_logistic(
    x: np.ndarray, y: np.ndarray, config: LogisticConfig | None = None
) -> LogisticModel:
    """Fit a binary logistic model by full-batch gradient descent.

    The step size halves whenever a step would increase the penalized loss;
    iteration stops once the gradient norm drops below ``config.tol``.
    """
    config = config or LogisticConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionError("expected (n, d) features and (n,) labels")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError("labels must be binary 0/1")
    if classes.size < 2:
        raise DegenerateLabelsError("logistic fit requires both classes present")

    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    step = config.step_size
    loss = _logistic_loss(x, y, w, b, config.l2)
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        p = sigmoid(x @ w + b)
        residual = p - y
        gw = x.T @ residual / n + config.l2 * w
        gb = float(residual.mean())
        grad_norm = float(np.sqrt(gw @ gw + gb * gb))
        if grad_norm < config.tol:
            converged = True
            break
        while True:
            w_next = w - step * gw
            b_next = b - step * gb
            loss_next = _logistic_loss(x, y, w_next, b_next, config.l2)
            if loss_next <= loss or step < 1e-12:
                break
            step *= 0.5
        w, b, loss = w_next, b_next, loss_next
    return LogisticModel(weights=w, bias=b, converged=converged, n_iter=it)
