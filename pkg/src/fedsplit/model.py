"""Two-head uplift estimator, propensity model, and the doubly robust
pseudo-effect diagnostic.

The doubly robust values are a debugging signal only; nothing in training
consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DegenerateLabelsError, DimensionError
from .nn import (
    AdapterParams,
    HeadParams,
    LogisticConfig,
    TrunkParams,
    adapter_forward,
    derive_rng,
    forward_head,
    forward_trunk,
    init_head,
    init_trunk,
    sigmoid,
    train_logistic,
)

# Propensity predictions are clamped away from {0, 1} before any inverse
# weighting; positivity trimming uses its own, separately configured alpha.
PROPENSITY_CLAMP = 0.01


@dataclass
class TwoHeadModel:
    """Shared trunk with treated/control heads and an optional local adapter."""

    trunk: TrunkParams
    head1: HeadParams
    head0: HeadParams
    adapter: AdapterParams | None = None

    def with_adapter(self, adapter: AdapterParams | None) -> "TwoHeadModel":
        return TwoHeadModel(self.trunk, self.head1, self.head0, adapter)


def init_model(n_features: int, rng: np.random.Generator) -> TwoHeadModel:
    """Fresh model; draw order is fixed so a seed pins every parameter."""
    trunk = init_trunk(n_features, rng)
    head1 = init_head(rng)
    head0 = init_head(rng)
    return TwoHeadModel(trunk=trunk, head1=head1, head0=head0)


def model_rng(seed: int) -> np.random.Generator:
    return derive_rng(seed, "init")


def predict_mu(model: TwoHeadModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate both heads on the shared cut representation.

    The adapter, when present, is applied before the heads, matching how a
    personalized client scores its own rows.
    """
    z, _ = forward_trunk(model.trunk, x)
    if model.adapter is not None:
        z, _ = adapter_forward(model.adapter, z)
    mu1 = sigmoid(forward_head(model.head1, z))
    mu0 = sigmoid(forward_head(model.head0, z))
    return mu1, mu0


def factual_prob(mu1: np.ndarray, mu0: np.ndarray, t: np.ndarray) -> np.ndarray:
    """p_i = t_i mu1_i + (1 - t_i) mu0_i."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if not (mu1.shape == mu0.shape == t.shape):
        raise DimensionError("mu1, mu0, t must share one length")
    return t * mu1 + (1.0 - t) * mu0


def uplift_score(mu1: np.ndarray, mu0: np.ndarray) -> np.ndarray:
    """Elementwise treated-minus-control probability difference."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    if mu1.shape != mu0.shape:
        raise DimensionError("mu1 and mu0 must share one length")
    return mu1 - mu0


@dataclass
class UpliftScores:
    mu1: np.ndarray
    mu0: np.ndarray
    tau: np.ndarray
    p_factual: np.ndarray


def compute_scores(model: TwoHeadModel, x: np.ndarray, t: np.ndarray) -> UpliftScores:
    mu1, mu0 = predict_mu(model, x)
    return UpliftScores(
        mu1=mu1,
        mu0=mu0,
        tau=uplift_score(mu1, mu0),
        p_factual=factual_prob(mu1, mu0, t),
    )


# ---------------------------------------------------------------------------
# propensity


@dataclass
class PropensityModel:
    weights: np.ndarray
    bias: float
    clamp: float = PROPENSITY_CLAMP
    converged: bool = True

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        raw = sigmoid(x @ self.weights + self.bias)
        return np.clip(raw, self.clamp, 1.0 - self.clamp)


def fit_propensity(
    x_train: np.ndarray,
    t_train: np.ndarray,
    config: LogisticConfig | None = None,
) -> PropensityModel:
    """Logistic treatment model on the training split."""
    t_train = np.asarray(t_train)
    if np.unique(t_train).size < 2:
        raise DegenerateLabelsError("propensity fit needs both treatment arms in train")
    fit = train_logistic(x_train, t_train, config)
    return PropensityModel(weights=fit.weights, bias=fit.bias, converged=fit.converged)


# ---------------------------------------------------------------------------
# doubly robust diagnostic


def dr_pseudo_effect(
    mu1: np.ndarray,
    mu0: np.ndarray,
    e: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """Per-sample doubly robust pseudo-effect.

    tau_i = (mu1_i - mu0_i) + (t_i - e_i) / (e_i (1 - e_i)) * (y_i - mu_{t_i,i})
    where mu_{t_i} is the factual prediction. Diagnostic output only.
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (mu1.shape == mu0.shape == e.shape == t.shape == y.shape):
        raise DimensionError("all inputs must share one length")
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ContractViolationError("propensities must be clamped inside (0, 1)")
    mu_fact = factual_prob(mu1, mu0, t)
    return (mu1 - mu0) + (t - e) / (e * (1.0 - e)) * (y - mu_fact)
