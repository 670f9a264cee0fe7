"""Tests for the two-head estimator, propensity model, and DR diagnostic."""

import numpy as np
import pytest

from fedsplit import data, model, nn
from fedsplit.errors import (
    ContractViolationError,
    DegenerateLabelsError,
    DimensionError,
)
from fedsplit.metrics import auroc
from fedsplit.nn import derive_rng


def fresh_model(d=4, seed=0):
    return model.init_model(d, derive_rng(seed, "init"))


def test_predict_mu_identical_heads_gives_zero_uplift():
    m = fresh_model()
    m = model.TwoHeadModel(m.trunk, m.head1, m.head1)
    x = np.random.default_rng(0).normal(size=(6, 4))
    mu1, mu0 = model.predict_mu(m, x)
    assert np.array_equal(mu1, mu0)
    assert np.all(model.uplift_score(mu1, mu0) == 0.0)


def test_predict_mu_zero_trunk_gives_head_bias():
    trunk = nn.TrunkParams(
        nn.DenseLayer(np.zeros((nn.HIDDEN_DIM, 3)), np.zeros(nn.HIDDEN_DIM)),
        nn.DenseLayer(np.zeros((nn.CUT_DIM, nn.HIDDEN_DIM)), np.zeros(nn.CUT_DIM)),
    )
    rng = np.random.default_rng(1)
    h1 = nn.HeadParams(rng.normal(size=nn.CUT_DIM), 0.7)
    h0 = nn.HeadParams(rng.normal(size=nn.CUT_DIM), -0.2)
    mu1, mu0 = model.predict_mu(model.TwoHeadModel(trunk, h1, h0), rng.normal(size=(5, 3)))
    assert np.allclose(mu1, nn.sigmoid(0.7))
    assert np.allclose(mu0, nn.sigmoid(-0.2))


def test_predict_mu_matches_composition():
    m = fresh_model(seed=3)
    x = np.random.default_rng(2).normal(size=(8, 4))
    mu1, mu0 = model.predict_mu(m, x)
    z, _ = nn.forward_trunk(m.trunk, x)
    assert np.max(np.abs(mu1 - nn.sigmoid(nn.forward_head(m.head1, z)))) < 1e-12
    assert np.max(np.abs(mu0 - nn.sigmoid(nn.forward_head(m.head0, z)))) < 1e-12


def test_predict_mu_applies_adapter_when_present():
    m = fresh_model(seed=4)
    rng = np.random.default_rng(5)
    adapter = nn.AdapterParams(
        nn.DenseLayer(rng.normal(scale=0.5, size=(nn.CUT_DIM, nn.CUT_DIM)), np.zeros(nn.CUT_DIM)),
        nn.DenseLayer(rng.normal(scale=0.5, size=(nn.CUT_DIM, nn.CUT_DIM)), np.zeros(nn.CUT_DIM)),
    )
    x = rng.normal(size=(4, 4))
    plain1, _ = model.predict_mu(m, x)
    adapted1, _ = model.predict_mu(m.with_adapter(adapter), x)
    assert not np.allclose(plain1, adapted1)


def test_factual_prob_selectors():
    mu1 = np.array([0.7, 0.7])
    mu0 = np.array([0.4, 0.4])
    assert np.array_equal(model.factual_prob(mu1, mu0, np.ones(2)), mu1)
    assert np.array_equal(model.factual_prob(mu1, mu0, np.zeros(2)), mu0)
    p = model.factual_prob(np.array([0.7, 0.7]), np.array([0.4, 0.4]), np.array([1, 0]))
    assert np.allclose(p, [0.7, 0.4])


def test_factual_prob_unused_arm_irrelevant():
    rng = np.random.default_rng(6)
    mu1 = rng.random(10)
    mu0 = rng.random(10)
    t = np.ones(10)
    p = model.factual_prob(mu1, mu0, t)
    p_again = model.factual_prob(mu1, rng.random(10), t)
    assert np.array_equal(p, p_again)


def test_uplift_score_cases():
    assert model.uplift_score(np.array([0.9]), np.array([0.2]))[0] == pytest.approx(0.7)
    a, b = np.random.default_rng(7).random((2, 5))
    assert np.array_equal(model.uplift_score(a, b), -model.uplift_score(b, a))
    with pytest.raises(DimensionError):
        model.uplift_score(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# propensity


def synthetic_for_propensity(propensity_scale, seed=0, n=4000):
    spec = data.synthetic_spec_from_scales(
        n_per_client=n,
        n_clients=1,
        n_features=5,
        client_shift_scale=0.0,
        effect_scale=0.5,
        propensity_scale=propensity_scale,
        baseline_scale=0.5,
        rng=derive_rng(seed, "spec"),
    )
    return data.generate_synthetic(spec, derive_rng(seed, "draw"))


def test_fit_propensity_randomized_concentrates_on_rate():
    table, _ = synthetic_for_propensity(propensity_scale=0.0, seed=1)
    fit = model.fit_propensity(table.features, table.treatment)
    preds = fit.predict(table.features)
    assert abs(preds.mean() - table.treatment.mean()) < 0.02
    assert preds.std() < 0.05  # near-constant under randomization


def test_fit_propensity_confounded_is_discriminative():
    table, _ = synthetic_for_propensity(propensity_scale=2.0, seed=2)
    fit = model.fit_propensity(table.features, table.treatment)
    preds = fit.predict(table.features)
    assert auroc(preds, table.treatment) > 0.75


def test_fit_propensity_clamps_extremes():
    rng = np.random.default_rng(8)
    x = np.concatenate([rng.normal(-30, 1, 50), rng.normal(30, 1, 50)]).reshape(-1, 1)
    t = (x[:, 0] > 0).astype(int)
    fit = model.fit_propensity(x, t)
    preds = fit.predict(np.array([[-1000.0], [1000.0]]))
    assert preds.min() >= model.PROPENSITY_CLAMP
    assert preds.max() <= 1.0 - model.PROPENSITY_CLAMP


def test_fit_propensity_single_arm_rejected():
    with pytest.raises(DegenerateLabelsError):
        model.fit_propensity(np.zeros((10, 1)), np.ones(10, dtype=int))


# ---------------------------------------------------------------------------
# doubly robust diagnostic


def test_dr_zero_residual_reduces_to_difference():
    mu1 = np.array([0.8, 0.6])
    mu0 = np.array([0.5, 0.1])
    t = np.array([1, 0])
    y = model.factual_prob(mu1, mu0, t)  # y equals the factual prediction
    out = model.dr_pseudo_effect(mu1, mu0, np.array([0.3, 0.6]), t, y)
    assert np.allclose(out, mu1 - mu0)


def test_dr_scalar_hand_values():
    # (0.7-0.4) + (1-0.5)/(0.25) * (1-0.7) = 0.3 + 2*0.3 = 0.9
    out = model.dr_pseudo_effect(
        np.array([0.7]), np.array([0.4]), np.array([0.5]), np.array([1]), np.array([1])
    )
    assert out[0] == pytest.approx(0.9)
    # (0.7-0.4) + (0-0.5)/(0.25) * (0-0.4) = 0.3 + (-2)*(-0.4) = 1.1
    out = model.dr_pseudo_effect(
        np.array([0.7]), np.array([0.4]), np.array([0.5]), np.array([0]), np.array([0])
    )
    assert out[0] == pytest.approx(1.1)


def test_dr_rejects_unclamped_propensity():
    with pytest.raises(ContractViolationError):
        model.dr_pseudo_effect(
            np.array([0.5]), np.array([0.5]), np.array([0.0]), np.array([1]), np.array([1])
        )


def test_dr_consistent_with_true_models_on_synthetic():
    # correct outcome and propensity models: mean DR pseudo-effect estimates
    # the mean true effect within Monte Carlo error
    spec = data.synthetic_spec_from_scales(
        n_per_client=10000,
        n_clients=1,
        n_features=5,
        client_shift_scale=0.0,
        effect_scale=1.2,
        propensity_scale=0.7,
        baseline_scale=0.6,
        rng=derive_rng(11, "spec"),
    )
    table, truth = data.generate_synthetic(spec, derive_rng(11, "draw"))
    dr = model.dr_pseudo_effect(
        truth.mu1, truth.mu0, truth.propensity, table.treatment, table.outcome
    )
    se = dr.std() / np.sqrt(dr.size)
    assert abs(dr.mean() - truth.tau.mean()) < 3 * se


def test_tau_bounded_by_construction():
    m = fresh_model(seed=9)
    x = np.random.default_rng(10).normal(size=(50, 4))
    scores = model.compute_scores(m, x, np.random.default_rng(11).integers(0, 2, 50))
    assert np.all(scores.tau >= -1.0)
    assert np.all(scores.tau <= 1.0)
    assert np.all((scores.mu1 > 0) & (scores.mu1 < 1))
