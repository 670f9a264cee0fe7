"""Tests for the membership audit and the privacy-utility sweep."""

import math

import numpy as np
import pytest

from fedsplit import collab, data, nn, privacy
from fedsplit.errors import AuditInfeasibleError, ValidationError
from fedsplit.nn import derive_rng


def client_from_pools(members, nonmembers, client_id="a"):
    d = members.shape[1]
    empty = np.zeros((0, d))
    none = np.zeros(0, dtype=int)
    return data.ClientDataset(
        client_id=client_id,
        x_train=members,
        t_train=np.zeros(members.shape[0], dtype=int),
        y_train=np.zeros(members.shape[0], dtype=int),
        x_valid=empty,
        t_valid=none,
        y_valid=none,
        x_test=nonmembers,
        t_test=np.zeros(nonmembers.shape[0], dtype=int),
        y_test=np.zeros(nonmembers.shape[0], dtype=int),
        train_rows=np.arange(members.shape[0]),
        valid_rows=none,
        test_rows=np.arange(nonmembers.shape[0]),
    )


def test_null_calibration_near_chance():
    # untrained trunk, both pools from one distribution: chance-level AUC
    aucs = []
    for seed in range(10):
        rng = derive_rng(seed, "null")
        members = rng.standard_normal((300, 6))
        nonmembers = rng.standard_normal((300, 6))
        trunk = nn.init_trunk(6, derive_rng(seed, "trunk"))
        result = privacy.mia_audit(
            trunk,
            client_from_pools(members, nonmembers),
            privacy.AuditConfig(seed=seed),
        )
        aucs.append(result.attack_auc)
        assert 0.30 <= result.attack_auc <= 0.70
    assert 0.45 <= float(np.mean(aucs)) <= 0.55


def test_disjoint_support_pools_detected():
    rng = derive_rng(0, "sep")
    members = rng.uniform(1.0, 2.0, size=(200, 6))
    nonmembers = rng.uniform(-2.0, -1.0, size=(200, 6))
    trunk = nn.init_trunk(6, derive_rng(0, "trunk"))
    result = privacy.mia_audit(
        trunk, client_from_pools(members, nonmembers), privacy.AuditConfig(seed=0)
    )
    assert result.attack_auc >= 0.95


def test_audit_is_read_only():
    rng = derive_rng(1, "ro")
    members = rng.standard_normal((100, 4))
    nonmembers = rng.standard_normal((100, 4))
    trunk = nn.init_trunk(4, derive_rng(1, "trunk"))
    before = {k: v.copy() for k, v in nn.trunk_to_dict(trunk).items()}
    mem_copy = members.copy()
    privacy.mia_audit(trunk, client_from_pools(members, nonmembers), privacy.AuditConfig(seed=1))
    after = nn.trunk_to_dict(trunk)
    for key in before:
        assert np.array_equal(before[key], after[key])
    assert np.array_equal(members, mem_copy)


def test_label_permutation_control():
    # mixing the two pools destroys the membership signal even for a trunk
    # that would otherwise leak
    rng = derive_rng(2, "perm")
    members = rng.uniform(1.0, 2.0, size=(200, 4))
    nonmembers = rng.uniform(-2.0, -1.0, size=(200, 4))
    combined = np.vstack([members, nonmembers])
    shuffled = combined[rng.permutation(combined.shape[0])]
    trunk = nn.init_trunk(4, derive_rng(2, "trunk"))
    result = privacy.mia_audit(
        trunk,
        client_from_pools(shuffled[:200], shuffled[200:]),
        privacy.AuditConfig(seed=2),
    )
    assert 0.4 <= result.attack_auc <= 0.6


def test_audit_uses_defended_representations():
    rng = derive_rng(3, "def")
    members = rng.uniform(1.0, 2.0, size=(150, 4))
    nonmembers = rng.uniform(-2.0, -1.0, size=(150, 4))
    trunk = nn.init_trunk(4, derive_rng(3, "trunk"))
    client = client_from_pools(members, nonmembers)
    raw = privacy.mia_audit(trunk, client, privacy.AuditConfig(seed=3))
    noisy = privacy.mia_audit(
        trunk,
        client,
        privacy.AuditConfig(seed=3),
        defense=collab.DefenseConfig(clip_norm=1.0, noise_sigma=2.0),
    )
    assert noisy.attack_auc < raw.attack_auc


def test_audit_m_default_and_pool_errors():
    rng = derive_rng(4, "m")
    members = rng.standard_normal((40, 3))
    nonmembers = rng.standard_normal((25, 3))
    trunk = nn.init_trunk(3, derive_rng(4, "trunk"))
    result = privacy.mia_audit(trunk, client_from_pools(members, nonmembers))
    assert result.m == 25  # min(500, pools)

    tiny = client_from_pools(members[:5], nonmembers[:5])
    with pytest.raises(AuditInfeasibleError):
        privacy.mia_audit(trunk, tiny)
    with pytest.raises(AuditInfeasibleError):
        privacy.mia_audit(trunk, client_from_pools(members, nonmembers), privacy.AuditConfig(m=30))


def test_audit_config_validation():
    with pytest.raises(ValidationError):
        privacy.AuditConfig(m=5)
    with pytest.raises(ValidationError):
        privacy.AuditConfig(attacker_train_fraction=1.0)


def test_audit_auc_in_unit_interval_and_deterministic():
    rng = derive_rng(5, "det")
    members = rng.standard_normal((60, 3))
    nonmembers = rng.standard_normal((60, 3))
    trunk = nn.init_trunk(3, derive_rng(5, "trunk"))
    client = client_from_pools(members, nonmembers)
    a = privacy.mia_audit(trunk, client, privacy.AuditConfig(seed=9))
    b = privacy.mia_audit(trunk, client, privacy.AuditConfig(seed=9))
    assert a == b
    assert 0.0 <= a.attack_auc <= 1.0


# ---------------------------------------------------------------------------
# sweep


def test_sweep_cardinality_and_defense_off_identity():
    calls = []

    def run_point(defense, seed):
        calls.append((defense, seed))
        if defense.is_noop():
            return (0.123, 0.5)  # the undefended run's exact numbers
        return (0.1 - defense.noise_sigma, 0.5 - 0.1 * defense.noise_sigma)

    points = privacy.privacy_utility_sweep(
        run_point, sigmas=[0.0, 0.05, 0.5], clip_norms=[math.inf, 1.0], seeds=[0, 1]
    )
    assert len(points) == 3 * 2 * 2
    undefended = [
        p for p in points if p.noise_sigma == 0.0 and math.isinf(p.clip_norm)
    ]
    assert len(undefended) == 2
    assert all(p.auuc == 0.123 and p.mia_auc == 0.5 for p in undefended)
    means = privacy.sweep_means(points)
    assert len(means) == 6
    assert all(p.seed == -1 for p in means)


def test_sweep_rejects_empty_grids():
    with pytest.raises(ValidationError):
        privacy.privacy_utility_sweep(lambda d, s: (0, 0), [], [1.0], [0])


def test_caveat_string_is_exported():
    assert "not a proof of privacy" in privacy.AUDIT_CAVEAT
