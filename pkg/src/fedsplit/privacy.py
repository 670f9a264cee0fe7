"""Membership inference audit on cut-layer representations, and the grid
sweep pairing each defense setting with its utility and leakage outcome.

The audit samples member rows from a client's train split and non-member
rows from its test split, computes the representations exactly as they would
be transmitted (adapter and defense included), and fits a logistic attacker.
The held-out attacker AUC is the leakage signal; it measures the tested
attacker only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .collab import DefenseConfig, cut_representations
from .data import ClientDataset
from .errors import AuditInfeasibleError, ValidationError
from .metrics import auroc
from .nn import AdapterParams, TrunkParams, derive_rng, train_logistic

AUDIT_CAVEAT = (
    "MIA AUC is an empirical audit signal for the tested attacker, "
    "not a proof of privacy."
)

# Default per-class sample cap when the config leaves m unset.
DEFAULT_MAX_SAMPLES = 500

_MIN_SAMPLES = 10


@dataclass(frozen=True)
class AuditConfig:
    """Audit settings: per-class sample size, attacker split, seed."""

    m: int | None = None
    attacker_train_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.m is not None and self.m < _MIN_SAMPLES:
            raise ValidationError(f"audit sample size must be >= {_MIN_SAMPLES}")
        if not 0.0 < self.attacker_train_fraction < 1.0:
            raise ValidationError("attacker_train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class AuditResult:
    attack_auc: float
    m: int
    converged: bool


def _standardize(train: np.ndarray, other: np.ndarray):
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), 1e-8)
    return (train - mean) / std, (other - mean) / std


def mia_audit(
    trunk: TrunkParams,
    client: ClientDataset,
    config: AuditConfig | None = None,
    adapter: AdapterParams | None = None,
    defense: DefenseConfig | None = None,
) -> AuditResult:
    """Audit one client's leakage through its transmitted representations.

    Read-only: neither the trunk nor the client data is modified. Raises
    AuditInfeasibleError when the member or non-member pool is too small.
    """
    config = config or AuditConfig()
    members = client.x_train
    nonmembers = client.x_test
    pool = min(members.shape[0], nonmembers.shape[0])
    m = config.m if config.m is not None else min(DEFAULT_MAX_SAMPLES, pool)
    if m < _MIN_SAMPLES or pool < m:
        raise AuditInfeasibleError(
            f"client '{client.client_id}': pools ({members.shape[0]} member, "
            f"{nonmembers.shape[0]} non-member) cannot support m={m}"
        )
    rng = derive_rng(config.seed, "audit", client.client_id)
    mem_rows = members[rng.choice(members.shape[0], size=m, replace=False)]
    non_rows = nonmembers[rng.choice(nonmembers.shape[0], size=m, replace=False)]
    z_mem = cut_representations(trunk, mem_rows, adapter=adapter, defense=defense, rng=rng)
    z_non = cut_representations(trunk, non_rows, adapter=adapter, defense=defense, rng=rng)

    # Stratified attacker split: the same train fraction of each class.
    n_fit = int(round(config.attacker_train_fraction * m))
    n_fit = min(max(n_fit, 1), m - 1)
    perm_mem = rng.permutation(m)
    perm_non = rng.permutation(m)
    z_fit = np.vstack([z_mem[perm_mem[:n_fit]], z_non[perm_non[:n_fit]]])
    z_eval = np.vstack([z_mem[perm_mem[n_fit:]], z_non[perm_non[n_fit:]]])
    s_fit = np.concatenate([np.ones(n_fit), np.zeros(n_fit)])
    s_eval = np.concatenate([np.ones(m - n_fit), np.zeros(m - n_fit)])

    z_fit, z_eval = _standardize(z_fit, z_eval)
    attacker = train_logistic(z_fit, s_fit)
    scores = attacker.predict_proba(z_eval)
    return AuditResult(
        attack_auc=auroc(scores, s_eval.astype(np.int64)),
        m=m,
        converged=attacker.converged,
    )


# ---------------------------------------------------------------------------
# privacy-utility sweep


@dataclass(frozen=True)
class SweepPoint:
    noise_sigma: float
    clip_norm: float
    seed: int
    auuc: float
    mia_auc: float


def privacy_utility_sweep(
    run_point: Callable[[DefenseConfig, int], tuple[float, float]],
    sigmas: Sequence[float],
    clip_norms: Sequence[float],
    seeds: Sequence[int],
) -> list[SweepPoint]:
    """Run one full train+evaluate+audit cycle per defense grid point.

    ``run_point(defense, seed)`` must return (auuc, mia_auc) for a complete
    cycle; the (sigma=0, clip=inf) point is exactly the undefended run.
    """
    if not sigmas or not clip_norms or not seeds:
        raise ValidationError("sweep grids and seed list must be non-empty")
    points = []
    for clip_norm in clip_norms:
        for sigma in sigmas:
            defense = DefenseConfig(clip_norm=float(clip_norm), noise_sigma=float(sigma))
            for seed in seeds:
                auuc, mia = run_point(defense, int(seed))
                points.append(
                    SweepPoint(
                        noise_sigma=float(sigma),
                        clip_norm=float(clip_norm),
                        seed=int(seed),
                        auuc=float(auuc),
                        mia_auc=float(mia),
                    )
                )
    return points


def sweep_means(points: Sequence[SweepPoint]) -> list[SweepPoint]:
    """Per-(sigma, clip) means across seeds, returned with seed = -1."""
    grouped: dict[tuple[float, float], list[SweepPoint]] = {}
    for p in points:
        grouped.setdefault((p.noise_sigma, p.clip_norm), []).append(p)
    out = []
    for (sigma, clip_norm), group in grouped.items():
        out.append(
            SweepPoint(
                noise_sigma=sigma,
                clip_norm=clip_norm,
                seed=-1,
                auuc=float(np.mean([p.auuc for p in group])),
                mia_auc=float(np.mean([p.mia_auc for p in group])),
            )
        )
    return out
