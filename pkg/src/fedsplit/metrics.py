"""Evaluation: AUROC, positivity trimming, uplift curves and their area,
random-ranking baseline, and per-client summaries.

Curve conventions
-----------------
Rows are ranked by predicted uplift, descending, with ties kept together: a
targeting prefix always ends at a score boundary, so identical scores give
identical curves no matter how the rows were ordered. Prefixes that miss a
treatment arm are undefined and masked; the area is the trapezoid integral
over defined points divided by the defined q-range, which makes a flat curve
integrate exactly to its height. The area may legitimately be negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClientDataset
from .errors import (
    DimensionError,
    EvaluationInfeasibleError,
    UndefinedMetricError,
    ValidationError,
)
from .model import TwoHeadModel, compute_scores


def default_grid(points: int = 100) -> np.ndarray:
    """Targeting fractions 1/points, 2/points, ..., 1."""
    if points < 1:
        raise ValidationError("grid needs at least one point")
    return np.arange(1, points + 1, dtype=np.float64) / points


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative,
    counting ties as one half (mid-rank convention)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both label classes")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    mean_rank = cum - (counts - 1) / 2.0
    ranks = mean_rank[inverse]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# positivity trimming


def trim_positivity(e: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """Keep rows with alpha <= e <= 1 - alpha; returns (kept indices, trim rate)."""
    e = np.asarray(e, dtype=np.float64)
    if not 0.0 <= alpha < 0.5:
        raise ValidationError(f"alpha must lie in [0, 0.5), got {alpha}")
    keep = np.flatnonzero((e >= alpha) & (e <= 1.0 - alpha))
    if keep.size == 0:
        raise EvaluationInfeasibleError("positivity trimming removed every row")
    return keep, 1.0 - keep.size / e.size


def trim_quantile(e: np.ndarray, fraction: float) -> tuple[np.ndarray, float]:
    """Trim roughly `fraction` of rows with the most extreme propensities,
    half from each tail."""
    e = np.asarray(e, dtype=np.float64)
    if not 0.0 <= fraction < 1.0:
        raise ValidationError(f"trim fraction must lie in [0, 1), got {fraction}")
    lo = np.quantile(e, fraction / 2.0)
    hi = np.quantile(e, 1.0 - fraction / 2.0)
    keep = np.flatnonzero((e >= lo) & (e <= hi))
    if keep.size == 0:
        raise EvaluationInfeasibleError("quantile trimming removed every row")
    return keep, 1.0 - keep.size / e.size


# ---------------------------------------------------------------------------
# uplift curve


@dataclass
class UpliftCurve:
    """Uplift values over a targeting grid, with undefined points masked."""

    grid: np.ndarray
    values: np.ndarray
    defined: np.ndarray
    auuc: float
    end_uplift: float


def _trapezoid(u: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(0.5 * (u[1:] + u[:-1]) * (q[1:] - q[:-1])))


def uplift_curve(
    tau: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    grid: np.ndarray | None = None,
) -> UpliftCurve:
    """Treated-minus-control outcome gap within each top-q prefix.

    u(q) = mean(y | t=1, prefix) - mean(y | t=0, prefix) where the prefix is
    the smallest tie-complete head of the descending-tau ranking covering at
    least ceil(q n) rows.
    """
    tau = np.asarray(tau, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if not (tau.shape == t.shape == y.shape) or tau.ndim != 1:
        raise DimensionError("tau, t, y must be equal-length vectors")
    n = tau.size
    if n == 0:
        raise EvaluationInfeasibleError("empty evaluation set")
    if t.sum() == 0 or t.sum() == n:
        raise EvaluationInfeasibleError("evaluation set is missing a treatment arm")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("grid must be a non-empty vector")
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0 or grid[-1] != 1.0:
        raise ValidationError("grid must be strictly increasing within (0, 1] ending at 1")

    order = np.argsort(-tau, kind="stable")
    neg_sorted = -tau[order]
    t_s = t[order].astype(np.float64)
    y_s = y[order].astype(np.float64)
    cum_t = np.cumsum(t_s)
    cum_ty = np.cumsum(t_s * y_s)
    cum_c = np.arange(1, n + 1, dtype=np.float64) - cum_t
    cum_cy = np.cumsum((1.0 - t_s) * y_s)

    raw_k = np.ceil(grid * n - 1e-9).astype(np.int64)
    raw_k = np.clip(raw_k, 1, n)
    # Expand each prefix to the end of its tie group so equal scores can
    # never be split by the cut-off.
    k = np.searchsorted(neg_sorted, neg_sorted[raw_k - 1], side="right")

    treated = cum_t[k - 1]
    control = cum_c[k - 1]
    defined = (treated > 0) & (control > 0)
    values = np.full(grid.size, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = cum_ty[k - 1] / treated - cum_cy[k - 1] / control
    values[defined] = u[defined]
    if not defined.any():
        raise EvaluationInfeasibleError("no grid prefix contains both arms")

    q_def = grid[defined]
    u_def = values[defined]
    end_uplift = float(values[-1])
    if u_def.size == 1 or np.all(u_def == u_def[-1]):
        # Flat (or single-point) curves integrate exactly to their height;
        # bypass the trapezoid to avoid rounding in the q-range division.
        auuc = float(u_def[-1])
    else:
        auuc = _trapezoid(u_def, q_def) / (q_def[-1] - q_def[0])
    return UpliftCurve(
        grid=grid, values=values, defined=defined, auuc=auuc, end_uplift=end_uplift
    )


def random_ranking_auuc(
    t: np.ndarray,
    y: np.ndarray,
    reps: int,
    rng: np.random.Generator,
    grid: np.ndarray | None = None,
) -> tuple[float, float]:
    """Mean and std of the curve area under uniformly random rankings."""
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    n = np.asarray(t).shape[0]
    areas = np.empty(reps)
    for r in range(reps):
        scores = rng.permutation(n).astype(np.float64)
        areas[r] = uplift_curve(scores, t, y, grid).auuc
    return float(areas.mean()), float(areas.std())


# ---------------------------------------------------------------------------
# per-client summaries


@dataclass
class ClientMetrics:
    """Across-client discrimination and uplift summaries (population std)."""

    per_client: dict[str, tuple[float, float]]
    excluded: list[tuple[str, str]]
    auroc_mean: float
    auroc_std: float
    auroc_worst: float
    auuc_mean: float
    auuc_std: float
    auuc_worst: float


def summarize_clients(
    values: dict[str, tuple[float, float]], excluded: list[tuple[str, str]]
) -> ClientMetrics:
    if not values:
        raise EvaluationInfeasibleError("no client satisfied the metric preconditions")
    aurocs = np.array([v[0] for v in values.values()])
    auucs = np.array([v[1] for v in values.values()])
    return ClientMetrics(
        per_client=dict(values),
        excluded=list(excluded),
        auroc_mean=float(aurocs.mean()),
        auroc_std=float(aurocs.std()),
        auroc_worst=float(aurocs.min()),
        auuc_mean=float(auucs.mean()),
        auuc_std=float(auucs.std()),
        auuc_worst=float(auucs.min()),
    )


def per_client_metrics(
    model: TwoHeadModel,
    clients: list[ClientDataset],
    keep_rows: np.ndarray,
    adapters: dict[str, object] | None = None,
    grid: np.ndarray | None = None,
) -> ClientMetrics:
    """AUROC/AUUC per client on that client's trimmed test rows.

    ``keep_rows`` holds the global test row ids retained by positivity
    trimming. Clients whose kept rows miss an outcome class or a treatment
    arm are excluded and flagged rather than failing the whole summary.
    """
    keep_set = np.asarray(keep_rows)
    values: dict[str, tuple[float, float]] = {}
    excluded: list[tuple[str, str]] = []
    for client in clients:
        mask = np.isin(client.test_rows, keep_set)
        x = client.x_test[mask]
        t = client.t_test[mask]
        y = client.y_test[mask]
        if x.shape[0] == 0:
            excluded.append((client.client_id, "no kept test rows"))
            continue
        adapter = (adapters or {}).get(client.client_id)
        scores = compute_scores(model.with_adapter(adapter), x, t)
        try:
            client_auroc = auroc(scores.p_factual, y)
            client_auuc = uplift_curve(scores.tau, t, y, grid).auuc
        except (UndefinedMetricError, EvaluationInfeasibleError) as exc:
            excluded.append((client.client_id, str(exc)))
            continue
        values[client.client_id] = (client_auroc, client_auuc)
    return summarize_clients(values, excluded)
