"""Experiment orchestration: shared data preparation per seed, one training
cell per (method, seed), across-seed aggregation, and artifact emission.

All methods for a given seed observe identical splits, preprocessing,
propensity model, and trim mask. A failing cell is recorded with its reason
and never disturbs other cells.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import collab, metrics, report
from .config import (
    METHOD_LABELS,
    SPLIT_BASED_METHODS,
    ExperimentConfig,
)
from .data import (
    ClientDataset,
    CsvSchema,
    DataTable,
    SplitIndices,
    fit_preprocess,
    generate_synthetic,
    load_csv,
    partition_clients,
    preprocess_table,
    stratified_split,
    synthetic_spec_from_scales,
)
from .errors import AuditInfeasibleError, FedsplitError
from .metrics import ClientMetrics, UpliftCurve
from .model import PropensityModel, TwoHeadModel, compute_scores, fit_propensity
from .nn import derive_rng
from .privacy import AuditConfig, AuditResult, mia_audit


@dataclass
class PreparedData:
    """Everything shared by all methods for one (dataset, seed) pair."""

    dataset_name: str
    seed: int
    split: SplitIndices
    clients: list[ClientDataset]
    x_test: np.ndarray
    t_test: np.ndarray
    y_test: np.ndarray
    propensity: PropensityModel
    e_test: np.ndarray
    keep_local: np.ndarray
    keep_rows: np.ndarray
    trim_rate: float
    grid: np.ndarray
    random_auuc_mean: float
    random_auuc_std: float
    split_hash: str


def _split_hash(split: SplitIndices) -> str:
    digest = hashlib.sha256()
    for part in (split.train, split.valid, split.test):
        digest.update(np.ascontiguousarray(part, dtype=np.int64).tobytes())
    return digest.hexdigest()


def build_table(config: ExperimentConfig) -> DataTable:
    """Materialize the configured dataset (fixed across run seeds)."""
    dataset = config.dataset
    if dataset["source"] == "csv":
        csv_cfg = dataset["csv"]
        schema = CsvSchema(
            treatment=csv_cfg["treatment"],
            outcome=csv_cfg["outcome"],
            client=csv_cfg["client"],
            features=tuple(csv_cfg["features"]) or None,
        )
        return load_csv(csv_cfg["path"], schema)
    syn = dataset["synthetic"]
    spec = synthetic_spec_from_scales(
        n_per_client=syn["n_per_client"],
        n_clients=syn["clients"],
        n_features=syn["features"],
        client_shift_scale=syn["client_shift_scale"],
        effect_scale=syn["effect_scale"],
        propensity_scale=syn["propensity_scale"],
        baseline_scale=syn["baseline_scale"],
        rng=derive_rng(syn["seed"], "weights"),
    )
    table, _ = generate_synthetic(spec, derive_rng(syn["seed"], "draw"))
    return table


def prepare(config: ExperimentConfig, table: DataTable, seed: int) -> PreparedData:
    """Split, preprocess, partition, fit the propensity model, and trim."""
    split = stratified_split(table, config.split_fractions, derive_rng(seed, "split"))
    stats = fit_preprocess(table, split.train)
    processed = preprocess_table(stats, table)
    clients = partition_clients(processed, split)
    x_test = processed.features[split.test]
    t_test = processed.treatment[split.test]
    y_test = processed.outcome[split.test]
    propensity = fit_propensity(
        processed.features[split.train], processed.treatment[split.train]
    )
    e_test = propensity.predict(x_test)
    trim = config.trim
    if trim["mode"] == "alpha":
        keep_local, trim_rate = metrics.trim_positivity(e_test, trim["alpha"])
    else:
        keep_local, trim_rate = metrics.trim_quantile(e_test, trim["fraction"])
    grid = metrics.default_grid(config.eval_settings["grid_points"])
    rand_mean, rand_std = metrics.random_ranking_auuc(
        t_test[keep_local],
        y_test[keep_local],
        reps=config.eval_settings["random_baseline_reps"],
        rng=derive_rng(seed, "random-baseline"),
        grid=grid,
    )
    return PreparedData(
        dataset_name=config.dataset["name"],
        seed=seed,
        split=split,
        clients=clients,
        x_test=x_test,
        t_test=t_test,
        y_test=y_test,
        propensity=propensity,
        e_test=e_test,
        keep_local=keep_local,
        keep_rows=split.test[keep_local],
        trim_rate=trim_rate,
        grid=grid,
        random_auuc_mean=rand_mean,
        random_auuc_std=rand_std,
        split_hash=_split_hash(split),
    )


# ---------------------------------------------------------------------------
# one (method, seed) cell


@dataclass
class CellResult:
    method: str
    seed: int
    auroc: float
    auuc: float
    end_uplift: float
    trim_pct: float
    worst_client_auuc: float
    comm_bytes: int
    rounds: int
    mia_auc: float | None
    curve: UpliftCurve
    client_summary: ClientMetrics
    history: list[collab.RoundRecord]
    ledger_by_kind: dict[str, int]
    audits: list[tuple[str, AuditResult]] = field(default_factory=list)
    audit_skipped: list[tuple[str, str]] = field(default_factory=list)
    per_round_audits: list[tuple[int, str, AuditResult]] = field(default_factory=list)
    model: TwoHeadModel | None = None
    adapters: dict | None = None

    @property
    def comm_mb(self) -> float:
        return self.comm_bytes / 2**20


def audit_clients(
    trunk,
    clients: list[ClientDataset],
    audit_cfg: dict,
    seed: int,
    adapters: dict | None = None,
    defense=None,
    target_client: str = "",
):
    """Audit each (or one target) client; infeasible pools are skipped."""
    results: list[tuple[str, AuditResult]] = []
    skipped: list[tuple[str, str]] = []
    m = audit_cfg["m"] or None
    for client in clients:
        if target_client and client.client_id != target_client:
            continue
        try:
            outcome = mia_audit(
                trunk,
                client,
                AuditConfig(
                    m=m,
                    attacker_train_fraction=audit_cfg["train_fraction"],
                    seed=seed,
                ),
                adapter=(adapters or {}).get(client.client_id),
                defense=defense,
            )
        except AuditInfeasibleError as exc:
            skipped.append((client.client_id, str(exc)))
            continue
        results.append((client.client_id, outcome))
    return results, skipped


def run_cell(config: ExperimentConfig, prep: PreparedData, method: str, seed: int) -> CellResult:
    """Train one method on the shared prepared data and evaluate it."""
    round_config = config.round_config(method, seed)
    audited_method = method in SPLIT_BASED_METHODS and config.audit["enabled"]
    per_round_audits: list[tuple[int, str, AuditResult]] = []
    on_round_end = None
    if audited_method and config.audit["per_round"]:
        # audits the broadcast (global) trunk after each round; adapters are
        # client-local mid-training state and are not part of this snapshot
        def on_round_end(round_idx, snapshot):
            results, _ = audit_clients(
                snapshot.trunk,
                prep.clients,
                config.audit,
                seed,
                defense=round_config.defense,
                target_client=config.audit["target_client"],
            )
            per_round_audits.extend(
                (round_idx, client_id, result) for client_id, result in results
            )

    outcome = collab.run_protocol(prep.clients, round_config, on_round_end=on_round_end)
    scores = compute_scores(outcome.model, prep.x_test, prep.t_test)
    auroc_value = metrics.auroc(scores.p_factual, prep.y_test)
    kept = prep.keep_local
    curve = metrics.uplift_curve(
        scores.tau[kept], prep.t_test[kept], prep.y_test[kept], prep.grid
    )
    client_summary = metrics.per_client_metrics(
        outcome.model,
        prep.clients,
        keep_rows=prep.keep_rows,
        adapters=outcome.adapters or None,
        grid=prep.grid,
    )
    audits: list[tuple[str, AuditResult]] = []
    audit_skipped: list[tuple[str, str]] = []
    mia_value = None
    if audited_method:
        audits, audit_skipped = audit_clients(
            outcome.model.trunk,
            prep.clients,
            config.audit,
            seed,
            adapters=outcome.adapters,
            defense=round_config.defense,
            target_client=config.audit["target_client"],
        )
        if audits:
            mia_value = float(np.mean([r.attack_auc for _, r in audits]))
    return CellResult(
        method=method,
        seed=seed,
        auroc=auroc_value,
        auuc=curve.auuc,
        end_uplift=curve.end_uplift,
        trim_pct=100.0 * prep.trim_rate,
        worst_client_auuc=client_summary.auuc_worst,
        comm_bytes=outcome.ledger.total_bytes(),
        rounds=round_config.rounds,
        mia_auc=mia_value,
        curve=curve,
        client_summary=client_summary,
        history=outcome.history,
        ledger_by_kind=outcome.ledger.bytes_by_kind(),
        audits=audits,
        audit_skipped=audit_skipped,
        per_round_audits=per_round_audits,
        model=outcome.model,
        adapters=outcome.adapters,
    )


# ---------------------------------------------------------------------------
# across-seed aggregation


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class ReportRow:
    """One rendered line of the main results table."""

    dataset: str
    method: str
    auroc: tuple[float, float]
    auuc: tuple[float, float]
    end_uplift: tuple[float, float]
    trim_pct: tuple[float, float]
    worst_client_auuc: tuple[float, float]
    comm_mb: float
    rounds: int
    mia_auc: tuple[float, float] | None


@dataclass
class ClientReportRow:
    dataset: str
    method: str
    auuc_mean: float
    auuc_std: float
    auuc_worst: float
    auroc_mean: float
    auroc_std: float
    auroc_worst: float


def aggregate_rows(
    dataset: str, method: str, cells: list[CellResult]
) -> tuple[ReportRow, ClientReportRow]:
    mia: tuple[float, float] | None = None
    mia_values = [c.mia_auc for c in cells if c.mia_auc is not None]
    if mia_values:
        mia = _mean_std(mia_values)
    row = ReportRow(
        dataset=dataset,
        method=METHOD_LABELS[method],
        auroc=_mean_std([c.auroc for c in cells]),
        auuc=_mean_std([c.auuc for c in cells]),
        end_uplift=_mean_std([c.end_uplift for c in cells]),
        trim_pct=_mean_std([c.trim_pct for c in cells]),
        worst_client_auuc=_mean_std([c.worst_client_auuc for c in cells]),
        comm_mb=float(np.mean([c.comm_mb for c in cells])),
        rounds=cells[0].rounds,
        mia_auc=mia,
    )
    client_row = ClientReportRow(
        dataset=dataset,
        method=METHOD_LABELS[method],
        auuc_mean=float(np.mean([c.client_summary.auuc_mean for c in cells])),
        auuc_std=float(np.mean([c.client_summary.auuc_std for c in cells])),
        auuc_worst=float(np.mean([c.client_summary.auuc_worst for c in cells])),
        auroc_mean=float(np.mean([c.client_summary.auroc_mean for c in cells])),
        auroc_std=float(np.mean([c.client_summary.auroc_std for c in cells])),
        auroc_worst=float(np.mean([c.client_summary.auroc_worst for c in cells])),
    )
    return row, client_row


@dataclass
class ExperimentOutcome:
    rows: list[ReportRow]
    client_rows: list[ClientReportRow]
    cells: dict[tuple[str, int], CellResult]
    failures: dict[tuple[str, int], str]
    prepared: dict[int, PreparedData]

    @property
    def all_failed(self) -> bool:
        return not self.cells

    @property
    def partial(self) -> bool:
        return bool(self.failures) and bool(self.cells)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentOutcome:
    """Run every (method, seed) cell, aggregate, and emit all artifacts."""
    table = build_table(config)
    prepared: dict[int, PreparedData] = {}
    cells: dict[tuple[str, int], CellResult] = {}
    failures: dict[tuple[str, int], str] = {}
    for seed in config.seeds:
        try:
            prepared[seed] = prepare(config, table, seed)
        except FedsplitError as exc:
            for method in config.methods:
                failures[(method, seed)] = f"data preparation failed: {exc}"
            continue
        for method in config.methods:
            try:
                cells[(method, seed)] = run_cell(config, prepared[seed], method, seed)
            except FedsplitError as exc:
                failures[(method, seed)] = str(exc)
    dataset = config.dataset["name"]
    rows: list[ReportRow] = []
    client_rows: list[ClientReportRow] = []
    for method in config.methods:
        done = [cells[(method, s)] for s in config.seeds if (method, s) in cells]
        if not done:
            continue
        row, client_row = aggregate_rows(dataset, method, done)
        rows.append(row)
        client_rows.append(client_row)
    outcome = ExperimentOutcome(
        rows=rows,
        client_rows=client_rows,
        cells=cells,
        failures=failures,
        prepared=prepared,
    )
    if write:
        report.write_run_artifacts(config, outcome)
    return outcome


# ---------------------------------------------------------------------------
# defense sweep support


def sweep_run_point(
    config: ExperimentConfig,
    prepared: dict[int, PreparedData],
    method: str,
):
    """Build the (defense, seed) -> (auuc, mia_auc) callable for the sweep."""

    def run_point(defense: collab.DefenseConfig, seed: int) -> tuple[float, float]:
        prep = prepared[seed]
        base = config.round_config(method, seed)
        round_config = collab.RoundConfig(
            mode=base.mode,
            rounds=base.rounds,
            local_epochs=base.local_epochs,
            batch_size=base.batch_size,
            lr_client=base.lr_client,
            lr_server=base.lr_server,
            participation=base.participation,
            personalization=base.personalization,
            defense=None if defense.is_noop() else defense,
            seed=seed,
        )
        outcome = collab.run_protocol(prep.clients, round_config)
        scores = compute_scores(outcome.model, prep.x_test, prep.t_test)
        kept = prep.keep_local
        curve = metrics.uplift_curve(
            scores.tau[kept], prep.t_test[kept], prep.y_test[kept], prep.grid
        )
        audits, _ = audit_clients(
            outcome.model.trunk,
            prep.clients,
            config.audit,
            seed,
            adapters=outcome.adapters,
            defense=round_config.defense,
            target_client=config.audit["target_client"],
        )
        mia = float(np.mean([r.attack_auc for _, r in audits])) if audits else math.nan
        return curve.auuc, mia

    return run_point
