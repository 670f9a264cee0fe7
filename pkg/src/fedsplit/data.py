"""Tabular ingestion, leakage-safe preprocessing, stratified splits,
per-client partitioning, and a synthetic generator with known effects.

The unified schema is (features X, binary treatment T, binary outcome Y,
client label). Missing feature cells are carried as NaN until imputation;
treatment and outcome may never be missing.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    ParseError,
    SchemaError,
    StratificationError,
    ValidationError,
)
from .nn import sigmoid

# Floor applied to feature standard deviations; constant features map to 0.
STD_EPS = 1e-8

# Generated propensities are squeezed into this open interval so positivity
# holds for most rows while the tails still exercise trimming.
PROPENSITY_LO = 0.02
PROPENSITY_HI = 0.98


@dataclass
class DataTable:
    """One dataset in the unified (X, T, Y, client) schema."""

    feature_names: list[str]
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    client_id: np.ndarray
    processed: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.treatment = np.asarray(self.treatment, dtype=np.int64)
        self.outcome = np.asarray(self.outcome, dtype=np.int64)
        self.client_id = np.asarray(self.client_id, dtype=object)
        n, d = self.features.shape if self.features.ndim == 2 else (0, 0)
        if n < 1 or d < 1:
            raise DimensionError("table needs at least one row and one feature")
        if len(self.feature_names) != d:
            raise DimensionError("feature_names length does not match feature count")
        for name, vec in (("treatment", self.treatment), ("outcome", self.outcome)):
            if vec.shape != (n,):
                raise DimensionError(f"{name} length does not match row count")
            bad = ~np.isin(vec, (0, 1))
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise ValidationError(
                    f"{name} must be binary 0/1; row {row} has value {vec[row]}"
                )
        if self.client_id.shape != (n,):
            raise DimensionError("client_id length does not match row count")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def client_labels(self) -> list[str]:
        return sorted(set(self.client_id.tolist()))


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for CSV ingestion; features=None means all remaining."""

    treatment: str
    outcome: str
    client: str
    features: tuple[str, ...] | None = None


def load_csv(path, schema: CsvSchema) -> DataTable:
    """Read a header+rows CSV into a DataTable.

    Empty feature cells become NaN. Treatment/outcome cells must parse to
    exactly 0 or 1; anything else raises with the offending row index
    (0-based over data rows).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        rows = list(reader)
    for col in (schema.treatment, schema.outcome, schema.client):
        if col not in header:
            raise SchemaError(f"{path}: missing required column '{col}'")
    reserved = {schema.treatment, schema.outcome, schema.client}
    if schema.features is None:
        feature_names = [c for c in header if c not in reserved]
    else:
        feature_names = list(schema.features)
        for col in feature_names:
            if col not in header:
                raise SchemaError(f"{path}: missing feature column '{col}'")
            if col in reserved:
                raise SchemaError(f"{path}: column '{col}' is both feature and label")
    if not feature_names:
        raise SchemaError(f"{path}: no feature columns")
    col_idx = {c: header.index(c) for c in header}

    n = len(rows)
    if n == 0:
        raise SchemaError(f"{path}: no data rows")
    features = np.empty((n, len(feature_names)))
    treatment = np.empty(n, dtype=np.int64)
    outcome = np.empty(n, dtype=np.int64)
    client = np.empty(n, dtype=object)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}", row=i)
        for j, name in enumerate(feature_names):
            cell = row[col_idx[name]].strip()
            if cell == "":
                features[i, j] = np.nan
            else:
                try:
                    features[i, j] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {i}, column '{name}': cannot parse '{cell}'", row=i
                    ) from None
        for name, target in ((schema.treatment, treatment), (schema.outcome, outcome)):
            cell = row[col_idx[name]].strip()
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i}, column '{name}': cannot parse '{cell}'", row=i
                ) from None
            if value not in (0.0, 1.0):
                raise ValidationError(
                    f"{path}: row {i}, column '{name}': value {cell} is not binary 0/1"
                )
            target[i] = int(value)
        client[i] = row[col_idx[schema.client]].strip()
    return DataTable(
        feature_names=feature_names,
        features=features,
        treatment=treatment,
        outcome=outcome,
        client_id=client,
    )


def write_csv(table: DataTable, path, schema: CsvSchema | None = None) -> None:
    """Inverse of load_csv; NaN cells are written as empty strings."""
    schema = schema or CsvSchema(treatment="t", outcome="y", client="client_id")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.treatment, schema.outcome, schema.client, *table.feature_names])
        for i in range(table.n_rows):
            cells = [str(table.treatment[i]), str(table.outcome[i]), str(table.client_id[i])]
            for value in table.features[i]:
                cells.append("" if np.isnan(value) else repr(float(value)))
            writer.writerow(cells)


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitIndices:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def all_indices(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


def stratified_split(
    table: DataTable, fractions: tuple[float, float, float], rng: np.random.Generator
) -> SplitIndices:
    """Outcome-stratified train/valid/test split.

    Within each outcome class the rows are shuffled and allocated by rounded
    fractions (remainder to test), so per-split prevalence tracks the global
    prevalence to within rounding.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValidationError("split fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {sum(fractions)}")
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in (0, 1):
        members = np.flatnonzero(table.outcome == cls)
        if members.size < 3:
            raise StratificationError(
                f"outcome class {cls} has only {members.size} rows; need at least 3"
            )
        members = members[rng.permutation(members.size)]
        n_train = int(round(fractions[0] * members.size))
        n_valid = int(round(fractions[1] * members.size))
        n_valid = min(n_valid, members.size - n_train)
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train : n_train + n_valid])
        parts[2].append(members[n_train + n_valid :])
    split = SplitIndices(
        train=np.sort(np.concatenate(parts[0])),
        valid=np.sort(np.concatenate(parts[1])),
        test=np.sort(np.concatenate(parts[2])),
    )
    for name, idx in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        if idx.size == 0:
            raise StratificationError(f"{name} split is empty; adjust fractions")
    return split


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class PreprocessStats:
    """Imputation and standardization statistics, fit on train rows only."""

    median: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    all_missing: np.ndarray


def fit_preprocess(table: DataTable, train_idx: np.ndarray) -> PreprocessStats:
    """Medians over non-missing train values, then mean/std of the imputed
    train matrix. Features with no observed train value fall back to median 0
    (flagged and warned)."""
    train_idx = np.asarray(train_idx)
    if train_idx.size == 0:
        raise ValidationError("cannot fit preprocessing on an empty train split")
    x = table.features[train_idx]
    d = x.shape[1]
    median = np.zeros(d)
    all_missing = np.zeros(d, dtype=bool)
    for j in range(d):
        observed = x[:, j][~np.isnan(x[:, j])]
        if observed.size == 0:
            all_missing[j] = True
            warnings.warn(
                f"feature '{table.feature_names[j]}' has no observed train value; "
                "imputing with 0",
                stacklevel=2,
            )
        else:
            median[j] = float(np.median(observed))
    imputed = np.where(np.isnan(x), median, x)
    mean = imputed.mean(axis=0)
    std = np.maximum(imputed.std(axis=0), STD_EPS)
    return PreprocessStats(median=median, mean=mean, std=std, all_missing=all_missing)


def apply_preprocess(stats: PreprocessStats, rows: np.ndarray) -> np.ndarray:
    """Impute missing cells with the stored medians, then standardize."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != stats.median.shape[0]:
        raise DimensionError("column count does not match fitted statistics")
    imputed = np.where(np.isnan(rows), stats.median, rows)
    out = (imputed - stats.mean) / stats.std
    if not np.all(np.isfinite(out)):
        raise ValidationError("preprocessing produced non-finite values")
    return out


def preprocess_table(stats: PreprocessStats, table: DataTable) -> DataTable:
    """Return a standardized copy of the table.

    Standardization is not idempotent, so re-processing an already processed
    table is rejected.
    """
    if table.processed:
        raise ValidationError("table is already preprocessed; refusing to apply twice")
    return DataTable(
        feature_names=list(table.feature_names),
        features=apply_preprocess(stats, table.features),
        treatment=table.treatment.copy(),
        outcome=table.outcome.copy(),
        client_id=table.client_id.copy(),
        processed=True,
    )


# ---------------------------------------------------------------------------
# client partitioning


@dataclass
class ClientDataset:
    """One client's rows, materialized per split, plus the global row ids."""

    client_id: str
    x_train: np.ndarray
    t_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    t_valid: np.ndarray
    y_valid: np.ndarray
    x_test: np.ndarray
    t_test: np.ndarray
    y_test: np.ndarray
    train_rows: np.ndarray = field(repr=False, default=None)
    valid_rows: np.ndarray = field(repr=False, default=None)
    test_rows: np.ndarray = field(repr=False, default=None)

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]


def partition_clients(table: DataTable, splits: SplitIndices) -> list[ClientDataset]:
    """Split the table into per-client views, ordered by client label.

    Clients whose train split is empty are still returned (they can be
    evaluated and audited) but a warning is issued; training loops skip them.
    """
    clients = []
    for label in table.client_labels():
        member_rows = np.flatnonzero(table.client_id == label)
        member_set = set(member_rows.tolist())
        per_split = {}
        for name, idx in (("train", splits.train), ("valid", splits.valid), ("test", splits.test)):
            rows = np.array([i for i in idx.tolist() if i in member_set], dtype=np.int64)
            per_split[name] = rows
        if per_split["train"].size == 0:
            warnings.warn(f"client '{label}' has no train rows after splitting", stacklevel=2)
        clients.append(
            ClientDataset(
                client_id=str(label),
                x_train=table.features[per_split["train"]],
                t_train=table.treatment[per_split["train"]],
                y_train=table.outcome[per_split["train"]],
                x_valid=table.features[per_split["valid"]],
                t_valid=table.treatment[per_split["valid"]],
                y_valid=table.outcome[per_split["valid"]],
                x_test=table.features[per_split["test"]],
                t_test=table.treatment[per_split["test"]],
                y_test=table.outcome[per_split["test"]],
                train_rows=per_split["train"],
                valid_rows=per_split["valid"],
                test_rows=per_split["test"],
            )
        )
    return clients


# ---------------------------------------------------------------------------
# synthetic data with known ground truth


@dataclass
class SyntheticSpec:
    """Generator parameters; weight vectors are the dataset's fixed truth."""

    n_per_client: int
    n_clients: int
    n_features: int
    client_shift_scale: float
    propensity_weights: np.ndarray
    baseline_weights: np.ndarray
    effect_weights: np.ndarray
    effect_scale: float

    def __post_init__(self):
        if self.n_per_client < 1 or self.n_clients < 1 or self.n_features < 1:
            raise ValidationError("synthetic sizes must be positive")
        for name in ("propensity_weights", "baseline_weights", "effect_weights"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (self.n_features,):
                raise ValidationError(f"{name} must have length {self.n_features}")
            setattr(self, name, vec)


def synthetic_spec_from_scales(
    n_per_client: int,
    n_clients: int,
    n_features: int,
    client_shift_scale: float,
    effect_scale: float,
    propensity_scale: float,
    baseline_scale: float,
    rng: np.random.Generator,
) -> SyntheticSpec:
    """Draw weight vectors with per-coordinate scale chosen so the logit
    variance is roughly the squared scale regardless of dimension."""
    unit = 1.0 / np.sqrt(n_features)
    return SyntheticSpec(
        n_per_client=n_per_client,
        n_clients=n_clients,
        n_features=n_features,
        client_shift_scale=client_shift_scale,
        propensity_weights=propensity_scale * unit * rng.standard_normal(n_features),
        baseline_weights=baseline_scale * unit * rng.standard_normal(n_features),
        effect_weights=unit * rng.standard_normal(n_features),
        effect_scale=effect_scale,
    )


@dataclass
class SyntheticTruth:
    """Hidden per-row ground truth: the true effect and true propensity."""

    tau: np.ndarray
    propensity: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[DataTable, SyntheticTruth]:
    """Sample a non-IID multi-client table with recorded ground truth.

    Per client, features are Gaussian around a client-specific mean shift.
    Propensity logits are squeezed into (0.02, 0.98); outcomes are Bernoulli
    draws from the factual outcome probability.
    """
    blocks = []
    labels = []
    for k in range(spec.n_clients):
        shift = spec.client_shift_scale * rng.standard_normal(spec.n_features)
        blocks.append(rng.standard_normal((spec.n_per_client, spec.n_features)) + shift)
        labels.extend([f"c{k:03d}"] * spec.n_per_client)
    x = np.vstack(blocks)
    n = x.shape[0]
    propensity = PROPENSITY_LO + (PROPENSITY_HI - PROPENSITY_LO) * sigmoid(
        x @ spec.propensity_weights
    )
    t = (rng.random(n) < propensity).astype(np.int64)
    base_logit = x @ spec.baseline_weights
    mu0 = sigmoid(base_logit)
    mu1 = sigmoid(base_logit + spec.effect_scale * (x @ spec.effect_weights))
    mu_fact = np.where(t == 1, mu1, mu0)
    y = (rng.random(n) < mu_fact).astype(np.int64)
    table = DataTable(
        feature_names=[f"f{j:02d}" for j in range(spec.n_features)],
        features=x,
        treatment=t,
        outcome=y,
        client_id=np.array(labels, dtype=object),
    )
    truth = SyntheticTruth(tau=mu1 - mu0, propensity=propensity, mu1=mu1, mu0=mu0)
    return table, truth
