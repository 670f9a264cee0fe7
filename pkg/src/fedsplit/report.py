"""Artifact emission: delimited report tables, curve and sweep point files,
ledger/history/audit breakdowns, model checkpoints, and the run manifest.

Files contain no timestamps, so identical configurations produce
byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import UpliftCurve
from .model import TwoHeadModel
from .nn import (
    AdapterParams,
    DenseLayer,
    HeadParams,
    TrunkParams,
)
from .privacy import AUDIT_CAVEAT, SweepPoint

# Table column order follows the main results table: identification, utility,
# decision quality, diagnostics, deployment cost, leakage.
REPORT_COLUMNS = [
    "dataset",
    "method",
    "auroc_mean",
    "auroc_std",
    "auuc_mean",
    "auuc_std",
    "end_uplift_mean",
    "end_uplift_std",
    "trim_pct_mean",
    "trim_pct_std",
    "worst_client_auuc_mean",
    "worst_client_auuc_std",
    "comm_mb",
    "rounds",
    "mia_auc_mean",
    "mia_auc_std",
]

CLIENT_REPORT_COLUMNS = [
    "dataset",
    "method",
    "auuc_mean",
    "auuc_std",
    "auuc_worst",
    "auroc_mean",
    "auroc_std",
    "auroc_worst",
]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _fmt_exact(value: float) -> str:
    return f"{float(value):.17g}"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# tables


def write_report(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            mia = ("N/A", "N/A") if row.mia_auc is None else tuple(_fmt(v) for v in row.mia_auc)
            writer.writerow(
                [
                    row.dataset,
                    row.method,
                    _fmt(row.auroc[0]),
                    _fmt(row.auroc[1]),
                    _fmt(row.auuc[0]),
                    _fmt(row.auuc[1]),
                    _fmt(row.end_uplift[0]),
                    _fmt(row.end_uplift[1]),
                    _fmt(row.trim_pct[0]),
                    _fmt(row.trim_pct[1]),
                    _fmt(row.worst_client_auuc[0]),
                    _fmt(row.worst_client_auuc[1]),
                    f"{row.comm_mb:.2f}",
                    str(row.rounds),
                    mia[0],
                    mia[1],
                ]
            )


def write_client_report(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CLIENT_REPORT_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.dataset,
                    row.method,
                    _fmt(row.auuc_mean),
                    _fmt(row.auuc_std),
                    _fmt(row.auuc_worst),
                    _fmt(row.auroc_mean),
                    _fmt(row.auroc_std),
                    _fmt(row.auroc_worst),
                ]
            )


# ---------------------------------------------------------------------------
# curve points


def emit_uplift_points(curve: UpliftCurve, path) -> None:
    """Plain-text (q, u, defined) rows for external plotting and re-reading."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q", "u", "defined"])
        for q, u, ok in zip(curve.grid, curve.values, curve.defined):
            writer.writerow([_fmt_exact(q), _fmt_exact(u) if ok else "", "1" if ok else "0"])


def read_uplift_points(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q, u, defined = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            q.append(float(row[0]))
            defined.append(row[2] == "1")
            u.append(float(row[1]) if defined[-1] else np.nan)
    return np.array(q), np.array(u), np.array(defined)


def auuc_from_points(q: np.ndarray, u: np.ndarray, defined: np.ndarray) -> float:
    """Recompute the normalized trapezoid area from emitted points."""
    qd, ud = q[defined], u[defined]
    if ud.size == 1 or np.all(ud == ud[-1]):
        return float(ud[-1])
    integral = float(np.sum(0.5 * (ud[1:] + ud[:-1]) * (qd[1:] - qd[:-1])))
    return integral / (qd[-1] - qd[0])


# ---------------------------------------------------------------------------
# sweep points


def emit_privacy_sweep(points: list[SweepPoint], means: list[SweepPoint], path) -> None:
    """Detail rows per (sigma, clip, seed) plus per-point means (seed='mean')."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["noise_sigma", "clip_norm", "seed", "auuc", "mia_auc"])
        for p in points:
            writer.writerow(
                [_fmt_exact(p.noise_sigma), _fmt_exact(p.clip_norm), str(p.seed), _fmt_exact(p.auuc), _fmt_exact(p.mia_auc)]
            )
        for p in means:
            writer.writerow(
                [_fmt_exact(p.noise_sigma), _fmt_exact(p.clip_norm), "mean", _fmt_exact(p.auuc), _fmt_exact(p.mia_auc)]
            )


def read_privacy_sweep(path) -> list[tuple[float, float, str, float, float]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append((float(row[0]), float(row[1]), row[2], float(row[3]), float(row[4])))
    return out


# ---------------------------------------------------------------------------
# breakdowns


def write_history(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "round", "mean_train_loss", "bytes_delta"])
        for (method, seed), cell in cells.items():
            for record in cell.history:
                writer.writerow(
                    [method, str(seed), str(record.round), _fmt_exact(record.mean_loss), str(record.bytes_delta)]
                )


def write_ledger(cells, path) -> None:
    kinds = ["weights", "activations", "activation_grads", "labels"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", *[f"{k}_bytes" for k in kinds], "total_bytes"])
        for (method, seed), cell in cells.items():
            by_kind = cell.ledger_by_kind
            writer.writerow(
                [method, str(seed), *[str(by_kind.get(k, 0)) for k in kinds], str(cell.comm_bytes)]
            )


def write_audits(cells, path, defense=None) -> None:
    """Audit rows (method, seed, client, sigma, c, AUC, m); audits observe
    the as-transmitted representations, so only the defended method carries a
    non-trivial (sigma, c)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {AUDIT_CAVEAT}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "seed", "client", "noise_sigma", "clip_norm", "attack_auc", "m", "converged"]
        )
        for (method, seed), cell in cells.items():
            if method == "hybrid_defended" and defense is not None:
                sigma, clip = _fmt_exact(defense.noise_sigma), _fmt_exact(defense.clip_norm)
            else:
                sigma, clip = "0", "inf"
            for client_id, result in cell.audits:
                writer.writerow(
                    [
                        method,
                        str(seed),
                        client_id,
                        sigma,
                        clip,
                        _fmt_exact(result.attack_auc),
                        str(result.m),
                        "1" if result.converged else "0",
                    ]
                )


def write_per_round_audits(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {AUDIT_CAVEAT}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "round", "client", "attack_auc", "m"])
        for (method, seed), cell in cells.items():
            for round_idx, client_id, result in cell.per_round_audits:
                writer.writerow(
                    [method, str(seed), str(round_idx), client_id, _fmt_exact(result.attack_auc), str(result.m)]
                )


def write_random_baseline(prepared, dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "seed", "random_auuc_mean", "random_auuc_std"])
        for seed, prep in prepared.items():
            writer.writerow(
                [dataset, str(seed), _fmt_exact(prep.random_auuc_mean), _fmt_exact(prep.random_auuc_std)]
            )


# ---------------------------------------------------------------------------
# model checkpoints


def save_model(
    model: TwoHeadModel,
    path,
    adapters: dict[str, AdapterParams] | None = None,
    meta: dict | None = None,
) -> None:
    arrays = {
        "trunk_w1": model.trunk.layer1.weights,
        "trunk_b1": model.trunk.layer1.bias,
        "trunk_w2": model.trunk.layer2.weights,
        "trunk_b2": model.trunk.layer2.bias,
        "head1_w": model.head1.weights,
        "head1_b": np.float64(model.head1.bias),
        "head0_w": model.head0.weights,
        "head0_b": np.float64(model.head0.bias),
    }
    adapter_clients = sorted(adapters or {})
    for i, client_id in enumerate(adapter_clients):
        adapter = adapters[client_id]
        arrays[f"adapter{i}_w1"] = adapter.layer1.weights
        arrays[f"adapter{i}_b1"] = adapter.layer1.bias
        arrays[f"adapter{i}_w2"] = adapter.layer2.weights
        arrays[f"adapter{i}_b2"] = adapter.layer2.bias
    meta = dict(meta or {})
    meta["adapter_clients"] = adapter_clients
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_model(path) -> tuple[TwoHeadModel, dict[str, AdapterParams], dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        model = TwoHeadModel(
            trunk=TrunkParams(
                DenseLayer(archive["trunk_w1"], archive["trunk_b1"]),
                DenseLayer(archive["trunk_w2"], archive["trunk_b2"]),
            ),
            head1=HeadParams(archive["head1_w"], float(archive["head1_b"])),
            head0=HeadParams(archive["head0_w"], float(archive["head0_b"])),
        )
        adapters = {}
        for i, client_id in enumerate(meta.get("adapter_clients", [])):
            adapters[client_id] = AdapterParams(
                DenseLayer(archive[f"adapter{i}_w1"], archive[f"adapter{i}_b1"]),
                DenseLayer(archive[f"adapter{i}_w2"], archive[f"adapter{i}_b2"]),
            )
    return model, adapters, meta


# ---------------------------------------------------------------------------
# run assembly


def write_run_artifacts(config, outcome) -> Path:
    """Write every artifact of a run and the manifest indexing them."""
    out_dir = Path(config.output_dir)
    (out_dir / "curves").mkdir(parents=True, exist_ok=True)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)

    write_report(outcome.rows, out_dir / "report.csv")
    write_client_report(outcome.client_rows, out_dir / "client_report.csv")
    write_history(outcome.cells, out_dir / "history.csv")
    write_ledger(outcome.cells, out_dir / "ledger.csv")
    write_audits(outcome.cells, out_dir / "audits.csv", defense=config.defense)
    if any(cell.per_round_audits for cell in outcome.cells.values()):
        write_per_round_audits(outcome.cells, out_dir / "audits_per_round.csv")
    write_random_baseline(outcome.prepared, config.dataset["name"], out_dir / "random_baseline.csv")

    for (method, seed), cell in outcome.cells.items():
        emit_uplift_points(cell.curve, out_dir / "curves" / f"{method}_seed{seed}.csv")
        save_model(
            cell.model,
            out_dir / "models" / f"{method}_seed{seed}.npz",
            adapters=cell.adapters,
            meta={
                "method": method,
                "seed": seed,
                "dataset": config.dataset["name"],
                "n_features": int(cell.model.trunk.in_dim),
                "defended": method == "hybrid_defended",
            },
        )

    if config.render_figures and outcome.cells:
        from . import figures

        (out_dir / "figures").mkdir(exist_ok=True)
        figures.render_uplift_curves(
            outcome, out_dir / "figures" / "uplift_curves.png", dataset=config.dataset["name"]
        )

    manifest = {
        "package_version": __version__,
        "config": config.resolved,
        "audit_caveat": AUDIT_CAVEAT,
        "split_hashes": {str(seed): prep.split_hash for seed, prep in outcome.prepared.items()},
        "failures": {f"{m}/seed{s}": reason for (m, s), reason in outcome.failures.items()},
        "artifacts": {},
    }
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            manifest["artifacts"][str(path.relative_to(out_dir))] = file_sha256(path)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir
