"""NRMSE evaluation, per-round records, and cross-method comparison tables."""
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .nn import MLPShape, predict

METRICS_COLUMNS = ("round", "client", "available", "provenance", "test_nrmse", "train_loss", "epsilon")


def nrmse(predicted, truth) -> float:
    """RMSE divided by the range of ``truth``."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape or t.size == 0:
        raise ValueError(f"need equal nonzero lengths, got {p.size} and {t.size}")
    span = float(t.max() - t.min())
    if span <= 0:
        raise ValueError("truth vector is constant; NRMSE undefined")
    return math.sqrt(float(np.mean((p - t) ** 2))) / span


def evaluate_client(model: np.ndarray, shape: MLPShape, ds) -> float:
    return nrmse(predict(model, shape, ds.test_x), ds.test_y)


@dataclass
class ClientRecord:
    client: int
    available: bool
    provenance: str
    test_nrmse: float
    train_loss: float
    epsilon: float | None = None


@dataclass
class RoundReport:
    round: int
    clients: list[ClientRecord] = field(default_factory=list)

    @property
    def global_test_nrmse_mean(self) -> float:
        return statistics.fmean(c.test_nrmse for c in self.clients)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(reports: list[RoundReport], prefix: dict | None = None) -> str:
    """Render round reports as CSV text; ``prefix`` adds leading constant columns."""
    prefix = prefix or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*prefix, *METRICS_COLUMNS])
    for rep in reports:
        for c in rep.clients:
            w.writerow([
                *(_fmt(v) for v in prefix.values()),
                rep.round, c.client, _fmt(c.available), c.provenance,
                _fmt(c.test_nrmse), _fmt(c.train_loss), _fmt(c.epsilon),
            ])
    return buf.getvalue()


@dataclass(frozen=True)
class RunSummary:
    """Final per-community NRMSE of one run."""

    method: str
    dropout_ratio: float
    epsilon: float  # inf when no noise is added
    seed: int
    nrmse: tuple[float, ...]
    reg_factor: float = 0.0
    epochs_local: int = 0


def _sort_eps(e: float) -> float:
    return math.inf if e is None else e


def comparison_table(runs: list[RunSummary]) -> list[dict]:
    """One row per (method, n_c, eps, mu, E2), sorted on those keys.

    Runs that differ only by seed collapse to the per-community median.
    """
    groups: dict[tuple, list[RunSummary]] = {}
    for r in runs:
        key = (r.method, r.dropout_ratio, _sort_eps(r.epsilon), r.reg_factor, r.epochs_local)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        width = len(members[0].nrmse)
        per_com = [statistics.median(m.nrmse[c] for m in members) for c in range(width)]
        rows.append({
            "method": key[0],
            "n_c": key[1],
            "epsilon": key[2],
            "mu": key[3],
            "epochs_local": key[4],
            "seeds": sorted(m.seed for m in members),
            "nrmse": per_com,
            "mean": statistics.fmean(per_com),
        })
    return rows


def format_table(rows: list[dict]) -> str:
    """Plain-text rendering of :func:`comparison_table` rows."""
    if not rows:
        return ""
    width = len(rows[0]["nrmse"])
    head = ["method", "n_c", "eps", "mu", "E2"] + [f"com{c + 1}" for c in range(width)] + ["mean"]
    lines = ["\t".join(head)]
    for r in rows:
        cells = [r["method"], f"{r['n_c']:g}", f"{r['epsilon']:g}", f"{r['mu']:g}", str(r["epochs_local"])]
        cells += [f"{v:.4f}" for v in r["nrmse"]] + [f"{r['mean']:.4f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines)
