"""Execute a configured sweep and write its artifacts."""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import _backend, config, datasets
from .fl import TrainConfig, run_experiment
from .metrics import RunSummary, comparison_table, format_table, metrics_csv

log = logging.getLogger(__name__)


def write_atomic(path: Path, text: str) -> None:
    """Write via a sibling temp file so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def run_tag(tc: TrainConfig) -> str:
    eps = tc.epsilon_per_round if tc.dp_enabled else math.inf
    return f"{tc.method}_nc{tc.dropout_ratio:g}_eps{eps:g}_mu{tc.reg_factor:g}_epochs{tc.epochs_local}_seed{tc.master_seed}"


def load_datasets(cfg: config.ExperimentConfig, seed: int) -> list[datasets.ClientDataset]:
    if cfg.data_source == "csv_dir":
        return datasets.load_csv_dir(cfg.csv_dir)
    return datasets.generate_synthetic(cfg.num_communities, cfg.samples_per_community, seed,
                                       heterogeneity=cfg.heterogeneity)


def _run_point(cfg: config.ExperimentConfig, tc: TrainConfig) -> tuple[str, str, dict]:
    tag = run_tag(tc)
    run_dir = Path(cfg.output_dir) / "runs" / tag
    sim_tmp = None
    if cfg.dump_similarity and tc.substitution:
        run_dir.mkdir(parents=True, exist_ok=True)
        sim_tmp = run_dir / ".similarity.csv.partial"
        sim_tmp.unlink(missing_ok=True)
    log.info("running %s", tag)
    result = run_experiment(tc, load_datasets(cfg, tc.master_seed), similarity_dump=sim_tmp)
    text = metrics_csv(result.reports)
    write_atomic(run_dir / "metrics.csv", text)
    if sim_tmp is not None:
        os.replace(sim_tmp, run_dir / "similarity.csv")
    return tag, metrics_csv(result.reports, {"run": tag}), asdict(result.summary())


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def run(cfg: config.ExperimentConfig) -> list[dict]:
    """Run every sweep point and write metrics.csv, summary.json and config_resolved.txt.

    Returns the comparison-table rows.
    """
    problems = config.validate(cfg)
    if problems:
        raise config.ConfigError("; ".join(problems))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "config_resolved.txt", config.dump(cfg))

    points = cfg.sweep_points()
    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_point, [cfg] * len(points), points))
    else:
        results = [_run_point(cfg, tc) for tc in points]

    # sweep order, not completion order, keeps the combined file deterministic
    parts = [text if k == 0 else text.split("\n", 1)[1] for k, (_, text, _) in enumerate(results)]
    write_atomic(out / "metrics.csv", "".join(parts))

    summaries = [RunSummary(**{**s, "nrmse": tuple(s["nrmse"])}) for _, _, s in results]
    rows = comparison_table(summaries)
    doc = {
        "preset": cfg.preset,
        "backend": _backend.name,
        "table": rows,
        "runs": [{"tag": tag, **s} for tag, _, s in results],
    }
    write_atomic(out / "summary.json", json.dumps(_jsonable(doc), indent=2) + "\n")
    write_atomic(out / "table.txt", format_table(rows) + "\n")
    return rows
