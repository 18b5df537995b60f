# dptr_cli/core_api/results_io.py
import hashlib
import json
import logging
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from dptr_cli import __version__
from dptr_cli.core import config

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "run_id",
    "cell_id",
    "replication",
    "method",
    "reward",
    "or",
    "vdp",
    "accuracy",
    "recall",
    "specificity",
    "precision",
    "tp",
    "tn",
    "fp",
    "fn",
    "beta_summary",
    "tau0_hat",
    "error_tag",
]
AGGREGATE_METRICS = ["reward", "or", "vdp", "accuracy", "recall", "specificity", "precision"]
AGGREGATE_COLUMNS = [
    "cell_id",
    "method",
    "metric",
    "mean",
    "sd",
    "count",
    "excluded",
    "diff_p2_5",
    "diff_p50",
    "diff_p97_5",
]
BASELINE_METHOD = "IHT"
_PERCENTILES = [2.5, 50.0, 97.5]

REPLICATIONS_FILE = "replications.csv"
AGGREGATES_FILE = "aggregates.csv"
MANIFEST_FILE = "manifest.json"

# Fields that change how a run executes but not what it computes.
_NON_SEMANTIC_FIELDS = {"parallelism", "output_dir"}


def run_identifier(run_config: BaseModel) -> str:
    """Content hash of the resolved config, stable across machines and worker counts."""
    payload = run_config.model_dump(mode="json", exclude=_NON_SEMANTIC_FIELDS)
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
    return digest[:12]


def version_string() -> str:
    """git-describe output when running from a checkout, else the package version."""
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=config.PROJECT_ROOT,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe unavailable: {e}")
    return f"v{__version__}"


def _order_columns(rows: pd.DataFrame) -> pd.DataFrame:
    return rows.reindex(columns=RESULT_COLUMNS)


def _summarise(values: pd.Series) -> Dict[str, Any]:
    present = values.dropna().astype(float)
    return {
        "mean": float(present.mean()) if len(present) else None,
        "sd": float(present.std(ddof=1)) if len(present) > 1 else None,
        "count": int(len(present)),
        "excluded": int(values.isna().sum()),
    }


def aggregate(rows: pd.DataFrame) -> pd.DataFrame:
    """Per (cell, method, metric): mean, sd, effective count and percentiles of method - IHT.

    Metrics that are absent in every replication produce no row.
    """
    rows = _order_columns(rows)
    records: List[Dict[str, Any]] = []
    if rows.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    for cell_id, cell_rows in rows.groupby("cell_id", sort=True):
        baseline = cell_rows[cell_rows["method"] == BASELINE_METHOD].set_index("replication")
        for method in pd.unique(cell_rows["method"]):
            method_rows = cell_rows[cell_rows["method"] == method].set_index("replication")
            for metric in AGGREGATE_METRICS:
                summary = _summarise(method_rows[metric])
                if summary["count"] == 0:
                    continue
                quantiles = [None, None, None]
                if method != BASELINE_METHOD and not baseline.empty:
                    diff = (method_rows[metric].astype(float) - baseline[metric].astype(float)).dropna()
                    if len(diff):
                        quantiles = [float(q) for q in np.percentile(diff.to_numpy(), _PERCENTILES)]
                records.append(
                    {
                        "cell_id": cell_id,
                        "method": method,
                        "metric": metric,
                        **summary,
                        "diff_p2_5": quantiles[0],
                        "diff_p50": quantiles[1],
                        "diff_p97_5": quantiles[2],
                    }
                )
    return pd.DataFrame.from_records(records, columns=AGGREGATE_COLUMNS)


def exclusion_counts(rows: pd.DataFrame) -> Dict[str, Dict[str, int]]:
    """Number of absent values per method and metric (undefined ratios and failed replications)."""
    rows = _order_columns(rows)
    counts: Dict[str, Dict[str, int]] = {}
    for method in pd.unique(rows["method"]):
        method_rows = rows[rows["method"] == method]
        counts[str(method)] = {m: int(method_rows[m].isna().sum()) for m in AGGREGATE_METRICS}
    return counts


def build_manifest(
    run_config: BaseModel,
    run_id: str,
    rows: pd.DataFrame,
    elapsed_seconds: float,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    rows = _order_columns(rows)
    manifest = {
        "run_id": run_id,
        "version": version_string(),
        "created_at": datetime.now(timezone.utc).isoformat(),
        "elapsed_seconds": elapsed_seconds,
        "resolved_config": run_config.model_dump(mode="json"),
        "master_seed": getattr(run_config, "master_seed", None),
        "row_count": int(len(rows)),
        "failed_rows": int(rows["error_tag"].notna().sum()),
        "exclusions": exclusion_counts(rows),
    }
    if extra:
        manifest.update(extra)
    return manifest


def emit_results(
    rows: pd.DataFrame,
    aggregates: pd.DataFrame,
    manifest: Dict[str, Any],
    output_dir: Path,
) -> Dict[str, Path]:
    """Writes the per-replication CSV, the aggregate CSV and the JSON manifest."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "replications": output_dir / REPLICATIONS_FILE,
        "aggregates": output_dir / AGGREGATES_FILE,
        "manifest": output_dir / MANIFEST_FILE,
    }
    _order_columns(rows).to_csv(paths["replications"], index=False, float_format=config.FLOAT_FORMAT)
    aggregates.reindex(columns=AGGREGATE_COLUMNS).to_csv(
        paths["aggregates"], index=False, float_format=config.FLOAT_FORMAT
    )
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, default=str)
    logger.info(f"Wrote {len(rows)} replication rows and {len(aggregates)} aggregate rows to {output_dir}")
    return paths


def headline(aggregates: pd.DataFrame, metrics=("or", "reward")) -> List[Dict[str, Any]]:
    """Mean of the headline metrics per (cell, method), for terminal and JSON summaries."""
    records: List[Dict[str, Any]] = []
    picked = aggregates[aggregates["metric"].isin(metrics)]
    for (cell_id, method), rows in picked.groupby(["cell_id", "method"], sort=False):
        record: Dict[str, Any] = {"cell_id": int(cell_id), "method": str(method)}
        record.update({m: None for m in metrics})
        record.update({str(m): float(v) for m, v in zip(rows["metric"], rows["mean"])})
        records.append(record)
    return records
