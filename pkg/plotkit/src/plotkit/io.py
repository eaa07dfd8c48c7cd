"""Schema-checked readers for the exported CSV contracts."""

from __future__ import annotations

from pathlib import Path

EXPORT_SCHEMA = "# splab-export v1"
PASSK_SCHEMA = "# splab-passk v1"
SPARSITY_SCHEMA = "# splab-sparsity v1"
PROBE_SCHEMA = "# splab-probe v1"


class SchemaError(ValueError):
    pass


def _lines(path: Path, schema: str) -> list[str]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(schema):
        raise SchemaError(f"{path}: expected a `{schema}` file")
    return lines


def read_export_csv(path: Path) -> tuple[str, list[tuple[int, float]]]:
    """One exported metric: (metric name, [(iteration, value), ...])."""
    lines = _lines(path, EXPORT_SCHEMA)
    metric = lines[0].partition("metric=")[2].strip() or Path(path).stem
    if lines[1] != "iter,value":
        raise SchemaError(f"{path}: bad header {lines[1]!r}")
    rows = []
    for line in lines[2:]:
        it, _, value = line.partition(",")
        rows.append((int(it), float(value)))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return metric, rows


def read_metric(export_dir: Path, metric: str) -> list[tuple[int, float]]:
    name, rows = read_export_csv(Path(export_dir) / f"{metric}.csv")
    if name != metric:
        raise SchemaError(f"{export_dir}: file claims metric {name!r}, wanted {metric!r}")
    return rows


def read_passk_csv(path: Path) -> list[tuple[int, float]]:
    lines = _lines(path, PASSK_SCHEMA)
    if lines[1] != "k,mean_pass_at_k":
        raise SchemaError(f"{path}: bad header {lines[1]!r}")
    rows = [(int(k), float(v)) for k, _, v in (l.partition(",") for l in lines[2:])]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def read_sparsity_csv(path: Path) -> list[dict]:
    lines = _lines(path, SPARSITY_SCHEMA)
    header = "label,total_params,unchanged,sparsity,tolerance"
    if lines[1] != header:
        raise SchemaError(f"{path}: bad header {lines[1]!r}")
    rows = []
    for line in lines[2:]:
        if line.startswith("#") or line == header:
            continue  # concatenated outputs carry repeated schema/header lines
        label, total, unchanged, sparsity, tol = line.split(",")
        rows.append(
            {
                "label": label,
                "total_params": int(total),
                "unchanged": int(unchanged),
                "sparsity": float(sparsity),
                "tolerance": float(tol),
            }
        )
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def read_probe_csv(path: Path) -> dict[int, list[tuple[int, float]]]:
    """Probe rows grouped by snapshot: {snapshot_iter: [(bucket, value), ...]}."""
    lines = _lines(path, PROBE_SCHEMA)
    if not lines[1].startswith("snapshot_iter,bucket,"):
        raise SchemaError(f"{path}: bad header {lines[1]!r}")
    out: dict[int, list[tuple[int, float]]] = {}
    for line in lines[2:]:
        snap, bucket, value = line.split(",")
        out.setdefault(int(snap), []).append((int(bucket), float(value)))
    if not out:
        raise SchemaError(f"{path}: no data rows")
    return out
