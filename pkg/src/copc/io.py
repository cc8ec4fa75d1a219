"""Dataset ingestion, flat key-value files, CSV/JSON reports and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .citest import TieredDataset
from .errors import InputError

TIER_SUFFIX = re.compile(r"^(?P<name>.+)\.v(?P<tier>\d+)$")
MISSING = {"", "na", "nan", "null", "none"}


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InputError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(), str(path))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def ingest_csv(
    path,
    outcome: str | None = None,
    tier_map: Mapping[str, int] | str | Path | None = None,
    impute: str | None = None,
) -> tuple[TieredDataset, list[str]]:
    """Read a CSV whose covariate columns are named ``NAME.vK`` (tier ``K``).

    An explicit tier map overrides the naming convention.  Missing cells are
    rejected unless ``impute="mean"``; the outcome column is never imputed.
    Returns the dataset and a list of warnings.
    """
    if impute not in (None, "none", "mean"):
        raise InputError(f"unsupported imputation {impute!r}; only 'mean' is available")
    if isinstance(tier_map, (str, Path)):
        raw_map = load_kv(tier_map)
        try:
            tier_map = {k: int(v) for k, v in raw_map.items()}
        except ValueError:
            raise InputError(f"tier map {tier_map} holds a non-integer tier") from None
    tier_map = dict(tier_map or {})
    warnings: list[str] = []

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        body = [row for row in reader if any(cell.strip() for cell in row)]

    seen = set()
    for h in header:
        if h in seen:
            raise InputError(f"{path}: duplicate column {h!r}")
        seen.add(h)
    if outcome is not None and outcome not in seen:
        raise InputError(f"{path}: outcome column {outcome!r} not found")
    unknown = set(tier_map) - seen
    if unknown:
        raise InputError(f"tier map names unknown columns: {sorted(unknown)}")

    tiers = []
    for h in header:
        if h == outcome:
            tiers.append(None)
        elif h in tier_map:
            tiers.append(int(tier_map[h]))
        else:
            m = TIER_SUFFIX.match(h)
            if not m:
                raise InputError(f"{path}: column {h!r} has no '.vK' suffix and no tier-map entry")
            tiers.append(int(m.group("tier")))

    values = np.empty((len(body), len(header)))
    missing = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            text = cell.strip()
            if text.lower() in MISSING:
                if header[c] == outcome:
                    raise InputError(f"{path}: missing outcome at row {r}")
                if impute != "mean":
                    raise InputError(f"{path}: missing value at row {r}, column {header[c]!r}")
                missing.append((r - 2, c))
                values[r - 2, c] = math.nan
                continue
            try:
                values[r - 2, c] = float(text)
            except ValueError:
                raise InputError(f"{path}: cannot parse {cell!r} at row {r}, column {header[c]!r}") from None
            if not math.isfinite(values[r - 2, c]):
                raise InputError(f"{path}: non-finite value at row {r}, column {header[c]!r}")

    if missing:
        means = np.nanmean(values, axis=0)
        for i, c in missing:
            if math.isnan(means[c]):
                raise InputError(f"{path}: column {header[c]!r} has no observed values")
            values[i, c] = means[c]
        warnings.append(f"mean-imputed {len(missing)} missing cells; full multiple imputation is not performed")

    out_idx = None
    if outcome is not None:
        out_idx = header.index(outcome)
        top = max((t for t in tiers if t is not None), default=0)
        tiers[out_idx] = top + 1
    return TieredDataset(values, header, tiers, out_idx), warnings


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return "" if x is None else str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def write_dataset(d: TieredDataset, path) -> None:
    """Write ``d`` so that :func:`ingest_csv` reads back identical values."""
    rows = []
    for row in d.values:
        rows.append([repr(float(v)) if k != d.outcome else str(int(v)) for k, v in enumerate(row)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.names)
        w.writerows(rows)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return _fmt(x)
        return x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def manifest_path(outdir) -> Path:
    """Next free manifest name; earlier manifests are never overwritten."""
    outdir = Path(outdir)
    p = outdir / "manifest.json"
    k = 1
    while p.exists():
        p = outdir / f"manifest.{k}.json"
        k += 1
    return p


def write_manifest(
    outdir,
    command: str,
    config: Mapping,
    *,
    seeds=None,
    inputs: Sequence = (),
    artifacts: Sequence = (),
    warnings: Sequence[str] = (),
    timings: Mapping | None = None,
    path=None,
) -> Path:
    """Record how the artifacts in ``outdir`` were produced."""
    outdir = Path(outdir)
    path = manifest_path(outdir) if path is None else Path(path)
    doc = {
        "command": command,
        "tool": "copc",
        "version": __version__,
        "config": {k: v for k, v in config.items() if k != "outdir"},
        "seeds": seeds,
        "inputs": {Path(p).name: file_digest(p) for p in inputs},
        "artifacts": {Path(p).name: file_digest(p) for p in artifacts},
        "warnings": list(warnings),
    }
    if timings is not None:
        doc["timings"] = dict(timings)
    write_json(path, doc)
    return path


def histogram_rows(values: Sequence[float], bins: int, upper: float | None = None) -> list[list]:
    """Binned counts of ``values`` over ``[0, upper]``."""
    v = np.asarray(values, dtype=float)
    hi = upper if upper is not None else (float(v.max()) if v.size and v.max() > 0 else 1.0)
    counts, edges = np.histogram(v, bins=bins, range=(0.0, hi))
    return [[float(edges[k]), float(edges[k + 1]), int(counts[k])] for k in range(bins)]
