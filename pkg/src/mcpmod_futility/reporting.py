"""CSV output, its typed read-back, and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import numpy as np

ROW_COLUMNS = (
    "scenario", "lpfv_t", "rho", "effect", "n_total", "rep", "interim_frac", "tau", "method",
    "n_recruited", "n_complete", "sigma_hat", "info_frac", "pred_power", "cond_power_planned",
    "cond_power_interim", "final_rejected", "error",
)
_INT = {"n_total", "rep", "n_recruited", "n_complete", "n", "percentile"}
_STR = {"scenario", "effect", "method", "error", "metric", "cut"}
_BOOL = {"final_rejected"}


def _cell(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows, columns=None) -> None:
    """Comma-separated, header row, LF line ends; floats written round-trip exact."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _parse(col: str, v: str):
    if col in _STR:
        return v
    if col in _BOOL:
        return v == "1"
    if col in _INT:
        return int(v)
    return float(v) if v else math.nan


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{c: _parse(c, v) for c, v in row.items()} for row in reader]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config_path, seed, files, wall_clock, version, status="ok",
                   failures=()) -> str:
    """``manifest.json`` listing every output file with its sha256."""
    entries = {os.path.basename(f): sha256(f) for f in files if os.path.exists(f)}
    manifest = {
        "command": command,
        "config": str(config_path) if config_path else None,
        "seed": seed,
        "out": str(out_dir),
        "version": version,
        "wall_clock_s": round(wall_clock, 3),
        "status": status,
        "failures": list(failures),
        "files": entries,
    }
    path = os.path.join(str(out_dir), "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
