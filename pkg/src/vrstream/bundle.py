"""Plain-text output files: solution bundles, session reports and comparison tables.

Every file set is staged in a temporary directory next to its destination and
moved into place only after all files were written.
"""

from __future__ import annotations

import csv
import io
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .optimizer import Multipliers, Solution

FORMAT_VERSION = 1


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def keyvalue_text(pairs: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in pairs.items())


def read_keyvalue(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def write_files_atomic(out_dir: str | Path, files: dict[str, str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, text in files.items():
            with open(stage / name, "w", newline="") as fh:
                fh.write(text)
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def header_fields(kind: str, config_hash: str) -> dict:
    return {
        "format": f"vrstream-{kind}",
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config_hash": config_hash,
    }


def solution_files(solution: Solution, summary: dict, config_hash: str, sweep_rows=None) -> dict[str, str]:
    S, K = solution.streams.shape
    meta = header_fields("solution", config_hash)
    meta.update(
        num_streams=S,
        K=K,
        **{"lambda": solution.multipliers.lam},
        mu=solution.multipliers.mu,
        expected_distortion=solution.expected_distortion,
        storage_rate=solution.storage_rate,
        transmission_rate=solution.transmission_rate,
        lagrangian=solution.lagrangian,
        iterations=solution.iterations,
        note=solution.note,
    )
    meta.update(summary)
    files = {
        "solution.txt": keyvalue_text(meta),
        "streams.csv": csv_text(
            ["angle"] + [f"stream_{i + 1}" for i in range(S)],
            ([k + 1] + list(solution.streams[:, k]) for k in range(K)),
        ),
        "mapping.csv": csv_text(["angle", "stream"], ([k + 1, int(s) + 1] for k, s in enumerate(solution.mapping))),
    }
    if sweep_rows is not None:
        files["sweep.csv"] = csv_text(
            ["num_streams", "feasible", "chosen_streams", "expected_distortion", "expected_psnr",
             "storage_rate", "transmission_rate", "lambda", "mu", "note"],
            sweep_rows,
        )
    return files


def read_solution(bundle_dir: str | Path) -> tuple[Solution, dict[str, str]]:
    d = Path(bundle_dir)
    if not (d / "solution.txt").exists():
        raise FileNotFoundError(f"no solution bundle at {d}")
    meta = read_keyvalue(d / "solution.txt")
    if meta.get("format") != "vrstream-solution":
        raise ValueError(f"{d}: not a solution bundle")
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported bundle version {meta.get('format_version')}")
    streams = np.loadtxt(d / "streams.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:].T
    mapping = np.loadtxt(d / "mapping.csv", delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)[:, 1] - 1
    sol = Solution(
        streams=np.ascontiguousarray(streams),
        mapping=mapping,
        multipliers=Multipliers(float(meta["lambda"]), float(meta["mu"])),
        expected_distortion=float(meta["expected_distortion"]),
        storage_rate=float(meta["storage_rate"]),
        transmission_rate=float(meta["transmission_rate"]),
        lagrangian_trace=[float(meta["lagrangian"])],
        iterations=int(meta["iterations"]),
        note=meta.get("note", ""),
    )
    return sol, meta
