"""RTT-delayed multi-stream session simulator and the static single-stream baseline.

Traces are drawn with numpy's ``PCG64`` bit generator: one ``random()`` double
per frame, mapped through the cumulative row of ``P`` (first index whose
cumulative probability exceeds the draw). The first draw selects ``theta[0]``
from the steady state the same way.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optimizer import (
    Multipliers,
    OptimizationProblem,
    Solution,
    expected_distortion,
    lagrangian,
    storage_rate,
    transmission_rate,
)
from .ratedist import RateModel, stream_rates
from .viewmodel import TransitionModel, ViewSpace, fov_matrix, steady_state

PSNR_CEILING = 99.0
PEAK = 255.0


def psnr(mse: float, ceiling: float = PSNR_CEILING) -> float:
    if mse < 0:
        raise ValueError("MSE must be non-negative")
    if mse == 0:
        return ceiling
    return min(10.0 * math.log10(PEAK * PEAK / mse), ceiling)


@dataclass(frozen=True)
class SessionConfig:
    T_s: int
    H: int
    duration_frames: int
    seed: int = 0
    skip_warmup: bool = False

    def __post_init__(self):
        if self.duration_frames < 1:
            raise ValueError("duration_frames must be >= 1")
        if self.T_s < 0 or self.H < 1:
            raise ValueError("need T_s >= 0 and H >= 1")


@dataclass(frozen=True, eq=False)
class HeadTrace:
    angles: np.ndarray  # 0-based

    def __len__(self):
        return len(self.angles)


@dataclass(eq=False)
class SessionReport:
    per_frame_distortion: np.ndarray
    served: np.ndarray
    decisions: np.ndarray  # rows of (GOP start frame, feedback frame used)
    mean_distortion: float
    mean_psnr: float
    switch_count: int
    transmitted_rate_mean: float
    stream_occupancy: np.ndarray

    def summary(self) -> dict[str, str]:
        return {
            "frames": str(len(self.per_frame_distortion)),
            "mean_distortion": repr(self.mean_distortion),
            "mean_psnr_trace": repr(self.mean_psnr),
            "switch_count": str(self.switch_count),
            "transmitted_rate_mean": repr(self.transmitted_rate_mean),
            "stream_occupancy": ";".join(repr(float(x)) for x in self.stream_occupancy),
        }


def sample_trace(model: TransitionModel, length: int, seed: int, q: np.ndarray | None = None) -> HeadTrace:
    if length < 1:
        raise ValueError("trace length must be >= 1")
    if q is None:
        q = steady_state(model).q
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(length).tolist()
    rows = [np.cumsum(row).tolist() for row in model.P]
    # a draw past the rounded-down final cumulative sum goes to the last reachable angle
    last = [int(np.flatnonzero(row)[-1]) for row in model.P]
    q = np.asarray(q, dtype=float)
    q_cdf = np.cumsum(q).tolist()
    out = np.empty(length, dtype=np.int64)
    k = min(bisect_right(q_cdf, u[0]), int(np.flatnonzero(q)[-1]))
    out[0] = k
    for n in range(1, length):
        nxt = bisect_right(rows[k], u[n])
        k = nxt if nxt <= last[k] else last[k]
        out[n] = k
    return HeadTrace(out)


def load_trace_csv(path: str | Path, K: int) -> HeadTrace:
    angles = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not rec[0].strip():
                continue
            try:
                k = int(rec[0])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: not an integer angle") from None
            if not 1 <= k <= K:
                raise ValueError(f"{path}: line {lineno}: angle {k} outside 1..{K}")
            angles.append(k - 1)
    if not angles:
        raise ValueError(f"{path}: empty trace")
    return HeadTrace(np.array(angles, dtype=np.int64))


def write_trace_csv(trace: HeadTrace, path: str | Path) -> None:
    Path(path).write_text("".join(f"{int(k) + 1}\n" for k in trace.angles))


def served_streams(mapping: np.ndarray, angles: np.ndarray, T_s: int, H: int, n: int):
    """Stream index played at each of the first ``n`` frames.

    A GOP starting at frame ``g`` is served by ``f(theta[g - T_s])``; GOPs
    starting before ``T_s`` keep the initial stream ``f(theta[0])``. Also
    returns the ``(gop_start, feedback_frame)`` pairs of every switch decision.
    """
    starts = np.arange(0, n, H)
    fb = starts - T_s
    per_gop = np.asarray(mapping)[angles[np.maximum(fb, 0)]]
    served = np.repeat(per_gop, H)[:n]
    decided = fb >= 0
    return served, np.column_stack([starts[decided], fb[decided]])


def simulate_session(
    solution: Solution,
    trace: HeadTrace,
    config: SessionConfig,
    rate_model: RateModel,
    a: int,
) -> SessionReport:
    n = config.duration_frames
    if len(trace) < n:
        raise ValueError(f"trace has {len(trace)} frames, session needs {n}")
    streams = np.asarray(solution.streams, dtype=float)
    S, K = streams.shape
    angles = np.asarray(trace.angles[:n])
    served, decisions = served_streams(solution.mapping, angles, config.T_s, config.H, n)

    # FoV mean of every stream around every angle, then index per frame
    fov = fov_matrix(ViewSpace(K, a)).C.astype(float)
    fov_mean = streams @ fov.T / (1 + 2 * a)  # (S, K)
    dist = fov_mean[served, angles]

    start = config.T_s if config.skip_warmup else 0
    start = min(start, n - 1)
    window = dist[start:]
    served_w = served[start:]
    rates = stream_rates(rate_model, streams)
    mean_d = float(window.mean())
    return SessionReport(
        per_frame_distortion=dist,
        served=served,
        decisions=decisions,
        mean_distortion=mean_d,
        mean_psnr=psnr(mean_d),
        switch_count=int(np.count_nonzero(served_w[1:] != served_w[:-1])),
        transmitted_rate_mean=float(rates[served_w].mean()),
        stream_occupancy=np.bincount(served_w, minlength=S) / len(served_w),
    )


def static_baseline(problem: OptimizationProblem) -> Solution:
    """One stream at uniform distortion with ``K * g(d) = C``."""
    rm = problem.rate_model
    K = problem.K
    d = rm.distortion_for_rate(problem.C / K)
    streams = np.full((1, K), d)
    mapping = np.zeros(K, dtype=int)
    mult = Multipliers(0.0, 0.0)
    return Solution(
        streams=streams,
        mapping=mapping,
        multipliers=mult,
        expected_distortion=expected_distortion(problem, streams, mapping),
        storage_rate=storage_rate(problem, streams),
        transmission_rate=transmission_rate(problem, streams, mapping),
        lagrangian_trace=[lagrangian(problem, streams, mapping, mult)],
        note="static",
    )
