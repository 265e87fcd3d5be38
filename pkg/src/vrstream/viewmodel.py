"""Discrete head-rotation interaction model.

Angles are stored 0-based internally (index ``k`` is the angle ``(k+1)*2*pi/K``);
1-based indices only appear at file and CLI boundaries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

ROW_SUM_TOL = 1e-12
STEADY_TOL = 1e-12
STEADY_MAX_ITERS = 100_000


class ModelError(ValueError):
    """Raised when a view model violates one of its invariants."""


class ConvergenceError(ModelError):
    pass


def circular_distance(i, j, K: int):
    d = np.abs(np.asarray(i) - np.asarray(j)) % K
    return np.minimum(d, K - d)


@dataclass(frozen=True)
class ViewSpace:
    K: int
    a: int

    def __post_init__(self):
        if self.K < 2:
            raise ModelError(f"K must be >= 2, got {self.K}")
        if self.a < 0:
            raise ModelError(f"FoV half-width must be >= 0, got {self.a}")
        if 1 + 2 * self.a >= self.K:
            raise ModelError(f"FoV of size {1 + 2 * self.a} spans the whole circle (K={self.K})")

    @property
    def fov_size(self) -> int:
        return 1 + 2 * self.a


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Row-stochastic band-limited transition matrix ``P``."""

    P: np.ndarray
    v_max: int

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ModelError(f"transition matrix must be square, got shape {P.shape}")
        if self.v_max < 1:
            raise ModelError("v_max must be >= 1")
        K = P.shape[0]
        bad = np.argwhere(P < 0)
        if bad.size:
            r, c = bad[0]
            raise ModelError(f"negative probability at row {r + 1}, column {c + 1}")
        dist = circular_distance(np.arange(K)[:, None], np.arange(K)[None, :], K)
        bad = np.argwhere((dist > self.v_max) & (P != 0))
        if bad.size:
            r, c = bad[0]
            raise ModelError(
                f"non-zero probability outside band v_max={self.v_max} at row {r + 1}, column {c + 1}"
            )
        sums = P.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ModelError(f"row {bad[0] + 1} sums to {sums[bad[0]]!r}, not 1")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def K(self) -> int:
        return self.P.shape[0]

    def power(self, n: int) -> np.ndarray:
        return np.linalg.matrix_power(self.P, n)


@dataclass(frozen=True, eq=False)
class SteadyState:
    q: np.ndarray
    iterations: int = 0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True, eq=False)
class FovOperator:
    C: np.ndarray
    a: int

    def __post_init__(self):
        C = np.array(self.C)
        C.setflags(write=False)
        object.__setattr__(self, "C", C)


def build_linear_transition(
    space: ViewSpace,
    v_max: int,
    hotspots: Iterable[tuple[int, float]] = (),
    slope: float | None = None,
) -> TransitionModel:
    """Band-limited transition matrix whose mass decreases linearly with distance.

    In-band weights are ``1 - slope*dist`` before row normalisation. Rows within
    ``v_max`` of a hotspot (0-based angle, multiplier) use ``slope*multiplier``,
    which keeps the viewer near that angle longer. The default slope is
    ``1 / (2*(v_max + 1))``.
    """
    K = space.K
    if v_max < 1:
        raise ModelError("v_max must be >= 1")
    if 2 * v_max + 1 > K:
        raise ModelError(f"band 2*v_max+1={2 * v_max + 1} too wide for K={K}")
    if slope is None:
        slope = 1.0 / (2 * (v_max + 1))
    if slope < 0:
        raise ModelError("slope must be non-negative")

    mult = np.ones(K)
    for angle, m in hotspots:
        if m <= 0:
            raise ModelError(f"hotspot multiplier must be positive, got {m}")
        if m < 1:
            raise ModelError(f"hotspot multiplier must be >= 1, got {m}")
        if not 0 <= angle < K:
            raise ModelError(f"hotspot angle {angle} outside [0, {K})")
        near = circular_distance(np.arange(K), angle, K) <= v_max
        mult[near] = np.maximum(mult[near], m)

    dist = circular_distance(np.arange(K)[:, None], np.arange(K)[None, :], K)
    W = 1.0 - (slope * mult)[:, None] * dist
    W[dist > v_max] = 0.0
    in_band = dist <= v_max
    if np.any(W[in_band] <= 0):
        raise ModelError(
            f"slope {slope} with hotspot multiplier {mult.max()} zeroes in-band weights "
            f"(need slope*multiplier*v_max < 1)"
        )
    # normaliser summed in a fixed order so rows sharing a multiplier are exact shifts
    offsets = np.abs(np.arange(-v_max, v_max + 1))
    Z = np.array([np.sum(1.0 - slope * m * offsets) for m in mult])
    return TransitionModel(W / Z[:, None], v_max)


def steady_state(
    model: TransitionModel, tol: float = STEADY_TOL, max_iters: int = STEADY_MAX_ITERS
) -> SteadyState:
    """Stationary distribution ``q P = q`` by power iteration from the uniform vector."""
    P = model.P
    K = model.K
    q = np.full(K, 1.0 / K)
    for it in range(1, max_iters + 1):
        nxt = q @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - q)) <= tol:
            return SteadyState(nxt, it)
        q = nxt
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations; "
        "transition matrix is likely reducible or periodic"
    )


def fov_matrix(space: ViewSpace) -> FovOperator:
    K, a = space.K, space.a
    dist = circular_distance(np.arange(K)[:, None], np.arange(K)[None, :], K)
    return FovOperator((dist <= a).astype(np.int8), a)


def propagated_weights(
    space: ViewSpace,
    model: TransitionModel,
    fov: FovOperator,
    k: int,
    steps: int,
    fov_first: bool = False,
) -> np.ndarray:
    """FoV-weighted angle distribution ``steps`` frames after feedback angle ``k`` (0-based).

    By default the head moves first and the FoV is taken around where it
    lands (``1_k P^steps C_a``). ``fov_first=True`` gives ``1_k C_a P^steps``;
    the two agree whenever ``P`` is circulant.
    """
    if not 0 <= k < space.K:
        raise IndexError(f"angle {k} outside [0, {space.K})")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    C = fov.C.astype(float)
    Pn = model.power(steps)
    if fov_first:
        return C[k] @ Pn
    return Pn[k] @ C


def cumulative_weights(
    model: TransitionModel, fov: FovOperator, T_s: int, H: int, fov_first: bool = False
) -> np.ndarray:
    """Sum over the GOP of the propagated weight rows, as a K x K matrix.

    Row ``k`` is ``sum_{h<H} propagated_weights(k, T_s + h)``.
    """
    C = fov.C.astype(float)
    Pn = model.power(T_s)
    G = C @ Pn if fov_first else Pn @ C
    for _ in range(1, H):
        Pn = Pn @ model.P
        G = G + (C @ Pn if fov_first else Pn @ C)
    return G


def load_transition_csv(path: str | Path, v_max: int) -> TransitionModel:
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError as exc:
                raise ModelError(f"{path}: row {lineno}: {exc}") from None
    K = len(rows)
    for i, r in enumerate(rows, start=1):
        if len(r) != K:
            raise ModelError(f"{path}: row {i} has {len(r)} columns, expected {K}")
    return TransitionModel(np.array(rows), v_max)


def save_transition_csv(model: TransitionModel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in model.P:
            w.writerow([repr(float(x)) for x in row])
