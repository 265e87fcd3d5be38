"""Multi-stream design by alternating minimization of the Lagrangian.

Streams are held as an ``(S, K)`` array of per-angle distortions and the
mapping as a length-``K`` integer array (0-based stream index per feedback
angle).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ratedist import RateModel, stream_rates
from .viewmodel import (
    FovOperator,
    SteadyState,
    TransitionModel,
    ViewSpace,
    circular_distance,
    cumulative_weights,
    fov_matrix,
    steady_state,
)

log = logging.getLogger(__name__)

MULT_LO = 1e-6
MULT_HI = 1e6
BISECT_ITERS = 40
ALT_TOL = 1e-6
ALT_MAX_ITERS = 500


@dataclass(frozen=True, eq=False)
class OptimizationProblem:
    space: ViewSpace
    model: TransitionModel
    rate_model: RateModel
    T_s: int
    H: int
    C: float
    B: float
    Q: float = 1.0
    fov: FovOperator | None = None
    steady: SteadyState | None = None
    fov_first: bool = False

    def __post_init__(self):
        if self.T_s < 0:
            raise ValueError("T_s must be >= 0")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not self.C > 0:
            raise ValueError("transmission budget C must be positive")
        if not (self.B > 0 and self.Q > 0):
            raise ValueError("storage budget B/Q must be positive")
        if self.model.K != self.space.K:
            raise ValueError(f"transition model has K={self.model.K}, view space K={self.space.K}")
        if self.fov is None:
            object.__setattr__(self, "fov", fov_matrix(self.space))
        if self.steady is None:
            object.__setattr__(self, "steady", steady_state(self.model))

    @property
    def K(self) -> int:
        return self.space.K

    @property
    def q(self) -> np.ndarray:
        return self.steady.q

    @property
    def storage_budget(self) -> float:
        return self.B / self.Q

    @cached_property
    def weights(self) -> np.ndarray:
        """Row ``k``: FoV weights summed over the GOP frames served by feedback angle ``k``."""
        return cumulative_weights(self.model, self.fov, self.T_s, self.H, self.fov_first)

    @cached_property
    def q_weights(self) -> np.ndarray:
        return self.q[:, None] * self.weights

    def with_budgets(self, C: float | None = None, B: float | None = None) -> "OptimizationProblem":
        p = OptimizationProblem(
            self.space, self.model, self.rate_model, self.T_s, self.H,
            self.C if C is None else C, self.B if B is None else B, self.Q,
            self.fov, self.steady, self.fov_first,
        )
        # cached matrices do not depend on budgets
        for name in ("weights", "q_weights"):
            if name in self.__dict__:
                p.__dict__[name] = self.__dict__[name]
        return p

    def per_frame(self, D: float) -> float:
        """Mean per-frame FoV distortion from an expected-distortion value."""
        return D / (self.space.fov_size * self.H)


@dataclass(frozen=True)
class Multipliers:
    lam: float
    mu: float

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("multipliers must be non-negative")


@dataclass(eq=False)
class Solution:
    streams: np.ndarray
    mapping: np.ndarray
    multipliers: Multipliers
    expected_distortion: float
    storage_rate: float
    transmission_rate: float
    lagrangian_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    note: str = ""

    @property
    def num_streams(self) -> int:
        return self.streams.shape[0]

    @property
    def lagrangian(self) -> float:
        return self.lagrangian_trace[-1] if self.lagrangian_trace else math.nan

    @property
    def infeasible(self) -> bool:
        return self.note.startswith("infeasible")


# -- objective ----------------------------------------------------------------

def expected_distortion(problem: OptimizationProblem, streams, mapping) -> float:
    streams = np.asarray(streams, dtype=float)
    per_k = np.einsum("kl,kl->k", problem.q_weights, streams[np.asarray(mapping)])
    return float(per_k.sum())


def expected_distortion_intra(problem: OptimizationProblem, streams, mapping) -> float:
    """Expected distortion of the first frame after a switch only (the all-intra form)."""
    streams = np.asarray(streams, dtype=float)
    W = cumulative_weights(problem.model, problem.fov, problem.T_s, 1, problem.fov_first)
    per_k = np.einsum("kl,kl->k", problem.q[:, None] * W, streams[np.asarray(mapping)])
    return float(per_k.sum())


def storage_rate(problem: OptimizationProblem, streams) -> float:
    return float(stream_rates(problem.rate_model, np.asarray(streams, dtype=float)).sum())


def transmission_rate(problem: OptimizationProblem, streams, mapping) -> float:
    r = stream_rates(problem.rate_model, np.asarray(streams, dtype=float))
    return float(problem.q @ r[np.asarray(mapping)])


def lagrangian(problem: OptimizationProblem, streams, mapping, mult: Multipliers) -> float:
    streams = np.asarray(streams, dtype=float)
    r = stream_rates(problem.rate_model, streams)
    return (
        expected_distortion(problem, streams, mapping)
        + mult.lam * float(r.sum())
        + mult.mu * float(problem.q @ r[np.asarray(mapping)])
    )


# -- block updates ------------------------------------------------------------

def optimal_distortion(A, gamma, rm: RateModel) -> np.ndarray:
    """Per-entry minimizer of ``A*d + gamma*g(d)`` over ``[0, d_max]``.

    The stationary point ``-sigma^2 log(sigma^2 A / gamma)`` is clamped at 0.
    Because ``g`` drops to zero at ``d_max``, leaving the angle unencoded is
    compared against it and wins ties.
    """
    A = np.asarray(A, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), A.shape)
    s2 = rm.sigma2
    out = np.full(A.shape, float(rm.d_max))
    pos = A > 0
    with np.errstate(divide="ignore"):
        d = -s2 * np.log(s2 * A[pos] / gamma[pos])
    d = np.maximum(d, 0.0)
    interior = d < rm.d_max
    cost_interior = A[pos] * d + gamma[pos] * np.exp(-d / s2)
    cost_skip = A[pos] * rm.d_max
    take = interior & (cost_interior < cost_skip)
    out[pos] = np.where(take, d, rm.d_max)
    return out


def stream_loads(problem: OptimizationProblem, mapping, num_streams: int):
    """``A[i] = sum_{k: f(k)=i} q_k G[k]`` and ``Q[i] = sum_{k: f(k)=i} q_k``."""
    onehot = np.zeros((num_streams, problem.K))
    onehot[np.asarray(mapping), np.arange(problem.K)] = 1.0
    return onehot @ problem.q_weights, onehot @ problem.q


def update_distortions(problem: OptimizationProblem, streams, mapping, mult: Multipliers) -> np.ndarray:
    streams = np.asarray(streams, dtype=float)
    A, qsum = stream_loads(problem, mapping, streams.shape[0])
    gamma = mult.lam + mult.mu * qsum
    used = qsum > 0
    if np.any(gamma[used] <= 0):
        raise ValueError("gamma = 0 for a mapped stream: need lambda > 0 or mu > 0")
    out = streams.copy()
    out[used] = optimal_distortion(A[used], gamma[used, None], problem.rate_model)
    return out


def update_mapping(problem: OptimizationProblem, streams, mult: Multipliers) -> np.ndarray:
    streams = np.asarray(streams, dtype=float)
    r = stream_rates(problem.rate_model, streams)
    cost = problem.weights @ streams.T + mult.mu * r[None, :]
    return np.argmin(cost, axis=1)


def prune(streams, mapping):
    """Drop streams no angle maps to, renumbering the rest in order."""
    used = np.unique(mapping)
    if len(used) == streams.shape[0]:
        return streams, mapping
    remap = np.full(streams.shape[0], -1)
    remap[used] = np.arange(len(used))
    return streams[used], remap[mapping]


def stream_centers(K: int, num_streams: int) -> np.ndarray:
    """0-based centers evenly spread over the circle."""
    return np.floor(K * np.arange(num_streams) / num_streams + 0.5).astype(int) % K


def initialize(problem: OptimizationProblem, num_streams: int) -> tuple[np.ndarray, np.ndarray]:
    K = problem.K
    if not 1 <= num_streams <= K:
        raise ValueError(f"num_streams must be in [1, {K}], got {num_streams}")
    rm = problem.rate_model
    centers = stream_centers(K, num_streams)
    reach = problem.T_s * problem.model.v_max + problem.space.a
    dist = circular_distance(centers[:, None], np.arange(K)[None, :], K)
    window = dist <= reach
    streams = np.full((num_streams, K), float(rm.d_max))
    for i in range(num_streams):
        n_low = int(window[i].sum())
        streams[i, window[i]] = rm.distortion_for_rate(problem.C / n_low)
    mapping = np.argmin(dist, axis=0)
    return streams, mapping


def _summarize(problem, streams, mapping, mult, trace, iterations, note="") -> Solution:
    return Solution(
        streams=streams,
        mapping=np.asarray(mapping, dtype=int),
        multipliers=mult,
        expected_distortion=expected_distortion(problem, streams, mapping),
        storage_rate=storage_rate(problem, streams),
        transmission_rate=transmission_rate(problem, streams, mapping),
        lagrangian_trace=trace,
        iterations=iterations,
        note=note,
    )


def alternate(
    problem: OptimizationProblem,
    streams,
    mapping,
    mult: Multipliers,
    tol: float = ALT_TOL,
    max_iters: int = ALT_MAX_ITERS,
) -> Solution:
    """Alternate closed-form distortion and mapping updates until the relative
    Lagrangian improvement over one full iteration drops below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    streams = np.array(streams, dtype=float)
    mapping = np.array(mapping, dtype=int)
    L = lagrangian(problem, streams, mapping, mult)
    trace = [L]
    it = 0
    for it in range(1, max_iters + 1):
        streams = update_distortions(problem, streams, mapping, mult)
        trace.append(lagrangian(problem, streams, mapping, mult))
        mapping = update_mapping(problem, streams, mult)
        L_new = lagrangian(problem, streams, mapping, mult)
        trace.append(L_new)
        if L - L_new < tol * max(abs(L), 1e-300):
            break
        L = L_new
    n_before = streams.shape[0]
    streams, mapping = prune(streams, mapping)
    if streams.shape[0] < n_before:
        trace.append(lagrangian(problem, streams, mapping, mult))
    return _summarize(problem, streams, mapping, mult, trace, it)


# -- multiplier search --------------------------------------------------------

def _solve(problem, num_streams, lam, mu, tol, max_iters) -> Solution:
    s, f = initialize(problem, num_streams)
    return alternate(problem, s, f, Multipliers(lam, mu), tol, max_iters)


def _bisect(probe, rate_of, budget, frac, lo=MULT_LO, hi=MULT_HI, iters=BISECT_ITERS):
    """Smallest multiplier (log-scale bisection) whose probe meets ``budget``.

    Returns ``(multiplier, solution, active)``. Rates are treated as
    non-increasing in the multiplier.
    """
    sol = probe(lo)
    if rate_of(sol) <= budget:
        return lo, sol, False
    best_m, best = hi, probe(hi)
    if rate_of(best) > budget:
        return hi, best, True
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        if rate_of(best) >= budget * (1.0 - frac):
            break
        mid = 0.5 * (a + b)
        sol = probe(math.exp(mid))
        if rate_of(sol) <= budget:
            b, best_m, best = mid, math.exp(mid), sol
        else:
            a = mid
    return best_m, best, True


def tune_multipliers(
    problem: OptimizationProblem,
    num_streams: int,
    tolerance_fraction: float = 1e-3,
    tol: float = ALT_TOL,
    max_iters: int = ALT_MAX_ITERS,
) -> Solution:
    """Pick (lambda, mu) so the alternating solution meets both budgets.

    Nested log-scale bisection: for each probed lambda the smallest feasible
    mu is found for the transmission budget, and lambda is bisected on the
    storage budget. Returns the trivial all-``d_max`` solution, flagged in
    ``note``, when no angle can be encoded within the budgets.
    """
    rm = problem.rate_model
    C, SB = problem.C, problem.storage_budget
    if min(C, SB) < rm.min_encoded_rate:
        binding = "transmission" if C <= SB else "storage"
        streams = np.full((1, problem.K), float(rm.d_max))
        mapping = np.zeros(problem.K, dtype=int)
        mult = Multipliers(MULT_HI, MULT_HI)
        L = lagrangian(problem, streams, mapping, mult)
        return _summarize(problem, streams, mapping, mult, [L], 0, note=f"infeasible:{binding}")

    inner_cache: dict[float, Solution] = {}

    def inner(lam: float) -> Solution:
        if lam not in inner_cache:
            _, sol, _ = _bisect(
                lambda mu: _solve(problem, num_streams, lam, mu, tol, max_iters),
                lambda s: s.transmission_rate,
                C,
                tolerance_fraction,
            )
            inner_cache[lam] = sol
        return inner_cache[lam]

    _, sol, _ = _bisect(inner, lambda s: s.storage_rate, SB, tolerance_fraction)
    return sol


@dataclass
class SweepResult:
    best: Solution
    table: list[tuple[int, Solution]]


def is_feasible(problem: OptimizationProblem, sol: Solution, frac: float) -> bool:
    return (
        sol.storage_rate <= problem.storage_budget * (1 + frac)
        and sol.transmission_rate <= problem.C * (1 + frac)
    )


def sweep_stream_count(
    problem: OptimizationProblem,
    max_streams: int,
    tolerance_fraction: float = 1e-3,
    tol: float = ALT_TOL,
    max_iters: int = ALT_MAX_ITERS,
) -> SweepResult:
    if max_streams < 1:
        raise ValueError("max_streams must be >= 1")
    table: list[tuple[int, Solution]] = []
    best = None
    for n in range(1, min(max_streams, problem.K) + 1):
        sol = tune_multipliers(problem, n, tolerance_fraction, tol, max_iters)
        table.append((n, sol))
        if sol.infeasible or not is_feasible(problem, sol, tolerance_fraction):
            log.info("|S|=%d infeasible (%s)", n, sol.note or "rates over budget")
        elif best is None or sol.expected_distortion < best.expected_distortion:
            best = sol
    if best is None:
        best = table[0][1]
    return SweepResult(best, table)
