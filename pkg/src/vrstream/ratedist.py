"""Clipped-Laplacian rate model, RD fitting and two-level Lloyd-Max quantization."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_D_MAX = 46.0
DEFAULT_RATE_FLOOR = 1e-9


class RateModelError(ValueError):
    pass


@dataclass(frozen=True)
class RateModel:
    """``g(d) = exp(-d / sigma^2)`` for ``d < d_max`` and 0 beyond.

    ``amplitude`` converts the dimensionless ``g`` into the units of the
    samples it was fitted from; budgets are expressed in units of ``g``.
    """

    sigma: float
    d_max: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise RateModelError(f"sigma must be positive, got {self.sigma}")
        if not self.d_max > 0:
            raise RateModelError(f"d_max must be positive, got {self.d_max}")
        if not self.amplitude > 0:
            raise RateModelError(f"amplitude must be positive, got {self.amplitude}")

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def min_encoded_rate(self) -> float:
        """Rate of one angle encoded just below ``d_max``; no positive rate is cheaper."""
        return float(np.exp(-self.d_max / self.sigma2))

    def g(self, d):
        d = np.asarray(d, dtype=float)
        return np.where(d < self.d_max, np.exp(-d / self.sigma2), 0.0)

    def distortion_for_rate(self, rate_per_angle: float) -> float:
        """Inverse of ``g`` clamped into ``[0, d_max]``."""
        if rate_per_angle >= 1.0:
            return 0.0
        if rate_per_angle <= 0.0:
            return self.d_max
        return float(min(-self.sigma2 * np.log(rate_per_angle), self.d_max))


def rate_of_distortion(model: RateModel, d: float) -> float:
    if d < 0:
        raise RateModelError(f"distortion must be non-negative, got {d}")
    return float(model.g(d))


def stream_rate(model: RateModel, d, K: int | None = None) -> float:
    d = np.asarray(d, dtype=float)
    if K is not None and d.shape != (K,):
        raise RateModelError(f"distortion vector has shape {d.shape}, expected ({K},)")
    if np.any(d < 0):
        raise RateModelError("distortion entries must be non-negative")
    return float(model.g(d).sum())


def stream_rates(model: RateModel, D: np.ndarray) -> np.ndarray:
    """Per-stream rates for an ``(S, K)`` distortion array."""
    return model.g(D).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class RdSampleSet:
    distortion: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distortion, dtype=float)
        r = np.asarray(self.rate, dtype=float)
        if d.shape != r.shape or d.ndim != 1:
            raise RateModelError("distortion and rate must be 1-D arrays of equal length")
        validate_samples(d, r)
        object.__setattr__(self, "distortion", d)
        object.__setattr__(self, "rate", r)

    def __len__(self):
        return len(self.distortion)


def validate_samples(d: np.ndarray, r: np.ndarray, first_row: int = 1) -> None:
    """Raise naming the first offending row (``first_row`` numbers the first sample)."""
    for i in range(len(d)):
        row = first_row + i
        if d[i] < 0 or not np.isfinite(d[i]):
            raise RateModelError(f"row {row}: distortion {d[i]} must be finite and non-negative")
        if r[i] < 0 or not np.isfinite(r[i]):
            raise RateModelError(f"row {row}: rate {r[i]} must be finite and non-negative")
        if i and d[i] <= d[i - 1]:
            raise RateModelError(f"row {row}: distortions must be strictly increasing")
        if i and r[i] > r[i - 1]:
            raise RateModelError(f"row {row}: rates must be non-increasing")


@dataclass(frozen=True)
class FitResult:
    model: RateModel
    residual: float
    used: int


def fit_rate_model(
    samples: RdSampleSet,
    d_max: float = DEFAULT_D_MAX,
    rate_floor: float = DEFAULT_RATE_FLOOR,
) -> FitResult:
    """Fit ``log r = log(amplitude) - d / sigma^2`` by least squares.

    ``d_max`` becomes the smallest sampled distortion whose rate is below
    ``rate_floor``; when no sample clips, the supplied ``d_max`` is kept.
    Only samples below the clip point enter the regression.
    """
    d, r = samples.distortion, samples.rate
    clipped = np.flatnonzero(r < rate_floor)
    if clipped.size:
        d_max = float(d[clipped[0]])
    keep = (r >= rate_floor) & (d < d_max)
    if np.count_nonzero(keep) < 3:
        raise RateModelError(
            f"insufficient samples: need >= 3 with positive rate below d_max, got {np.count_nonzero(keep)}"
        )
    x, y = d[keep], np.log(r[keep])
    if np.ptp(x) == 0:
        raise RateModelError("degenerate samples: all distortions equal")
    slope, intercept = np.polyfit(x, y, 1)
    if slope >= 0:
        raise RateModelError(f"degenerate fit: log-rate slope {slope:.3g} is not negative")
    resid = y - (intercept + slope * x)
    model = RateModel(sigma=float(np.sqrt(-1.0 / slope)), d_max=d_max, amplitude=float(np.exp(intercept)))
    return FitResult(model, float(np.sqrt(np.mean(resid**2))), int(np.count_nonzero(keep)))


def read_rd_samples(path: str | Path) -> RdSampleSet:
    """Two-column CSV with a header row naming ``distortion`` and ``rate``."""
    with open(path, newline="") as fh:
        rows = [rec for rec in csv.reader(fh) if rec and any(c.strip() for c in rec)]
    if not rows:
        raise RateModelError(f"{path}: insufficient samples (empty file)")
    header = [c.strip().lower() for c in rows[0]]
    if header != ["distortion", "rate"]:
        raise RateModelError(f"{path}: header must be 'distortion,rate', got {','.join(rows[0])!r}")
    d, r = [], []
    for lineno, rec in enumerate(rows[1:], start=2):
        if len(rec) != 2:
            raise RateModelError(f"{path}: row {lineno}: expected 2 columns, got {len(rec)}")
        try:
            d.append(float(rec[0]))
            r.append(float(rec[1]))
        except ValueError:
            raise RateModelError(f"{path}: row {lineno}: non-numeric value") from None
    if len(d) < 3:
        raise RateModelError(f"{path}: insufficient samples ({len(d)})")
    d, r = np.array(d), np.array(r)
    try:
        validate_samples(d, r, first_row=2)
    except RateModelError as exc:
        raise RateModelError(f"{path}: {exc}") from None
    return RdSampleSet(d, r)


def write_rd_samples(samples: RdSampleSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distortion", "rate"])
        for d, r in zip(samples.distortion, samples.rate):
            w.writerow([repr(float(d)), repr(float(r))])


def write_rate_model(model: RateModel, path: str | Path, extra: dict | None = None) -> str:
    lines = [f"sigma={model.sigma!r}", f"d_max={model.d_max!r}", f"amplitude={model.amplitude!r}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    return text


def read_rate_model(path: str | Path) -> RateModel:
    vals = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        vals[key.strip()] = value.strip()
    try:
        return RateModel(
            sigma=float(vals["sigma"]),
            d_max=float(vals["d_max"]),
            amplitude=float(vals.get("amplitude", 1.0)),
        )
    except KeyError as exc:
        raise RateModelError(f"{path}: missing key {exc.args[0]}") from None


# -- two-level quantization ---------------------------------------------------

LOW, HIGH, UNENCODED = 0, 1, 2


@dataclass(frozen=True, eq=False)
class TwoLevelQuantization:
    levels: tuple[float, float]
    assignment: np.ndarray  # LOW / HIGH / UNENCODED per angle
    boundary: float
    iterations: int
    weighted_mse: float

    def apply(self, d, d_max: float) -> np.ndarray:
        """Quantized distortion vector: encoded angles snap to their level."""
        out = np.full(len(self.assignment), float(d_max))
        out[self.assignment == LOW] = self.levels[0]
        out[self.assignment == HIGH] = self.levels[1]
        return out


def _weighted_quantile(x: np.ndarray, w: np.ndarray, p: float) -> float:
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cw = np.cumsum(ws)
    if cw[-1] <= 0:
        return float(np.quantile(xs, p))
    idx = np.searchsorted(cw, p * cw[-1], side="left")
    return float(xs[min(idx, len(xs) - 1)])


def _weighted_mean(x, w, fallback):
    if len(x) and x.min() == x.max():
        return float(x[0])  # w*x/w can round away from x
    s = w.sum()
    if s > 0:
        return float((w * x).sum() / s)
    return float(x.mean()) if len(x) else fallback


def _best_split_levels(x: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Centroids and error of the best contiguous split, via prefix sums."""
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cw, cwx, cwx2 = np.cumsum(ws), np.cumsum(ws * xs), np.cumsum(ws * xs * xs)
    tw, twx, twx2 = cw[-1], cwx[-1], cwx2[-1]

    def err(sw, swx, swx2):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sw > 0, swx2 - swx * swx / sw, 0.0)

    left = err(cw[:-1], cwx[:-1], cwx2[:-1])
    right = err(tw - cw[:-1], twx - cwx[:-1], twx2 - cwx2[:-1])
    total = left + right
    if len(total) == 0:
        return float(xs[0]), float(xs[0]), 0.0
    i = int(np.argmin(total))
    lo = _weighted_mean(xs[: i + 1], ws[: i + 1], float(xs[0]))
    hi = _weighted_mean(xs[i + 1:], ws[i + 1:], float(xs[-1]))
    return lo, hi, float(max(total[i], 0.0))


def _lloyd(x, wx, lo, hi, max_iters):
    """Centroid updates until the midpoint partition repeats; returns the update count."""
    cell = x <= 0.5 * (lo + hi)
    it = 0
    while it < max_iters:
        lo = _weighted_mean(x[cell], wx[cell], lo)
        hi = _weighted_mean(x[~cell], wx[~cell], hi)
        it += 1
        nxt = x <= 0.5 * (lo + hi)
        if np.array_equal(nxt, cell):
            break
        cell = nxt
    mse = float((wx * (x - np.where(cell, lo, hi)) ** 2).sum())
    return lo, hi, cell, mse, it


def lloyd_max_two_level(d, weights, d_max: float, max_iters: int | None = None) -> TwoLevelQuantization:
    """Two-level weighted Lloyd-Max quantizer over the encoded (``d < d_max``) entries.

    Starts from the weighted 25th/75th percentiles and alternates
    centroid / midpoint updates until the partition stops changing. Entries
    exactly on the boundary go to the low level. A fixed point that is worse
    than the best contiguous split of the sorted entries is restarted from
    that split, so the result is the optimal two-level quantizer.
    """
    d = np.asarray(d, dtype=float)
    w = np.asarray(weights, dtype=float)
    if d.shape != w.shape:
        raise RateModelError("distortion and weight vectors differ in length")
    if np.any(w < 0):
        raise RateModelError("weights must be non-negative")
    enc = d < d_max
    if not enc.any():
        raise RateModelError("all angles unencoded; nothing to quantize")
    x, wx = d[enc], w[enc]
    if max_iters is None:
        max_iters = 2 * len(d)

    lo, hi, cell, mse, it = _lloyd(
        x, wx, _weighted_quantile(x, wx, 0.25), _weighted_quantile(x, wx, 0.75), max_iters
    )
    s_lo, s_hi, s_err = _best_split_levels(x, wx)
    if s_err < mse - 1e-12 * max(1.0, mse):
        lo, hi, cell, mse, extra = _lloyd(x, wx, s_lo, s_hi, max_iters)
        it += extra

    assignment = np.full(len(d), UNENCODED, dtype=np.int8)
    idx = np.flatnonzero(enc)
    assignment[idx[cell]] = LOW
    assignment[idx[~cell]] = HIGH
    return TwoLevelQuantization((lo, hi), assignment, 0.5 * (lo + hi), it, mse)
