"""Inter-subject synchrony features and their statistical tests.

ISC is the per-channel Pearson correlation of two amplitude envelopes, PLV
the per-channel magnitude of the time-averaged unit phasor of the phase
difference; both are averaged over channels to give one scalar per pair.
Group differences are assessed with a Welch two-sample t-test after a
Shapiro-Wilk normality check (Royston's AS R94 approximation, n <= 5000).

All functions are pure; report assembly is deterministic regardless of
evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .errors import (
    DegenerateDataError,
    InsufficientDataError,
    ShapeError,
    UnsupportedSizeError,
)
from .signal import BAND_ORDER, BandSpec, bandpass, hilbert_analytic, EEGRecording

SIGNIFICANCE_LEVEL = 0.05
MARGINAL_LEVEL = 0.10


def isc(amp_x: np.ndarray, amp_y: np.ndarray) -> float:
    """Inter-subject correlation: mean over channels of the Pearson
    correlation between the two subjects' amplitude envelopes.

    Raises ``DegenerateDataError`` naming the first zero-variance channel.
    """
    amp_x = np.atleast_2d(np.asarray(amp_x, dtype=np.float64))
    amp_y = np.atleast_2d(np.asarray(amp_y, dtype=np.float64))
    if amp_x.shape != amp_y.shape:
        raise ShapeError(f"envelope shapes differ: {amp_x.shape} vs {amp_y.shape}")
    xc = amp_x - amp_x.mean(axis=1, keepdims=True)
    yc = amp_y - amp_y.mean(axis=1, keepdims=True)
    sx = np.sqrt((xc * xc).sum(axis=1))
    sy = np.sqrt((yc * yc).sum(axis=1))
    for ch, (a, b) in enumerate(zip(sx, sy)):
        if a == 0.0 or b == 0.0:
            raise DegenerateDataError(f"zero-variance envelope on channel {ch}")
    r = (xc * yc).sum(axis=1) / (sx * sy)
    return float(np.mean(r))


def plv(phase_x: np.ndarray, phase_y: np.ndarray) -> float:
    """Phase-locking value: mean over channels of |mean_t exp(i dphi(t))|."""
    phase_x = np.atleast_2d(np.asarray(phase_x, dtype=np.float64))
    phase_y = np.atleast_2d(np.asarray(phase_y, dtype=np.float64))
    if phase_x.shape != phase_y.shape:
        raise ShapeError(f"phase shapes differ: {phase_x.shape} vs {phase_y.shape}")
    if phase_x.shape[1] < 1:
        raise InsufficientDataError("PLV needs at least one time point")
    phasors = np.exp(1j * (phase_x - phase_y))
    return float(np.mean(np.abs(phasors.mean(axis=1))))


# -- Shapiro-Wilk (Royston AS R94) --------------------------------------------

_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981)


def _poly(coeffs: Sequence[float], x: float) -> float:
    out = 0.0
    for c in coeffs:
        out = out * x + c
    return out


def shapiro_wilk(sample: Iterable[float]) -> tuple[float, float]:
    """W statistic and p-value of the Shapiro-Wilk normality test.

    Uses Royston's approximation for the order-statistic weights and the
    normalizing transformation of W; supports 3 <= n <= 5000.
    """
    x = np.sort(np.asarray(list(sample), dtype=np.float64))
    n = x.size
    if n < 3 or n > 5000:
        raise UnsupportedSizeError(f"Shapiro-Wilk supports 3 <= n <= 5000, got {n}")
    if x[0] == x[-1]:
        raise DegenerateDataError("all sample values are equal")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    msq = float(m @ m)
    rsn = 1.0 / math.sqrt(n)
    weights = np.empty(n)
    if n == 3:
        weights[0], weights[1], weights[2] = -math.sqrt(0.5), 0.0, math.sqrt(0.5)
    else:
        a_n = _poly(_SW_C1, rsn) + m[-1] / math.sqrt(msq)
        if n > 5:
            a_n1 = _poly(_SW_C2, rsn) + m[-2] / math.sqrt(msq)
            phi = (msq - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
                1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
            )
            weights[2:-2] = m[2:-2] / math.sqrt(phi)
            weights[-2], weights[1] = a_n1, -a_n1
        else:
            phi = (msq - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
            weights[1:-1] = m[1:-1] / math.sqrt(phi)
        weights[-1], weights[0] = a_n, -a_n

    centered = x - x.mean()
    w = float((weights @ x) ** 2 / (centered @ centered))
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        arg = gamma - math.log(1.0 - w)
        if arg <= 0:
            return w, 0.0
        z = (-math.log(arg) - mu) / sigma
    else:
        u = math.log(n)
        mu = -1.5861 - 0.31082 * u - 0.083751 * u**2 + 0.0038915 * u**3
        sigma = math.exp(-0.4803 - 0.082676 * u + 0.0030302 * u**2)
        z = (math.log(1.0 - w) - mu) / sigma
    return w, float(1.0 - ndtr(z))


def t_test(group_a: Iterable[float], group_b: Iterable[float]) -> tuple[float, float]:
    """Welch two-sample t-test (unequal variances), two-sided p-value.

    Degrees of freedom follow Welch-Satterthwaite; the statistic is
    mean(a) - mean(b) over the standard error.
    """
    a = np.asarray(list(group_a), dtype=np.float64)
    b = np.asarray(list(group_b), dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError("each group needs at least two values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateDataError("non-finite values in t-test input")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise DegenerateDataError("both groups have zero variance")
    qa, qb = va / a.size, vb / b.size
    se = math.sqrt(qa + qb)
    t = (a.mean() - b.mean()) / se
    df = (qa + qb) ** 2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    p = 2.0 * float(stdtr(df, -abs(t)))
    return float(t), p


# -- per-pair features and the group report -----------------------------------


@dataclass
class PairFeature:
    """Per-band ISC (in [-1, 1]) and PLV (in [0, 1]) for one dyad sample."""

    isc_per_band: dict[str, float]
    plv_per_band: dict[str, float]


def pair_features(
    sample,
    bands: Sequence[str] = BAND_ORDER,
    sample_rate_hz: float = 200.0,
    per_window: bool = False,
) -> PairFeature:
    """Band-limited ISC/PLV for one ``DyadicSample``.

    The concatenated per-sample series is filtered per band and turned into
    analytic amplitude/phase. With ``per_window`` the features are computed
    per 2-second window and averaged instead of over the whole series.
    """
    data_x = sample.x.concatenated
    data_y = sample.y.concatenated
    window = data_x.shape[1] // sample.x.n_segments
    isc_map: dict[str, float] = {}
    plv_map: dict[str, float] = {}
    for name in bands:
        band = BandSpec.of(name)
        fx = bandpass(EEGRecording(data_x, sample_rate_hz), band)
        fy = bandpass(EEGRecording(data_y, sample_rate_hz), band)
        ax = hilbert_analytic(fx)
        ay = hilbert_analytic(fy)
        if per_window:
            n_win = data_x.shape[1] // window
            isc_vals = []
            plv_vals = []
            for k in range(n_win):
                sl = slice(k * window, (k + 1) * window)
                isc_vals.append(isc(ax.amplitude[:, sl], ay.amplitude[:, sl]))
                plv_vals.append(plv(ax.phase[:, sl], ay.phase[:, sl]))
            isc_map[name] = float(np.mean(isc_vals))
            plv_map[name] = float(np.mean(plv_vals))
        else:
            isc_map[name] = isc(ax.amplitude, ay.amplitude)
            plv_map[name] = plv(ax.phase, ay.phase)
    return PairFeature(isc_per_band=isc_map, plv_per_band=plv_map)


@dataclass
class ReportRow:
    iv: str
    feature: str  # "PLV" or "ISC"
    band: str
    statistic: float
    p_value: float

    @property
    def significance(self) -> str:
        if self.p_value < SIGNIFICANCE_LEVEL:
            return "yes"
        if self.p_value < MARGINAL_LEVEL:
            return "marginal"
        return "no"


@dataclass
class SynchronyReport:
    """One t-test row per (feature, band), in PLV-theta..ISC-gamma order."""

    iv: str
    rows: list[ReportRow]
    group_labels: tuple[str, str]
    group_sizes: tuple[int, int]

    def to_csv(self) -> str:
        lines = ["iv,feature,band,statistic,p_value,significant"]
        for row in self.rows:
            lines.append(
                f"{row.iv},{row.feature},{row.band},"
                f"{row.statistic:.6g},{row.p_value:.6g},{row.significance}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def significant_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.significance == "yes"]


@dataclass
class _PairAccumulator:
    label: str
    features: list[PairFeature] = field(default_factory=list)


def synchrony_table(
    items: Sequence[tuple],
    grouping: Callable,
    iv_name: str = "relation",
    bands: Sequence[str] = BAND_ORDER,
) -> SynchronyReport:
    """Welch t-tests of per-pair ISC/PLV between the two groups defined by
    ``grouping``.

    ``items`` pairs each ``DyadicSample`` with its ``PairFeature``; samples of
    the same dyad are averaged into one scalar per (feature, band) before
    testing. Exactly two group labels with >= 2 pairs each are required.
    """
    by_pair: dict[str, _PairAccumulator] = {}
    for sample, feature in items:
        acc = by_pair.setdefault(sample.pair_id, _PairAccumulator(label=grouping(sample)))
        if acc.label != grouping(sample):
            raise DegenerateDataError(
                f"pair {sample.pair_id} maps to multiple groups"
            )
        acc.features.append(feature)

    labels = sorted({acc.label for acc in by_pair.values()})
    if len(labels) != 2:
        raise InsufficientDataError(
            f"grouping must produce exactly two groups, got {labels}"
        )
    groups: dict[str, list[_PairAccumulator]] = {lab: [] for lab in labels}
    for acc in by_pair.values():
        groups[acc.label].append(acc)
    for lab in labels:
        if len(groups[lab]) < 2:
            raise InsufficientDataError(f"group '{lab}' has fewer than two pairs")

    def per_pair_values(label: str, feature: str, band: str) -> list[float]:
        out = []
        for acc in groups[label]:
            if feature == "ISC":
                vals = [f.isc_per_band[band] for f in acc.features]
            else:
                vals = [f.plv_per_band[band] for f in acc.features]
            out.append(float(np.mean(vals)))
        return out

    rows = []
    for feature in ("PLV", "ISC"):
        for band in bands:
            stat, p = t_test(
                per_pair_values(labels[0], feature, band),
                per_pair_values(labels[1], feature, band),
            )
            rows.append(ReportRow(iv=iv_name, feature=feature, band=band,
                                  statistic=stat, p_value=p))
    return SynchronyReport(
        iv=iv_name,
        rows=rows,
        group_labels=(labels[0], labels[1]),
        group_sizes=(len(groups[labels[0]]), len(groups[labels[1]])),
    )
