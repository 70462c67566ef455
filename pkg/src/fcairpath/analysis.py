"""Frequency-domain coupling and robustness analysis.

Relative gain arrays quantify input-output pairing strength across
frequency; classical margins come from crossover search on a scalar loop;
disk margins come from the peak of the balanced sensitivity (S - T)/2 of a
multivariable loop, either one channel at a time (remaining loops closed) or
for simultaneous perturbations on all channels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .lti import LtiError, TransferMatrix

__all__ = [
    "DEFAULT_GRID",
    "RGAResult",
    "DiskMarginResult",
    "rga",
    "rga_sweep",
    "classical_margins",
    "disk_margins",
    "balanced_sensitivity_peak",
    "write_rga_csv",
    "write_margin_csv",
]

# log-spaced default analysis grid [rad/s]
DEFAULT_GRID = np.logspace(-2.0, 4.0, 400)


def _response(loop, omega: float) -> np.ndarray:
    """Frequency response of ``loop``, which may be a TransferMatrix, a
    StateSpaceModel, or a plain callable omega -> complex matrix."""
    fr = getattr(loop, "freq_response", None)
    if fr is not None:
        return np.atleast_2d(np.asarray(fr(omega), dtype=complex))
    return np.atleast_2d(np.asarray(loop(omega), dtype=complex))


# ---------------------------------------------------------------------------
# relative gain array
# ---------------------------------------------------------------------------

def rga(g, omega: float) -> np.ndarray:
    """Relative gain array G(jw) * (G(jw)^-1)^T (elementwise product).

    Raises :class:`LtiError` when G(jw) is numerically singular; the message
    reports the condition number so the caller can tell near-singularity
    from a structural rank defect.
    """
    gw = _response(g, omega)
    if gw.shape[0] != gw.shape[1]:
        raise LtiError(f"RGA needs a square matrix, got {gw.shape}")
    cond = np.linalg.cond(gw)
    if not np.isfinite(cond) or cond > 1e12:
        raise LtiError(
            f"G(j{omega:g}) is singular to working precision "
            f"(condition number {cond:.3e})")
    return gw * np.linalg.inv(gw).T


@dataclass
class RGAResult:
    """RGA magnitudes over a frequency grid."""

    frequencies: np.ndarray
    matrices: list = field(repr=False)   # complex RGA per frequency

    def magnitudes(self) -> np.ndarray:
        return np.array([np.abs(m) for m in self.matrices])


def rga_sweep(g, frequencies=None) -> RGAResult:
    if frequencies is None:
        frequencies = DEFAULT_GRID
    frequencies = np.asarray(frequencies, dtype=float)
    mats = [rga(g, w) for w in frequencies]
    return RGAResult(frequencies, mats)


def write_rga_csv(result: RGAResult, path) -> None:
    n = result.matrices[0].shape[0]
    header = ["omega_rad_s"] + [f"abs_r{i + 1}{j + 1}"
                                for i in range(n) for j in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w, m in zip(result.frequencies, result.matrices):
            writer.writerow([f"{w:.17g}"]
                            + [f"{abs(m[i, j]):.17g}"
                               for i in range(n) for j in range(n)])


# ---------------------------------------------------------------------------
# classical margins on a scalar loop
# ---------------------------------------------------------------------------

def _bisect(f, lo: float, hi: float, iters: int = 80) -> float:
    flo = f(lo)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)  # geometric midpoint suits log-spaced grids
        fm = f(mid)
        if flo * fm <= 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
        if hi / lo < 1.0 + 1e-13:
            break
    return math.sqrt(lo * hi)


def classical_margins(loop, frequencies=None) -> tuple:
    """Gain margin [dB] and phase margin [deg] of a scalar loop transfer.

    Crossovers are located on a log grid and refined by bisection.  Missing
    crossovers yield ``math.inf`` sentinels (no 180-degree crossing means
    infinite gain margin; no unity-gain crossing means infinite phase
    margin).  Returns (gm_db, pm_deg, omega_180, omega_crossover).
    """
    if frequencies is None:
        frequencies = DEFAULT_GRID
    ws = np.asarray(frequencies, dtype=float)
    resp = np.array([complex(np.asarray(_response(loop, w)).reshape(-1)[0])
                     for w in ws])

    def value(w) -> complex:
        return complex(np.asarray(_response(loop, w)).reshape(-1)[0])

    # gain margin: crossings of the negative real axis
    gm_db = math.inf
    omega_180 = math.inf
    imags = resp.imag
    for k in range(ws.size - 1):
        if imags[k] == 0.0 and resp[k].real < 0.0:
            w180 = ws[k]
        elif imags[k] * imags[k + 1] < 0.0 and (resp[k].real < 0.0
                                                or resp[k + 1].real < 0.0):
            w180 = _bisect(lambda w: value(w).imag, ws[k], ws[k + 1])
            if value(w180).real >= 0.0:
                continue
        else:
            continue
        mag = abs(value(w180))
        if mag > 0.0:
            cand = -20.0 * math.log10(mag)
            if cand < gm_db:
                gm_db = cand
                omega_180 = w180

    # phase margin: unity-gain crossover
    pm_deg = math.inf
    omega_c = math.inf
    mags = np.abs(resp) - 1.0
    for k in range(ws.size - 1):
        if mags[k] * mags[k + 1] < 0.0 or mags[k] == 0.0:
            wc = _bisect(lambda w: abs(value(w)) - 1.0, ws[k], ws[k + 1])
            cand = 180.0 + math.degrees(np.angle(value(wc)))
            if cand < pm_deg:
                pm_deg = cand
                omega_c = wc
    return gm_db, pm_deg, omega_180, omega_c


# ---------------------------------------------------------------------------
# disk margins
# ---------------------------------------------------------------------------

def _balanced_sensitivity(lw: np.ndarray) -> np.ndarray:
    n = lw.shape[0]
    return np.linalg.solve(np.eye(n) + lw, np.eye(n) - lw)


def balanced_sensitivity_peak(loop, channel, frequencies=None) -> tuple:
    """Peak over frequency of ``|((S - T))_ii|`` for a single channel index,
    or of the largest singular value of S - T for ``channel='both'``.

    Returns (peak, omega_at_peak).  The peak is refined by golden-section
    search around the best grid point.
    """
    if frequencies is None:
        frequencies = DEFAULT_GRID
    ws = np.asarray(frequencies, dtype=float)

    def metric(w: float) -> float:
        m = _balanced_sensitivity(_response(loop, w))
        if channel == "both":
            return float(np.linalg.svd(m, compute_uv=False)[0])
        return float(abs(m[channel, channel]))

    vals = np.array([metric(w) for w in ws])
    k = int(np.argmax(vals))
    lo = ws[max(k - 1, 0)]
    hi = ws[min(k + 1, ws.size - 1)]
    # golden-section refinement on the log axis
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = metric(math.exp(c)), metric(math.exp(d))
    for _ in range(60):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = metric(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = metric(math.exp(d))
    w_peak = math.exp(0.5 * (a + b))
    return max(vals[k], metric(w_peak)), w_peak


@dataclass
class DiskMarginResult:
    """Symmetric (zero-skew) disk margin for one channel selection."""

    channel: object            # 0, 1, ... or "both"
    alpha: float               # disk radius, 1/peak(S - T)
    gain_margin_db: float      # inf when alpha >= 1
    phase_margin_deg: float
    peak: float                # peak balanced-sensitivity magnitude
    peak_frequency: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.gain_margin_db)


def disk_margins(loop, channel, frequencies=None) -> DiskMarginResult:
    """Symmetric disk margin of a closed loop broken at the plant input.

    ``loop`` is the (matrix) loop transfer seen at the break point with all
    other loops closed; ``channel`` selects a single input index for
    loop-at-a-time margins or ``'both'`` for simultaneous perturbation of
    every channel.  The disk radius is the reciprocal of the peak balanced
    sensitivity; gain range is +-20*log10((1+alpha)/(1-alpha)) dB and phase
    range +-2*atan(alpha).
    """
    peak, w_peak = balanced_sensitivity_peak(loop, channel, frequencies)
    if peak <= 0.0:
        return DiskMarginResult(channel, math.inf, math.inf, 180.0, 0.0, w_peak)
    alpha = 1.0 / peak
    if alpha >= 1.0:
        gm = math.inf
    else:
        gm = 20.0 * math.log10((1.0 + alpha) / (1.0 - alpha))
    pm = 2.0 * math.degrees(math.atan(alpha))
    return DiskMarginResult(channel, alpha, gm, pm, peak, w_peak)


def write_margin_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "alpha", "gain_margin_db",
                         "phase_margin_deg", "peak", "peak_frequency_rad_s"])
        for r in results:
            writer.writerow([r.channel, f"{r.alpha:.17g}",
                             f"{r.gain_margin_db:.17g}",
                             f"{r.phase_margin_deg:.17g}",
                             f"{r.peak:.17g}", f"{r.peak_frequency:.17g}"])
