"""Static set-point maps from stack current to air references.

The flow reference is a straight line whose slope fixes the steady-state
oxygen excess ratio at 2.  The pressure reference comes from a lookup table
built offline: at each grid current the supply pressure is swept, the
steady state any asymptotically-tracking pressure loop would reach is
evaluated in closed form, and the pressure with the best net system
efficiency is kept, then polished by golden-section ascent.  Stored values
are projected to be nondecreasing in current before use.

Grid points are independent of each other, so a caller may evaluate them in
parallel; the returned map is immutable.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import plant
from .plant import PlantParams, tracked_equilibrium

__all__ = [
    "AMBIENT_PRESSURE",
    "SetpointMap",
    "flow_gain",
    "flow_setpoint",
    "pressure_setpoint",
    "equilibrium_evaluator",
    "generate_pressure_lut",
    "build_setpoint_map",
    "write_lut_csv",
    "read_lut_csv",
    "DEFAULT_CURRENT_GRID",
    "DEFAULT_PRESSURE_GRID",
]

AMBIENT_PRESSURE = 101325.0

# operating envelope used for offline map generation
DEFAULT_CURRENT_GRID = np.arange(75.0, 212.5 + 1e-9, 12.5)
DEFAULT_PRESSURE_GRID = np.arange(1.3e5, 3.0e5 + 1.0, 1.0e4)

# refinement stops once the search bracket is this tight [Pa]
REFINE_TOL = 100.0


@dataclass(frozen=True)
class SetpointMap:
    """Flow gain plus the pressure lookup table.

    ``currents`` must be strictly increasing and ``pressures`` must lie
    within [ambient, 3 x ambient]; interpolation between breakpoints is
    linear with clamping at the ends.
    """

    flow_gain: float
    currents: np.ndarray
    pressures: np.ndarray
    interpolation: str = "linear"
    failed_currents: tuple = field(default=(), compare=False)

    def __post_init__(self):
        cur = np.asarray(self.currents, dtype=float)
        pre = np.asarray(self.pressures, dtype=float)
        object.__setattr__(self, "currents", cur)
        object.__setattr__(self, "pressures", pre)
        if self.flow_gain <= 0.0:
            raise ValueError("flow gain must be positive")
        if cur.ndim != 1 or cur.size < 2 or np.any(np.diff(cur) <= 0.0):
            raise ValueError("LUT breakpoints must be strictly increasing")
        if pre.shape != cur.shape:
            raise ValueError("LUT values and breakpoints differ in length")
        if np.any(pre < AMBIENT_PRESSURE) or np.any(pre > 3.0 * AMBIENT_PRESSURE):
            raise ValueError("LUT pressures outside [ambient, 3*ambient]")
        if self.interpolation != "linear":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")


def flow_gain(n_cells: float, lambda_ref: float = 2.0) -> float:
    """Compressor-flow slope [kg/(s*A)] holding the oxygen excess ratio at
    ``lambda_ref`` in steady state."""
    return ((1.0 + plant.OMEGA_ATM) / plant.X_O2_ATM
            * n_cells * plant.M_O2 / (4.0 * plant.FARADAY) * lambda_ref)


def flow_setpoint(i_st: float, smap: SetpointMap) -> float:
    if i_st < 0.0:
        raise ValueError("stack current must be nonnegative")
    return smap.flow_gain * i_st


def pressure_setpoint(i_st: float, smap: SetpointMap) -> float:
    """Piecewise-linear interpolation of the LUT, clamped at both ends."""
    return float(np.interp(i_st, smap.currents, smap.pressures))


def equilibrium_evaluator(params: PlantParams, lambda_ref: float = 2.0):
    """Steady-state efficiency under ideal flow/pressure tracking.

    Any controller with asymptotic reference tracking settles at the
    equilibrium with compressor flow and supply pressure pinned to their
    references, so that equilibrium is evaluated directly instead of
    time-marching each candidate.  Returns ``(eta, feasible)``; the
    evaluator carries the matching ``flow_gain`` attribute.
    """
    gain = flow_gain(params.n_cells, lambda_ref)

    def evaluate(i_st: float, p_sm: float):
        eq = tracked_equilibrium(params, i_st, gain * i_st, p_sm)
        return eq.outputs.eta, eq.feasible

    evaluate.flow_gain = gain
    return evaluate


def _golden_refine(f, lo, hi, tol=REFINE_TOL):
    """Golden-section ascent of a scalar function on [lo, hi]; infeasible
    samples count as -inf."""
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - inv * (b - a)
    x2 = a + inv * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv * (b - a)
            f1 = f(x1)
    return 0.5 * (a + b)


def generate_pressure_lut(evaluator, i_grid=None, p_grid=None,
                          flow_gain_value=None) -> SetpointMap:
    """Build the efficiency-optimal pressure LUT.

    ``evaluator(i_st, p_sm) -> (eta, feasible)`` supplies the steady-state
    net efficiency.  Per current: coarse argmax over ``p_grid``, then
    golden-section refinement between the neighboring grid points down to
    100 Pa.  Currents with no feasible pressure are interpolated from their
    neighbors with a warning.  Stored pressures are projected onto the
    nondecreasing cone (pool-adjacent-violators) before the map is frozen.
    """
    i_grid = DEFAULT_CURRENT_GRID if i_grid is None else np.asarray(i_grid, float)
    p_grid = DEFAULT_PRESSURE_GRID if p_grid is None else np.asarray(p_grid, float)
    if flow_gain_value is None:
        flow_gain_value = getattr(evaluator, "flow_gain", None)
    if flow_gain_value is None:
        raise ValueError("flow gain not provided and evaluator carries none")

    optima = np.full(i_grid.size, np.nan)
    for n, i_st in enumerate(i_grid):
        etas = np.full(p_grid.size, -np.inf)
        for j, p_sm in enumerate(p_grid):
            eta, ok = evaluator(i_st, p_sm)
            if ok:
                etas[j] = eta
        if not np.any(np.isfinite(etas)):
            continue
        k = int(np.argmax(etas))
        lo = p_grid[max(k - 1, 0)]
        hi = p_grid[min(k + 1, p_grid.size - 1)]

        def eta_of(p_sm, i_st=i_st):
            eta, ok = evaluator(i_st, p_sm)
            return eta if ok else -np.inf

        optima[n] = _golden_refine(eta_of, lo, hi)

    failed = np.nonzero(~np.isfinite(optima))[0]
    if failed.size == i_grid.size:
        raise ValueError("no feasible pressure at any grid current")
    if failed.size:
        good = np.isfinite(optima)
        optima[~good] = np.interp(i_grid[~good], i_grid[good], optima[good])
        warnings.warn(
            "no steady state at I = "
            + ", ".join(f"{i_grid[k]:g} A" for k in failed)
            + "; values interpolated from neighbors", RuntimeWarning)

    optima = _isotonic_nondecreasing(optima)
    optima = np.clip(optima, AMBIENT_PRESSURE, 3.0 * AMBIENT_PRESSURE)
    return SetpointMap(flow_gain_value, i_grid, optima,
                       failed_currents=tuple(float(i_grid[k]) for k in failed))


def _isotonic_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Least-squares projection onto nondecreasing sequences."""
    levels = []          # (value, weight) blocks
    for v in np.asarray(y, dtype=float):
        levels.append([v, 1.0])
        while len(levels) > 1 and levels[-2][0] > levels[-1][0]:
            v2, w2 = levels.pop()
            v1, w1 = levels.pop()
            levels.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    out = np.empty(len(y))
    k = 0
    for v, w in levels:
        out[k:k + int(w)] = v
        k += int(w)
    return out


def build_setpoint_map(params: PlantParams, i_grid=None, p_grid=None,
                       lambda_ref: float = 2.0) -> SetpointMap:
    """One-stop map construction from plant parameters."""
    return generate_pressure_lut(equilibrium_evaluator(params, lambda_ref),
                                 i_grid, p_grid)


def write_lut_csv(smap: SetpointMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["I_st_A", "p_sm_Pa"])
        for i_st, p_sm in zip(smap.currents, smap.pressures):
            writer.writerow([f"{i_st:.17g}", f"{p_sm:.17g}"])


def read_lut_csv(path, flow_gain_value: float) -> SetpointMap:
    currents, pressures = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["I_st_A", "p_sm_Pa"]:
            raise ValueError(f"unexpected LUT header {reader.fieldnames}")
        for row in reader:
            currents.append(float(row["I_st_A"]))
            pressures.append(float(row["p_sm_Pa"]))
    return SetpointMap(flow_gain_value, np.array(currents), np.array(pressures))
