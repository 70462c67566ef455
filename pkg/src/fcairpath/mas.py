"""Maximal admissible sets for discrete linear prediction models.

A polytope in (state, constant-input) space: a pair belongs to the set when
the predicted constrained outputs satisfy S y_k <= s for every future step
and the steady-state output satisfies the slightly shrunk version
S y_inf <= (1 - eps) s.  Finite determination follows the classical
output-admissibility construction: the prediction stack is grown until
newly added rows cannot be active anywhere in the operating envelope.

For cascade governing the prediction model may carry extra constant inputs
(other governors' signals); their columns are stacked by the same recursion
and kept separate so a caller can fold measured values into the offset.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lti import StateSpaceModel

__all__ = [
    "ConstraintSet",
    "MASPolytope",
    "build_mas",
    "build_mas_feedthrough",
    "contains",
    "save_mas",
    "load_mas",
    "DEFAULT_EPS",
    "HORIZON_CAP",
]

DEFAULT_EPS = 0.01
HORIZON_CAP = 200
# rows for this many consecutive steps must be envelope-redundant before
# the stack is declared finitely determined
LOOKAHEAD = 10


@dataclass(frozen=True)
class ConstraintSet:
    """Polyhedral output constraints S y <= s."""

    S: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "s", s)
        if S.shape[0] < 1 or S.shape[0] != s.shape[0]:
            raise ValueError("constraint matrix and offsets disagree in rows")
        if np.any(np.all(S == 0.0, axis=1)):
            raise ValueError("constraint rows must be nonzero")

    @property
    def n_rows(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class MASPolytope:
    """Stacked admissibility rows H_x x + H_v v + sum_i H_w[i] w_i <= h.

    The first q rows are the eps-shrunk steady-state constraint; each
    following block of q rows is one prediction step k = 0..jstar.
    """

    H_x: np.ndarray
    H_v: np.ndarray
    H_w: tuple
    h: np.ndarray
    eps: float
    jstar: int
    model: StateSpaceModel = field(repr=False)

    def __post_init__(self):
        rows = self.h.shape[0]
        if self.H_x.shape[0] != rows or self.H_v.shape[0] != rows:
            raise ValueError("MAS blocks disagree in row count")
        for col in self.H_w:
            if col.shape[0] != rows:
                raise ValueError("MAS blocks disagree in row count")

    @property
    def n_rows(self) -> int:
        return self.h.shape[0]


def _stack_rows(model: StateSpaceModel, c: ConstraintSet, eps: float,
                jstar, box):
    if model.ts <= 0.0:
        raise ValueError("MAS construction needs a discrete-time model")
    a, b, cm, d = model.A, model.B, model.C, model.D
    if np.max(np.abs(np.linalg.eigvals(a))) >= 1.0:
        raise ValueError("unstable prediction model")
    if not 0.0 < eps < 1.0:
        raise ValueError("shrinkage eps must lie in (0, 1)")
    if c.S.shape[1] != model.n_outputs:
        raise ValueError("constraint columns do not match model outputs")

    n = model.n_states
    g_inf = np.linalg.solve(np.eye(n) - a, b)
    ss_x = np.zeros((c.n_rows, n))
    ss_u = c.S @ (cm @ g_inf + d)
    ss_h = (1.0 - eps) * c.s

    if jstar is not None:
        if jstar < 1:
            raise ValueError("horizon must be at least 1")
        ks = jstar
        auto = False
    else:
        if box is None:
            raise ValueError("automatic horizon selection needs an envelope box")
        ks = HORIZON_CAP + LOOKAHEAD
        auto = True

    xs, us, hs = [ss_x], [ss_u], [ss_h]
    a_k = np.eye(n)
    g_k = np.zeros_like(b)
    redundant_streak = 0
    chosen = None
    tight = None
    for k in range(ks + 1):
        row_x = c.S @ cm @ a_k
        row_u = c.S @ (cm @ g_k + d)
        xs.append(row_x)
        us.append(row_u)
        hs.append(c.s)
        if auto and k == 0:
            # late rows approach the steady-state row, so they are only
            # redundant relative to it; fold the steady-state and static
            # rows into the envelope bounds before testing
            rows = np.vstack([np.hstack([ss_x, ss_u]),
                              np.hstack([row_x, row_u])])
            rhs = np.concatenate([ss_h, c.s])
            tight = _tighten_box(box, rows, rhs)
        if auto and k >= 1:
            if _rows_redundant(row_x, row_u, c.s, tight):
                redundant_streak += 1
                if redundant_streak == LOOKAHEAD:
                    chosen = max(1, k - LOOKAHEAD)
                    break
            else:
                redundant_streak = 0
        g_k = g_k + a_k @ b
        a_k = a @ a_k

    if auto:
        if chosen is None:
            chosen = HORIZON_CAP
            warnings.warn("admissibility horizon capped at "
                          f"{HORIZON_CAP} before finite determination",
                          RuntimeWarning)
        jstar = chosen
        keep = 1 + (jstar + 1)
        xs, us, hs = xs[:keep], us[:keep], hs[:keep]
    return np.vstack(xs), np.vstack(us), np.concatenate(hs), jstar


def _tighten_box(box, rows, rhs):
    """Shrink interval bounds on the stacked (x, inputs) vector using the
    given inequality rows (two sweeps of interval propagation)."""
    lo = np.asarray(box[0], dtype=float).copy()
    hi = np.asarray(box[1], dtype=float).copy()
    for _ in range(2):
        for r, b in zip(rows, rhs):
            contrib = np.where(r > 0.0, r * hi, r * lo)
            total = contrib.sum()
            for j in np.nonzero(np.abs(r) > 1e-14)[0]:
                bound = (b - (total - contrib[j])) / r[j]
                if r[j] > 0.0:
                    hi[j] = min(hi[j], max(bound, lo[j]))
                else:
                    lo[j] = max(lo[j], min(bound, hi[j]))
    return lo, hi


def _rows_redundant(row_x, row_u, s, box) -> bool:
    """True when no point of the box [lo, hi] over (x, inputs) activates
    any of the rows."""
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    stacked = np.hstack([row_x, row_u])
    peak = np.where(stacked > 0.0, stacked * hi, stacked * lo).sum(axis=1)
    scale = np.maximum(np.abs(s), 1.0)
    return bool(np.all(peak <= s + 1e-12 * scale))


def build_mas(model: StateSpaceModel, c: ConstraintSet,
              eps: float = DEFAULT_EPS, jstar=None, box=None) -> MASPolytope:
    """MAS for a single governed input.

    With ``jstar=None`` the horizon is selected automatically by redundancy
    detection over ``box`` (bounds on the stacked (x, v) vector), capped at
    200 steps.
    """
    if model.n_inputs != 1:
        raise ValueError("build_mas expects a single-input model; use "
                         "build_mas_feedthrough for extra channels")
    h_x, h_u, h, j = _stack_rows(model, c, eps, jstar, box)
    return MASPolytope(h_x, h_u[:, 0], (), h, eps, j, model)


def build_mas_feedthrough(model: StateSpaceModel, governed: int,
                          c: ConstraintSet, eps: float = DEFAULT_EPS,
                          jstar=None, box=None) -> MASPolytope:
    """MAS with the governed column separated from held feedthrough inputs.

    ``governed`` indexes the model input treated as the governor's variable
    v; every other input contributes an H_w column built by the same
    recursion, to be folded in at evaluation time with its measured value.
    """
    m = model.n_inputs
    if not 0 <= governed < m:
        raise ValueError(f"governed index {governed} outside 0..{m - 1}")
    h_x, h_u, h, j = _stack_rows(model, c, eps, jstar, box)
    others = tuple(h_u[:, i] for i in range(m) if i != governed)
    return MASPolytope(h_x, h_u[:, governed], others, h, eps, j, model)


def contains(mas: MASPolytope, x, v: float, w=()):
    """Membership test; returns (inside, worst-row margin)."""
    x = np.asarray(x, dtype=float)
    w = np.atleast_1d(np.asarray(w, dtype=float)) if len(mas.H_w) else ()
    lhs = mas.H_x @ x + mas.H_v * v
    for col, wi in zip(mas.H_w, w):
        lhs = lhs + col * wi
    margin = float(np.min(mas.h - lhs))
    return margin >= 0.0, margin


def save_mas(mas: MASPolytope, path) -> None:
    doc = {
        "Hx": mas.H_x.tolist(),
        "Hv": mas.H_v.tolist(),
        "Hw": [col.tolist() for col in mas.H_w],
        "h": mas.h.tolist(),
        "eps": mas.eps,
        "jstar": mas.jstar,
        "model": mas.model.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_mas(path) -> MASPolytope:
    with open(path) as fh:
        doc = json.load(fh)
    return MASPolytope(
        np.asarray(doc["Hx"], dtype=float),
        np.asarray(doc["Hv"], dtype=float),
        tuple(np.asarray(col, dtype=float) for col in doc["Hw"]),
        np.asarray(doc["h"], dtype=float),
        float(doc["eps"]),
        int(doc["jstar"]),
        StateSpaceModel.from_dict(doc["model"]))
