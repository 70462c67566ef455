"""Third-order fuel-cell airpath plant.

States are cathode pressure ``p_ca`` [Pa], compressor angular speed
``omega_cp`` [rad/s] and supply-manifold pressure ``p_sm`` [Pa]; inputs are
compressor-motor voltage ``v_cm`` [V], outlet-throttle opening ``u_om``
(dimensionless, 0..1) and stack current ``i_st`` [A].

The module also carries the fixed linear design plant used for controller
synthesis: a 2x2 transfer matrix from (v_cm, u_om) to (compressor flow in
g/s, supply pressure in bar), stored with its published coefficients.  The
nonlinear model's parameters are calibrated (see :mod:`fcairpath.calibration`)
so that an equilibrium exists at the design operating point and the
linearized DC gain reproduces the design plant's DC gain entrywise to within
20 percent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict, replace
from importlib import resources
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .lti import PolynomialRatio, StateSpaceModel, TransferMatrix

__all__ = [
    "FARADAY",
    "M_O2",
    "M_H2",
    "X_O2_ATM",
    "OMEGA_ATM",
    "PlantParams",
    "PlantState",
    "PlantInputs",
    "PlantOutputs",
    "LinearizedPlant",
    "TrackedEquilibrium",
    "load_params",
    "save_params",
    "default_params",
    "compressor_flow",
    "derivatives",
    "make_rhs",
    "oer_outputs",
    "stack_voltage",
    "motor_current",
    "net_power_and_efficiency",
    "outputs",
    "find_equilibrium",
    "tracked_equilibrium",
    "throttled_equilibrium",
    "linearize",
    "design_plant",
    "DESIGN_OPERATING_POINT",
    "DESIGN_OUTPUT_SCALES",
]

# fundamental constants (SI)
FARADAY = 96485.0          # C/mol
M_O2 = 0.032               # kg/mol
M_H2 = 0.002016            # kg/mol
X_O2_ATM = 0.23            # oxygen mass fraction of dry atmospheric air
OMEGA_ATM = 0.0131         # humidity ratio of atmospheric air

# design operating point: stack current [A], motor voltage [V], throttle [-]
DESIGN_OPERATING_POINT = (190.0, 180.0, 0.45)
# output scaling from SI to the design plant's units: kg/s -> g/s, Pa -> bar
DESIGN_OUTPUT_SCALES = (1.0e3, 1.0e-5)


class PlantState(NamedTuple):
    p_ca: float
    omega_cp: float
    p_sm: float


class PlantInputs(NamedTuple):
    v_cm: float
    u_om: float
    i_st: float


class PlantOutputs(NamedTuple):
    w_cp: float        # compressor mass flow [kg/s]
    p_sm: float        # supply manifold pressure [Pa]
    w_o2_in: float     # oxygen mass flow into the cathode [kg/s]
    w_o2_rct: float    # oxygen mass flow consumed by the reaction [kg/s]
    lambda_o2: float   # oxygen excess ratio
    v_st: float        # stack voltage [V]
    i_cm: float        # compressor motor current [A]
    p_net: float       # net electric power [W]
    eta: float         # system efficiency


@dataclass(frozen=True)
class PlantParams:
    """Calibrated parameter set for the airpath model.

    ``mu1..mu4`` enter the cathode pressure dynamics, ``c9..c16`` the
    compressor speed and supply-manifold dynamics, ``theta1..theta5`` the
    compressor flow map.  ``k_a_ca_in`` is the cathode-inlet orifice constant;
    the calibration ties it to ``c16`` so that supply-manifold outflow and
    cathode inflow describe the same orifice.  Electrochemical and motor
    constants follow.
    """

    # cathode pressure dynamics
    mu1: float
    mu2: float
    mu3: float
    mu4: float
    # compressor speed dynamics
    c9: float
    c10: float
    c11: float
    c12: float
    c13: float
    # supply manifold dynamics
    c14: float
    c15: float
    c16: float
    # compressor flow map
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: float
    # orifice and ambient
    k_a_ca_in: float
    p_atm: float
    t_atm: float
    # stack electrochemistry
    n_cells: float
    e_cell: float
    e0: float
    act_a: float
    act_i0: float
    r_ohm: float
    b_press: float
    # compressor motor electrical model
    k_v: float
    r_cm: float
    v_cm_max: float
    # calibrated operating point (inputs and equilibrium state)
    op_i_st: float
    op_v_cm: float
    op_u_om: float
    op_p_ca: float
    op_omega_cp: float
    op_p_sm: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PlantParams":
        return cls(**json.loads(text))

    def with_overrides(self, **kw) -> "PlantParams":
        return replace(self, **kw)


def save_params(params: PlantParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(params.to_json())
        fh.write("\n")


def load_params(path=None) -> PlantParams:
    """Load parameters from ``path``, the ``FCAIRPATH_PARAMS`` environment
    variable, or the packaged calibrated default, in that order."""
    if path is None:
        path = os.environ.get("FCAIRPATH_PARAMS")
    if path is None:
        text = resources.files("fcairpath").joinpath("params/default.json").read_text()
        return PlantParams.from_json(text)
    with open(path) as fh:
        return PlantParams.from_json(fh.read())


_DEFAULT_CACHE: dict = {}


def default_params() -> PlantParams:
    if "params" not in _DEFAULT_CACHE:
        _DEFAULT_CACHE["params"] = load_params()
    return _DEFAULT_CACHE["params"]


# ---------------------------------------------------------------------------
# model equations
# ---------------------------------------------------------------------------

def compressor_flow(params: PlantParams, omega_cp: float, p_sm: float) -> float:
    """Compressor mass flow [kg/s]; smooth in the operating envelope and
    clamped at zero outside it.

    The map subtracts two pressure-head terms from the zero-head flow
    ``theta1 * omega``: a speed-dependent term in ``(p/p_atm)**theta3 - 1``
    and a speed-independent one in ``(p/p_atm)**theta5 - 1``.  Splitting the
    head this way leaves the two operating-point slopes (d/domega, d/dp_sm)
    independently adjustable during calibration while the map stays monotone
    increasing in speed and decreasing in backpressure over the envelope.
    """
    if omega_cp <= 0.0:
        return 0.0
    ratio = p_sm / params.p_atm
    phi = ratio ** params.theta3 - 1.0
    psi = ratio ** params.theta5 - 1.0
    w = (params.theta1 * omega_cp
         - params.theta1 * params.theta2 * phi / omega_cp
         - params.theta4 * psi)
    return w if w > 0.0 else 0.0


def derivatives(params: PlantParams, state, inputs) -> np.ndarray:
    """Time derivatives (dp_ca, domega_cp, dp_sm) of the airpath states."""
    p_ca, w, p_sm = float(state[0]), float(state[1]), float(state[2])
    v_cm, u_om, i_st = float(inputs[0]), float(inputs[1]), float(inputs[2])
    if w <= 0.0:
        raise ValueError("compressor speed must be positive")
    phi = (p_sm / params.c11) ** params.c12 - 1.0
    w_cp = compressor_flow(params, w, p_sm)
    d_p_ca = (params.mu2 * p_sm - params.mu2 * p_ca
              + (params.mu2 - params.mu1) * p_ca * u_om
              + params.mu3 * u_om - params.mu4 * i_st)
    d_omega = (params.c13 * v_cm - params.c9 * w
               - (params.c10 / w) * phi * w_cp)
    d_p_sm = (params.c14 * (1.0 + params.c15 * phi)
              * (w_cp - params.c16 * (p_sm - p_ca)))
    return np.array([d_p_ca, d_omega, d_p_sm])


def make_rhs(params: PlantParams):
    """Scalar fast path for the integrator: returns ``rhs(p_ca, w, p_sm,
    v_cm, u_om, i_st) -> (dp_ca, domega, dp_sm)`` closed over floats."""
    mu1, mu2, mu3, mu4 = params.mu1, params.mu2, params.mu3, params.mu4
    c9, c10, c11, c12, c13 = params.c9, params.c10, params.c11, params.c12, params.c13
    c14, c15, c16 = params.c14, params.c15, params.c16
    th1, th2, th3 = params.theta1, params.theta2, params.theta3
    th4, th5, p_atm = params.theta4, params.theta5, params.p_atm

    def rhs(p_ca, w, p_sm, v_cm, u_om, i_st):
        phi = (p_sm / c11) ** c12 - 1.0
        ratio = p_sm / p_atm
        w_cp = (th1 * w - th1 * th2 * (ratio ** th3 - 1.0) / w
                - th4 * (ratio ** th5 - 1.0))
        if w_cp < 0.0:
            w_cp = 0.0
        return (
            mu2 * p_sm - mu2 * p_ca + (mu2 - mu1) * p_ca * u_om
            + mu3 * u_om - mu4 * i_st,
            c13 * v_cm - c9 * w - (c10 / w) * phi * w_cp,
            c14 * (1.0 + c15 * phi) * (w_cp - c16 * (p_sm - p_ca)),
        )

    return rhs


def oer_outputs(params: PlantParams, p_ca: float, p_sm: float, i_st: float):
    """Oxygen inflow, oxygen consumption [kg/s] and their ratio."""
    w_in = params.k_a_ca_in * (X_O2_ATM / (1.0 + OMEGA_ATM)) * (p_sm - p_ca)
    w_rct = params.n_cells * M_O2 * i_st / (4.0 * FARADAY)
    lam = w_in / w_rct if w_rct > 0.0 else math.inf
    return w_in, w_rct, lam


def stack_voltage(params: PlantParams, i_st: float, p_ca: float) -> float:
    """Polarization-curve stack voltage [V], clamped to (0, n_cells * e_cell)."""
    v_cell = (params.e0
              - params.act_a * math.log(1.0 + i_st / params.act_i0)
              - params.r_ohm * i_st
              + params.b_press * math.log(p_ca / params.p_atm))
    v_cell = min(max(v_cell, 1.0e-3), params.e_cell)
    return params.n_cells * v_cell


def motor_current(params: PlantParams, v_cm: float, omega_cp: float) -> float:
    return (v_cm - params.k_v * omega_cp) / params.r_cm


def net_power_and_efficiency(params: PlantParams, v_st: float, i_st: float,
                             v_cm: float, i_cm: float):
    """Net electric power [W] and system efficiency (net power over the
    thermodynamic power n_cells * e_cell * i_st)."""
    if i_st <= 0.0:
        raise ValueError("stack current must be positive")
    p_net = v_st * i_st - v_cm * i_cm
    eta = p_net / (params.n_cells * params.e_cell * i_st)
    return p_net, eta


def outputs(params: PlantParams, state, inputs) -> PlantOutputs:
    """All plant outputs at the given state and inputs."""
    p_ca, w, p_sm = float(state[0]), float(state[1]), float(state[2])
    v_cm, u_om, i_st = float(inputs[0]), float(inputs[1]), float(inputs[2])
    w_cp = compressor_flow(params, w, p_sm)
    w_in, w_rct, lam = oer_outputs(params, p_ca, p_sm, i_st)
    v_st = stack_voltage(params, i_st, p_ca)
    i_cm = motor_current(params, v_cm, w)
    p_net, eta = net_power_and_efficiency(params, v_st, i_st, v_cm, i_cm)
    return PlantOutputs(w_cp, p_sm, w_in, w_rct, lam, v_st, i_cm, p_net, eta)


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------

def find_equilibrium(params: PlantParams, inputs, seed_state=None) -> PlantState:
    """Root-solve the state derivatives to zero at fixed inputs."""
    if seed_state is None:
        seed_state = (params.op_p_ca, params.op_omega_cp, params.op_p_sm)
    x0 = np.asarray(seed_state, dtype=float)

    def fun(x):
        return derivatives(params, x, inputs)

    sol = optimize.root(fun, x0, method="hybr", tol=1e-12)
    if not sol.success:
        raise RuntimeError(f"equilibrium solve failed: {sol.message}")
    resid = np.max(np.abs(fun(sol.x)))
    scale = max(1.0, float(np.max(np.abs(sol.x))))
    if resid > 1e-6 * scale:
        raise RuntimeError(f"equilibrium residual too large: {resid:g}")
    return PlantState(*sol.x)


class TrackedEquilibrium(NamedTuple):
    state: PlantState
    inputs: PlantInputs
    outputs: PlantOutputs
    feasible: bool
    message: str


def tracked_equilibrium(params: PlantParams, i_st: float, w_ref: float,
                        p_ref: float) -> TrackedEquilibrium:
    """Steady state reached by any controller that tracks flow and pressure
    references asymptotically.

    With the compressor flow and supply pressure pinned to their references,
    the remaining unknowns (cathode pressure, compressor speed, the two
    actuator values) follow in closed form from the equilibrium equations.
    Infeasibility (throttle outside [0, 1], motor voltage outside its range)
    is flagged rather than raised.
    """
    p_ca = p_ref - w_ref / params.c16
    # compressor speed from the flow map: positive root of the quadratic
    ratio = p_ref / params.p_atm
    phic = ratio ** params.theta3 - 1.0
    head = w_ref + params.theta4 * (ratio ** params.theta5 - 1.0)
    disc = head * head + 4.0 * params.theta1 ** 2 * params.theta2 * phic
    if disc < 0.0 or params.theta1 <= 0.0:
        return TrackedEquilibrium(PlantState(p_ca, 1.0, p_ref),
                                  PlantInputs(0.0, 0.0, i_st),
                                  None, False, "no compressor speed solves the flow map")
    omega = (head + math.sqrt(disc)) / (2.0 * params.theta1)
    # throttle from the cathode pressure balance
    denom = (params.mu2 - params.mu1) * p_ca + params.mu3
    if denom == 0.0:
        return TrackedEquilibrium(PlantState(p_ca, omega, p_ref),
                                  PlantInputs(0.0, 0.0, i_st),
                                  None, False, "throttle authority vanishes")
    u_om = (params.mu4 * i_st - params.mu2 * (p_ref - p_ca)) / denom
    # motor voltage from the speed balance
    phi = (p_ref / params.c11) ** params.c12 - 1.0
    v_cm = (params.c9 * omega + (params.c10 / omega) * phi * w_ref) / params.c13
    state = PlantState(p_ca, omega, p_ref)
    inp = PlantInputs(v_cm, u_om, i_st)
    msgs = []
    if not 0.0 <= u_om <= 1.0:
        msgs.append(f"throttle {u_om:.3f} outside [0, 1]")
    if not 0.0 <= v_cm <= params.v_cm_max:
        msgs.append(f"motor voltage {v_cm:.1f} outside [0, {params.v_cm_max:g}]")
    if p_ca <= params.p_atm:
        msgs.append("cathode pressure at or below ambient")
    feasible = not msgs
    out = outputs(params, state, inp)
    return TrackedEquilibrium(state, inp, out, feasible, "; ".join(msgs))


def throttled_equilibrium(params: PlantParams, i_st: float, w_ref: float,
                          u_om: float) -> TrackedEquilibrium:
    """Steady state with the throttle pinned and only the flow tracked.

    This is the resting point of a single-loop flow controller that never
    moves the outlet throttle: the supply and cathode pressures float to
    wherever the fixed orifice carries ``w_ref``.  Closed form, mirroring
    :func:`tracked_equilibrium` with the roles of pressure reference and
    throttle swapped.
    """
    denom = (params.mu2 - params.mu1) * u_om
    if denom == 0.0:
        return TrackedEquilibrium(PlantState(1.0, 1.0, 1.0),
                                  PlantInputs(0.0, u_om, i_st),
                                  None, False, "throttle authority vanishes")
    p_ca = (params.mu4 * i_st - params.mu3 * u_om
            - params.mu2 * w_ref / params.c16) / denom
    p_sm = p_ca + w_ref / params.c16
    if p_ca <= 0.0 or p_sm <= 0.0:
        return TrackedEquilibrium(PlantState(p_ca, 1.0, p_sm),
                                  PlantInputs(0.0, u_om, i_st),
                                  None, False, "pressures collapse at this load")
    ratio = p_sm / params.p_atm
    phic = ratio ** params.theta3 - 1.0
    head = w_ref + params.theta4 * (ratio ** params.theta5 - 1.0)
    disc = head * head + 4.0 * params.theta1 ** 2 * params.theta2 * phic
    if disc < 0.0 or params.theta1 <= 0.0:
        return TrackedEquilibrium(PlantState(p_ca, 1.0, p_sm),
                                  PlantInputs(0.0, u_om, i_st),
                                  None, False, "no compressor speed solves the flow map")
    omega = (head + math.sqrt(disc)) / (2.0 * params.theta1)
    phi = (p_sm / params.c11) ** params.c12 - 1.0
    v_cm = (params.c9 * omega + (params.c10 / omega) * phi * w_ref) / params.c13
    state = PlantState(p_ca, omega, p_sm)
    inp = PlantInputs(v_cm, u_om, i_st)
    msgs = []
    if not 0.0 <= v_cm <= params.v_cm_max:
        msgs.append(f"motor voltage {v_cm:.1f} outside [0, {params.v_cm_max:g}]")
    if p_ca <= params.p_atm:
        msgs.append("cathode pressure at or below ambient")
    feasible = not msgs
    out = outputs(params, state, inp)
    return TrackedEquilibrium(state, inp, out, feasible, "; ".join(msgs))


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------

@dataclass
class LinearizedPlant:
    """Jacobian linearization around an equilibrium.

    Inputs are ordered (v_cm, u_om, i_st); outputs (w_cp, p_sm, w_o2_in,
    w_o2_rct), all in SI units.  ``y_op`` holds the output values at the
    operating point.
    """

    ss: StateSpaceModel
    x_op: np.ndarray
    u_op: np.ndarray
    y_op: np.ndarray


def _output_vector(params, state, inputs) -> np.ndarray:
    p_ca, w, p_sm = state
    w_cp = compressor_flow(params, w, p_sm)
    w_in, w_rct, _ = oer_outputs(params, p_ca, p_sm, inputs[2])
    return np.array([w_cp, p_sm, w_in, w_rct])


_FD_FLOORS_X = np.array([1.0e4, 1.0e3, 1.0e4])
_FD_FLOORS_U = np.array([10.0, 0.05, 10.0])


def linearize(params: PlantParams, state=None, inputs=None) -> LinearizedPlant:
    """Central-difference Jacobians of the dynamics and outputs.

    Defaults to the calibrated operating point.  The equilibrium is verified
    (derivative residual relative to state scale below 1e-6) before
    differencing.
    """
    if inputs is None:
        inputs = (params.op_v_cm, params.op_u_om, params.op_i_st)
    if state is None:
        state = find_equilibrium(params, inputs)
    x0 = np.asarray(state, dtype=float)
    u0 = np.asarray(inputs, dtype=float)
    resid = np.max(np.abs(derivatives(params, x0, u0)) / np.maximum(np.abs(x0), 1.0))
    if resid > 1e-6:
        raise ValueError(f"not an equilibrium: scaled residual {resid:g}")

    def f(x, u):
        return derivatives(params, x, u)

    def g(x, u):
        return _output_vector(params, x, u)

    n, m, q = 3, 3, 4
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    C = np.zeros((q, n))
    D = np.zeros((q, m))
    for k in range(n):
        h = 1e-6 * max(abs(x0[k]), _FD_FLOORS_X[k])
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        A[:, k] = (f(xp, u0) - f(xm, u0)) / (2.0 * h)
        C[:, k] = (g(xp, u0) - g(xm, u0)) / (2.0 * h)
    for k in range(m):
        h = 1e-6 * max(abs(u0[k]), _FD_FLOORS_U[k])
        up, um = u0.copy(), u0.copy()
        up[k] += h
        um[k] -= h
        B[:, k] = (f(x0, up) - f(x0, um)) / (2.0 * h)
        D[:, k] = (g(x0, up) - g(x0, um)) / (2.0 * h)
    ss = StateSpaceModel(A, B, C, D, ts=0.0)
    return LinearizedPlant(ss, x0, u0, _output_vector(params, x0, u0))


# ---------------------------------------------------------------------------
# design plant
# ---------------------------------------------------------------------------

# published third-order two-input two-output design model; common monic
# denominator, outputs (compressor flow [g/s], supply pressure [bar]),
# inputs (motor voltage [V], throttle opening [-])
DESIGN_DEN = (1.0, 80.13, 1327.0, 2813.0)
DESIGN_NUM_11 = (20.26, 1171.0, 1061.0)
DESIGN_NUM_12 = (23267.0, 170261.0)
DESIGN_NUM_21 = (1.024, 40.38)
DESIGN_NUM_22 = (-174.6, -2902.0)


def design_plant() -> TransferMatrix:
    """The fixed 2x2 linear design plant used for controller synthesis."""
    den = list(DESIGN_DEN)
    return TransferMatrix([
        [PolynomialRatio(list(DESIGN_NUM_11), den),
         PolynomialRatio(list(DESIGN_NUM_12), den)],
        [PolynomialRatio(list(DESIGN_NUM_21), den),
         PolynomialRatio(list(DESIGN_NUM_22), den)],
    ])


def scaled_design_gain(lin: LinearizedPlant) -> np.ndarray:
    """DC gain of the linearized plant's first two outputs and inputs,
    rescaled to the design plant's units for comparison."""
    k = lin.ss.dc_gain()[:2, :2]
    return np.diag(DESIGN_OUTPUT_SCALES) @ k
