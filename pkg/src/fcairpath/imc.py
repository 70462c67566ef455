"""Internal-model controller synthesis and the discrete closed-loop stepper.

The multivariable controller is Q(s) = G_model^-1(s) F(s) with a diagonal
low-pass filter F.  Inversion goes through the adjugate; when all four model
entries share one denominator d(s), the d factors common to the adjugate and
the determinant are cancelled symbolically before realization.  Realizing
the uncancelled products instead inflates the state order severalfold and,
at this plant's coefficient spread (thirteen decades), produces spurious
unstable poles, so the shared-denominator path is not merely an
optimization.

A scalar variant serves the outer power loop: a first-order model fitted to
step data, inverted against a first-order filter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import lti
from .lti import (
    LtiError,
    PolynomialRatio,
    StateSpaceModel,
    TransferMatrix,
    poly_add,
    poly_mul,
)

__all__ = [
    "IMCConfig",
    "IMCController",
    "NonMinimumPhaseError",
    "design_filter",
    "design_controller",
    "design_scalar_controller",
    "ClosedLoopStepper",
    "assemble_loop",
    "mismatch_input_loop",
    "save_controller",
    "load_controller",
    "PowerIMC",
    "identify_first_order",
    "design_power_imc",
    "DEFAULT_POWER_TAU",
]

# filter constant [s] for the outer power loop; the airpath loop settles in
# roughly a second, so the power request is shaped about twice slower
DEFAULT_POWER_TAU = 0.5


class NonMinimumPhaseError(LtiError):
    """Model determinant (or scalar model numerator) has right-half-plane
    roots; plain inversion would produce an unstable controller."""


@dataclass(frozen=True)
class IMCConfig:
    """Diagonal filter orders and time constants."""

    tau1: float = 0.20
    tau2: float = 0.20
    n1: int = 1
    n2: int = 2

    def __post_init__(self):
        if self.tau1 <= 0.0 or self.tau2 <= 0.0:
            raise LtiError("filter time constants must be positive")
        if self.n1 < 1 or self.n2 < 1:
            raise LtiError("filter orders must be at least 1")

    def to_dict(self) -> dict:
        return {"tau1": self.tau1, "tau2": self.tau2,
                "n1": self.n1, "n2": self.n2}

    @classmethod
    def from_dict(cls, d: dict) -> "IMCConfig":
        return cls(d["tau1"], d["tau2"], int(d["n1"]), int(d["n2"]))


def design_filter(cfg: IMCConfig) -> TransferMatrix:
    """Diagonal low-pass filter with unity DC gain."""

    def lowpass(tau: float, n: int) -> PolynomialRatio:
        den = np.ones(1)
        for _ in range(n):
            den = poly_mul(den, [tau, 1.0])
        return PolynomialRatio([1.0], den)

    return TransferMatrix.diagonal([lowpass(cfg.tau1, cfg.n1),
                                    lowpass(cfg.tau2, cfg.n2)])


@dataclass
class IMCController:
    """Realized Q and internal model, with their rational forms kept for
    frequency-domain checks."""

    q_tf: TransferMatrix
    q_ss: StateSpaceModel
    model_tf: TransferMatrix
    model_ss: StateSpaceModel
    config: IMCConfig


def _common_denominator(g: TransferMatrix):
    d = g[0, 0].den
    for i in range(2):
        for j in range(2):
            e = g[i, j].den
            if e.size != d.size or not np.allclose(e, d, rtol=1e-12, atol=0.0):
                return None
    return d


def _structured_q(g: TransferMatrix, f: TransferMatrix, det_num) -> TransferMatrix:
    """Q for a model whose entries share a denominator d: the adjugate is
    [[n22, -n12], [-n21, n11]] * d / det_num after cancelling d**2."""
    d = g[0, 0].den
    n = [[g[i, j].num for j in range(2)] for i in range(2)]
    adj = [[n[1][1], -n[0][1]], [-n[1][0], n[0][0]]]
    entries = []
    for i in range(2):
        row = []
        for j in range(2):
            fj = f[j, j]
            row.append(PolynomialRatio(
                poly_mul(poly_mul(d, adj[i][j]), fj.num),
                poly_mul(det_num, fj.den)))
        entries.append(row)
    return TransferMatrix(entries)


def design_controller(model: TransferMatrix, f: TransferMatrix) -> IMCController:
    """Invert the 2x2 model against the diagonal filter and realize it.

    Requires every transmission zero of the model (root of the determinant
    numerator) in the open left half-plane; otherwise the inverse is
    unstable and a :class:`NonMinimumPhaseError` is raised.  The returned
    realization is checked to be stable, and the product G*Q is verified to
    reproduce F at sample frequencies within 1e-6.
    """
    if model.shape != (2, 2) or f.shape != (2, 2):
        raise LtiError("design_controller expects 2x2 model and filter")
    shared = _common_denominator(model)
    if shared is not None:
        det_num = poly_add(poly_mul(model[0, 0].num, model[1, 1].num),
                           -poly_mul(model[0, 1].num, model[1, 0].num))
    else:
        det_num = lti.determinant_numerator_2x2(model)
    zeros = np.roots(det_num)
    if np.any(zeros.real >= 0.0):
        raise NonMinimumPhaseError(
            "model transmission zeros include the closed right half-plane: "
            f"{np.sort_complex(zeros)}; inversion-based design not supported")
    if shared is not None:
        q_tf = _structured_q(model, f, det_num)
    else:
        q_tf = lti.series(f, lti.invert_2x2(model))
    for i in range(2):
        for j in range(2):
            if not q_tf[i, j].is_proper():
                raise LtiError(
                    f"controller entry ({i}, {j}) improper; raise filter orders")
    q_ss = lti.realize(q_tf)
    if not q_ss.is_stable():
        raise LtiError("controller realization is unstable")
    model_ss = lti.realize(model)
    for w in np.logspace(-2.0, 3.0, 12):
        gq = model.freq_response(w) @ q_tf.freq_response(w)
        if not np.allclose(gq, f.freq_response(w), rtol=1e-6, atol=1e-9):
            raise LtiError(f"G*Q deviates from the filter at omega={w:g}")
    return IMCController(q_tf, q_ss, model, model_ss, _infer_config(f))


def design_scalar_controller(g: PolynomialRatio,
                             tau: float = 0.20) -> IMCController:
    """Single-loop IMC for one stable, minimum-phase channel.

    Q inverts the channel behind a low-pass filter with time constant
    ``tau``, repeated to the channel's relative degree so Q stays proper.
    Useful as a one-actuator baseline: wrap the returned controller with
    :func:`assemble_loop` exactly like the 2x2 design.
    """
    if tau <= 0.0:
        raise LtiError("filter time constant must be positive")
    if np.any(g.poles().real >= 0.0):
        raise LtiError("channel model must be stable")
    zeros = g.zeros()
    if np.any(zeros.real >= 0.0):
        raise NonMinimumPhaseError(
            "channel zeros include the closed right half-plane: "
            f"{np.sort_complex(zeros)}; inversion-based design not supported")
    order = max(g.den_degree - g.num_degree, 1)
    filt = np.ones(1)
    for _ in range(order):
        filt = poly_mul(filt, [tau, 1.0])
    q = PolynomialRatio(g.den, poly_mul(g.num, filt))
    q_tf = TransferMatrix([[q]])
    model_tf = TransferMatrix([[g]])
    cfg = IMCConfig(tau, tau, order, order)
    return IMCController(q_tf, lti.realize(q_tf), model_tf,
                         lti.realize(model_tf), cfg)


def _infer_config(f: TransferMatrix) -> IMCConfig:
    """Recover (tau, n) per channel from a diagonal all-pole filter."""
    taus = []
    orders = []
    for k in range(2):
        den = f[k, k].den
        n = den.size - 1
        roots = np.roots(den)
        tau = float(np.mean(-1.0 / roots.real))
        taus.append(tau)
        orders.append(n)
    return IMCConfig(taus[0], taus[1], orders[0], orders[1])


# ---------------------------------------------------------------------------
# discrete closed-loop stepper
# ---------------------------------------------------------------------------

class ClosedLoopStepper:
    """Discrete IMC update: the controller sees r - (y - y_model), drives Q,
    and feeds its own output through the internal model.

    All signals are deviations from the design operating point in the design
    model's units.  ``step`` consumes the reference and measured output for
    one sample and returns the actuator deviation applied over that sample.
    """

    def __init__(self, q_d: StateSpaceModel, model_d: StateSpaceModel):
        if q_d.ts <= 0.0 or model_d.ts != q_d.ts:
            raise LtiError("stepper needs discrete Q and model at one rate")
        if np.any(model_d.D != 0.0):
            raise LtiError("internal model must be strictly proper")
        self.q = q_d
        self.model = model_d
        self.ts = q_d.ts
        self.x_q = np.zeros(q_d.n_states)
        self.x_m = np.zeros(model_d.n_states)

    def reset(self) -> None:
        self.x_q[:] = 0.0
        self.x_m[:] = 0.0

    def model_output(self) -> np.ndarray:
        return self.model.C @ self.x_m

    def step(self, r: np.ndarray, y: np.ndarray) -> np.ndarray:
        e = np.asarray(r, dtype=float) - (np.asarray(y, dtype=float)
                                          - self.model_output())
        u = self.q.C @ self.x_q + self.q.D @ e
        self.x_q = self.q.A @ self.x_q + self.q.B @ e
        self.x_m = self.model.A @ self.x_m + self.model.B @ u
        return u


def assemble_loop(ctrl: IMCController, ts: float = 0.020) -> ClosedLoopStepper:
    """Zero-order-hold discretization of Q and the internal model at the
    control rate, wrapped in a stepper starting at the operating point."""
    return ClosedLoopStepper(lti.discretize(ctrl.q_ss, ts),
                             lti.discretize(ctrl.model_ss, ts))


def mismatch_input_loop(ctrl: IMCController, truth):
    """Loop transfer at the plant input with the truth plant in the
    measurement path: (I - Q*Gm)^-1 * Q * Gt.

    ``truth`` is a callable or object giving the plant response in the
    design model's units.  With ``truth`` equal to the internal model the
    loop reduces to (I - F)^-1 F, whose diagonal entries are the nominal
    single-channel loops.
    """
    fr = getattr(truth, "freq_response", None)
    truth_resp = fr if fr is not None else truth

    def loop(omega: float) -> np.ndarray:
        qw = ctrl.q_tf.freq_response(omega)
        gm = ctrl.model_tf.freq_response(omega)
        gt = np.atleast_2d(np.asarray(truth_resp(omega), dtype=complex))
        return np.linalg.solve(np.eye(2) - qw @ gm, qw) @ gt

    return loop


# ---------------------------------------------------------------------------
# controller files
# ---------------------------------------------------------------------------

def save_controller(ctrl: IMCController, path) -> None:
    doc = {
        "config": ctrl.config.to_dict(),
        "q_tf": ctrl.q_tf.to_dict(),
        "model_tf": ctrl.model_tf.to_dict(),
        "q_ss": ctrl.q_ss.to_dict(),
        "model_ss": ctrl.model_ss.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_controller(path) -> IMCController:
    with open(path) as fh:
        doc = json.load(fh)
    return IMCController(
        TransferMatrix.from_dict(doc["q_tf"]),
        StateSpaceModel.from_dict(doc["q_ss"]),
        TransferMatrix.from_dict(doc["model_tf"]),
        StateSpaceModel.from_dict(doc["model_ss"]),
        IMCConfig.from_dict(doc["config"]))


# ---------------------------------------------------------------------------
# scalar power loop
# ---------------------------------------------------------------------------

def identify_first_order(t, u, y) -> PolynomialRatio:
    """Fit gain/(tau s + 1) to recorded step data.

    The input must contain a single step; the gain comes from the
    steady-state deviation ratio and the time constant from the 63.2 percent
    crossing of the output transient.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    du = u - u[0]
    jumps = np.nonzero(np.abs(np.diff(du)) > 1e-12 * max(1.0, np.max(np.abs(u))))[0]
    if jumps.size == 0:
        raise LtiError("identification data contains no input step")
    k0 = jumps[0] + 1
    step = du[-1]
    dy = y - y[0]
    gain = dy[-1] / step
    target = 0.632 * dy[-1]
    after = np.nonzero(np.abs(dy[k0:]) >= abs(target))[0]
    if after.size == 0:
        raise LtiError("output never reaches 63 percent of its final value")
    tau = t[k0 + after[0]] - t[k0]
    tau = max(tau, t[1] - t[0])
    return PolynomialRatio([gain], [tau, 1.0])


class PowerIMC:
    """Scalar IMC translating a net-power request into a stack-current
    request, built on an identified first-order closed-airpath model."""

    def __init__(self, model: PolynomialRatio, tau_p: float = DEFAULT_POWER_TAU,
                 ts: float = 0.020):
        if model.num_degree > 0 or model.den_degree != 1:
            raise LtiError("power model must be first order with constant numerator")
        if np.any(np.roots(model.den).real >= 0.0):
            raise NonMinimumPhaseError(
                "identified power model is unstable; re-identify on longer data")
        if model.num[0] == 0.0:
            raise NonMinimumPhaseError(
                "identified power gain is zero; re-identify with a larger step")
        self.model = model
        self.tau_p = float(tau_p)
        # k = 1 filter order makes model^-1 * filter biproper
        q = PolynomialRatio(model.den, poly_mul(model.num, [tau_p, 1.0]))
        self.q_d = lti.discretize(lti.realize(TransferMatrix([[q]])), ts)
        self.model_d = lti.discretize(lti.realize(TransferMatrix([[model]])), ts)
        self.ts = ts
        self.x_q = np.zeros(self.q_d.n_states)
        self.x_m = np.zeros(self.model_d.n_states)

    def reset(self) -> None:
        self.x_q[:] = 0.0
        self.x_m[:] = 0.0

    def step(self, power_ref: float, power_meas: float) -> float:
        y_hat = (self.model_d.C @ self.x_m)[0]
        e = power_ref - (power_meas - y_hat)
        i_des = (self.q_d.C @ self.x_q + self.q_d.D[:, 0] * e)[0]
        self.x_q = self.q_d.A @ self.x_q + self.q_d.B[:, 0] * e
        self.x_m = self.model_d.A @ self.x_m + self.model_d.B[:, 0] * i_des
        return i_des


def design_power_imc(model: PolynomialRatio,
                     tau_p: float = DEFAULT_POWER_TAU,
                     ts: float = 0.020) -> PowerIMC:
    return PowerIMC(model, tau_p, ts)
