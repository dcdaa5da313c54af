"""Co-simulation system abstraction: ODE container, micro-solver, capabilities.

A :class:`System` owns one ODE (derivatives function f, outputs function g),
integrates macro-steps with a fixed-step classical Runge-Kutta 4 micro-solver,
and exposes the optional interactions a coupling algorithm may rely on:
state access, state derivatives, directional derivatives, output time
derivatives, and snapshot-based rollback.  Missing capabilities surface as
:class:`CapabilityError`, a recoverable signal the master uses to select the
degraded state-space-only estimation mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .signals import PolyVecSignal, constant_signal, derivative_at_absolute

DEFAULT_MICRO_STEPS = 100


class CapabilityError(RuntimeError):
    """A required interaction is not supported by this system."""


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, message: str, t_last: float):
        super().__init__(message)
        self.t_last = t_last


@dataclass
class CapabilityFlags:
    supports_polynomial_inputs: bool = True
    exposes_states: bool = True
    exposes_state_derivatives: bool = True
    provides_directional_derivatives: bool = True
    provides_output_derivatives: bool = True
    supports_rollback: bool = True


@dataclass
class SystemSpec:
    """ODE sizes, right-hand sides and optional analytic Jacobian providers."""

    n_st: int
    n_in: int
    n_out: int
    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    x_init: np.ndarray
    u_init: np.ndarray
    dfdx: Optional[Callable] = None
    dfdu: Optional[Callable] = None
    dgdx: Optional[Callable] = None
    dgdu: Optional[Callable] = None
    name: str = "system"

    def __post_init__(self):
        self.x_init = np.atleast_1d(np.asarray(self.x_init, dtype=float))
        self.u_init = np.atleast_1d(np.asarray(self.u_init, dtype=float))
        if self.x_init.shape != (self.n_st,):
            raise ValueError("x_init size does not match n_st")
        if self.u_init.shape != (self.n_in,):
            raise ValueError("u_init size does not match n_in")


@dataclass
class SystemState:
    x: np.ndarray
    t_reached: float
    last_inputs: PolyVecSignal


@dataclass
class StepResult:
    x_end: np.ndarray
    y_end: np.ndarray
    y_dot_end: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Snapshot:
    owner_id: int
    t_reached: float
    x: np.ndarray
    last_inputs: PolyVecSignal


@dataclass
class LinearizationPoint:
    """Everything captured at a reached time for output estimation.

    ``f_c`` is the constant part of the linearized derivatives,
    f(t, x, u) - (A x + B u), and ``y_c`` the control part of the outputs,
    y - (C x + D u).  In state-space-only (degraded) mode the state
    derivatives are unavailable and ``f_c`` is forced to zero.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x_tilde: np.ndarray
    u_tilde: np.ndarray
    y_tilde: np.ndarray
    f_tilde: Optional[np.ndarray]
    f_c: np.ndarray
    y_c: np.ndarray
    t_ref: float
    ssr_only: bool = False


def _fd_jacobian(func, z: np.ndarray, n_rows: int) -> np.ndarray:
    """Central finite differences, per-component step 1e-6 * max(1, |z_i|)."""
    J = np.empty((n_rows, z.size))
    for i in range(z.size):
        h = 1e-6 * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        J[:, i] = (func(zp) - func(zm)) / (2.0 * h)
    return J


class System:
    """A stateful system instance: spec + capability flags + current state."""

    def __init__(self, spec: SystemSpec, flags: CapabilityFlags | None = None):
        self.spec = spec
        self.flags = flags or CapabilityFlags()
        self.step_count = 0  # genuine integrations performed
        self.reset()

    def reset(self) -> None:
        self.state = SystemState(
            x=self.spec.x_init.copy(),
            t_reached=0.0,
            last_inputs=constant_signal(self.spec.u_init),
        )
        self.step_count = 0

    def set_initial_time(self, t0: float) -> None:
        self.state.t_reached = float(t0)
        self.state.last_inputs = constant_signal(self.spec.u_init, origin_time=t0)

    @property
    def name(self) -> str:
        return self.spec.name

    # -- step function -----------------------------------------------------

    def do_step(self, u: PolyVecSignal, t_end: float, micro_steps: int = DEFAULT_MICRO_STEPS) -> StepResult:
        """Advance to ``t_end`` under the input command ``u`` (RK4, fixed step)."""
        st = self.state
        if not t_end > st.t_reached:
            raise ValueError(f"t_end={t_end} must exceed reached time {st.t_reached}")
        if u.n_sig != self.spec.n_in:
            raise ValueError("input signal width does not match n_in")
        if u.degree > 0 and not self.flags.supports_polynomial_inputs:
            raise CapabilityError(f"{self.name}: polynomial inputs not supported")
        m = int(micro_steps)
        if m < 1:
            raise ValueError("micro_steps must be positive")

        f = self.spec.f
        coeffs = u.coeffs
        t_origin = u.origin_time
        t_start = st.t_reached
        h = (t_end - t_start) / m
        x = st.x.copy()
        ncols = coeffs.shape[1]

        def u_at(ta):
            tau = ta - t_origin
            out = coeffs[:, -1].copy()
            for k in range(ncols - 2, -1, -1):
                out *= tau
                out += coeffs[:, k]
            return out

        for i in range(m):
            ta = t_start + i * h
            tm = ta + 0.5 * h
            tb = ta + h
            u0 = u_at(ta)
            um = u_at(tm)
            u1 = u_at(tb)
            k1 = f(ta, x, u0)
            k2 = f(tm, x + (0.5 * h) * k1, um)
            k3 = f(tm, x + (0.5 * h) * k2, um)
            k4 = f(tb, x + h * k3, u1)
            x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if not math.isfinite(float(np.sum(x))):
                raise DivergenceError(f"{self.name}: state non-finite during step", t_last=ta)

        u_end = u_at(t_end)
        y_end = np.atleast_1d(np.asarray(self.spec.g(t_end, x, u_end), dtype=float))
        y_dot = None
        if self.flags.provides_output_derivatives:
            y_dot = self._output_derivative(t_end, x, u, u_end)

        st.x = x
        st.t_reached = float(t_end)
        st.last_inputs = u
        self.step_count += 1
        return StepResult(x_end=x.copy(), y_end=y_end, y_dot_end=y_dot)

    def _output_derivative(self, t: float, x: np.ndarray, u: PolyVecSignal, u_now: np.ndarray) -> np.ndarray:
        """dy/dt as C f + D du/dt plus a one-sided difference of g in t.

        The explicit t-difference covers output equations with their own time
        dependence, for which no directional derivative exists.
        """
        g = self.spec.g
        C, D = self._output_jacobians(t, x, u_now)
        f_now = np.asarray(self.spec.f(t, x, u_now), dtype=float)
        u_dot = derivative_at_absolute(u, t)
        ht = 1e-7 * max(1.0, abs(t))
        g_now = np.atleast_1d(np.asarray(g(t, x, u_now), dtype=float))
        g_fwd = np.atleast_1d(np.asarray(g(t + ht, x, u_now), dtype=float))
        return C @ f_now + D @ u_dot + (g_fwd - g_now) / ht

    # -- rollback -----------------------------------------------------------

    def snapshot(self) -> Snapshot:
        if not self.flags.supports_rollback:
            raise CapabilityError(f"{self.name}: rollback not supported")
        st = self.state
        return Snapshot(owner_id=id(self), t_reached=st.t_reached, x=st.x.copy(), last_inputs=st.last_inputs)

    def restore_snapshot(self, token: Snapshot) -> None:
        if not isinstance(token, Snapshot) or token.owner_id != id(self):
            raise ValueError("snapshot token does not belong to this system")
        self.state.x = token.x.copy()
        self.state.t_reached = token.t_reached
        self.state.last_inputs = token.last_inputs

    # -- instantaneous queries ----------------------------------------------

    def get_state_and_derivative(self, u_now) -> tuple[np.ndarray, np.ndarray]:
        if not self.flags.exposes_states:
            raise CapabilityError(f"{self.name}: states not exposed")
        if not self.flags.exposes_state_derivatives:
            raise CapabilityError(f"{self.name}: state derivatives not exposed")
        u_now = np.atleast_1d(np.asarray(u_now, dtype=float))
        st = self.state
        f_now = np.atleast_1d(np.asarray(self.spec.f(st.t_reached, st.x, u_now), dtype=float))
        return st.x.copy(), f_now

    def outputs_now(self, u_now) -> np.ndarray:
        u_now = np.atleast_1d(np.asarray(u_now, dtype=float))
        st = self.state
        return np.atleast_1d(np.asarray(self.spec.g(st.t_reached, st.x, u_now), dtype=float))

    def directional_derivatives(self, u_now):
        """A, B, C, D at (t_reached, x, u_now); analytic providers preferred."""
        if not self.flags.provides_directional_derivatives:
            raise CapabilityError(f"{self.name}: directional derivatives not provided")
        u_now = np.atleast_1d(np.asarray(u_now, dtype=float))
        st = self.state
        t, x = st.t_reached, st.x
        sp = self.spec
        if sp.dfdx is not None:
            A = np.atleast_2d(np.asarray(sp.dfdx(t, x, u_now), dtype=float))
        else:
            A = _fd_jacobian(lambda z: np.asarray(sp.f(t, z, u_now), dtype=float), x.copy(), sp.n_st)
        if sp.dfdu is not None:
            B = np.atleast_2d(np.asarray(sp.dfdu(t, x, u_now), dtype=float))
        else:
            B = _fd_jacobian(lambda z: np.asarray(sp.f(t, x, z), dtype=float), u_now.copy(), sp.n_st)
        C, D = self._output_jacobians(t, x, u_now)
        return A, B, C, D

    def _output_jacobians(self, t, x, u_now):
        sp = self.spec
        if sp.dgdx is not None:
            C = np.atleast_2d(np.asarray(sp.dgdx(t, x, u_now), dtype=float))
        else:
            C = _fd_jacobian(lambda z: np.atleast_1d(np.asarray(sp.g(t, z, u_now), dtype=float)), x.copy(), sp.n_out)
        if sp.dgdu is not None:
            D = np.atleast_2d(np.asarray(sp.dgdu(t, x, u_now), dtype=float))
        else:
            D = _fd_jacobian(lambda z: np.atleast_1d(np.asarray(sp.g(t, x, z), dtype=float)), u_now.copy(), sp.n_out)
        return C, D

    def make_linearization_point(self, u_now, y_now, ssr_only: bool = False) -> LinearizationPoint:
        """Bundle the quantities known at the reached time for the estimator."""
        if not self.flags.exposes_states:
            raise CapabilityError(f"{self.name}: states not exposed")
        u_now = np.atleast_1d(np.asarray(u_now, dtype=float))
        y_now = np.atleast_1d(np.asarray(y_now, dtype=float))
        A, B, C, D = self.directional_derivatives(u_now)
        st = self.state
        x_t = st.x.copy()
        y_c = y_now - (C @ x_t + D @ u_now)
        if ssr_only or not self.flags.exposes_state_derivatives:
            f_t = None
            f_c = np.zeros(self.spec.n_st)
            ssr_only = True
        else:
            _, f_t = self.get_state_and_derivative(u_now)
            f_c = f_t - (A @ x_t + B @ u_now)
        return LinearizationPoint(
            A=A, B=B, C=C, D=D,
            x_tilde=x_t, u_tilde=u_now, y_tilde=y_now,
            f_tilde=f_t, f_c=f_c, y_c=y_c,
            t_ref=st.t_reached, ssr_only=ssr_only,
        )
