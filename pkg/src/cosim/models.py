"""Benchmark models: factories, analytic Jacobians, monolithic references.

Four models are addressable from the CLI and the experiment configs:

* ``TOUGH_TIME_ONLY``  - a single integrator driven purely by time functions,
  dx/dt = a(t), y = x + b(t), with one unused input;
* ``MECH_TWO_BODY``    - two spring/damper-coupled bodies; the right body's
  system switches to a constant -1000 N pulling force at t = 100 s;
* ``LV_CLASSIC``       - the Lotka-Volterra predation pair, one species per
  system;
* ``LV_TIME_MODIFIED`` - same with the prey interaction modulated by a day
  cycle s(t), which makes its derivatives function explicitly time-dependent.

The Lotka-Volterra entries also expose isolated-prey configurations (a single
prey system under a fixed quadratic predator stimulus) used by the
single-step error studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .orchestrator import CouplingGraph, Wire
from .signals import PolyVecSignal
from .systems import System, SystemSpec


class ModelId(Enum):
    TOUGH_TIME_ONLY = "TOUGH_TIME_ONLY"
    MECH_TWO_BODY = "MECH_TWO_BODY"
    LV_CLASSIC = "LV_CLASSIC"
    LV_TIME_MODIFIED = "LV_TIME_MODIFIED"


@dataclass
class CosimModel:
    """A ready-to-run modular model plus its assembled global ODE."""

    model_id: ModelId
    graph: CouplingGraph
    monolithic_rhs: Callable[[float, np.ndarray], np.ndarray]
    monolithic_x0: np.ndarray
    t_init: float
    t_end: float
    # characteristic variable(s) used for error measurement
    char_from_trace: Callable
    char_from_monolithic: Callable
    char_mask: Callable


# Lotka-Volterra parameters
LV_ALPHA = 0.67
LV_BETA = 1.33
LV_GAMMA = 1.0
LV_DELTA = 1.0
LV_HORIZON = (0.0, 20.0)

# isolated-prey study configuration: initial prey/predator levels and the
# quadratic predator stimulus fitted from a preliminary monolithic run
ISOLATED_PREY_X0 = 0.8
ISOLATED_PREY_U0 = 0.8
STIMULUS_CLASSIC = (0.8, -0.16, -0.11008)
STIMULUS_MODIFIED = (0.8, -0.448, 0.5173559185)

# mechanical model parameters (SI units; rates of 1 kN/m and 1 kN/(m/s))
MECH_C1 = 1000.0
MECH_C2 = 1000.0
MECH_C3 = 1000.0
MECH_D1 = 1000.0
MECH_D2 = 0.0
MECH_D3 = 1000.0
MECH_M1 = 10000.0
MECH_M2 = 10000.0
MECH_SWITCH_TIME = 100.0
MECH_SWITCH_FORCE = -1000.0
MECH_HORIZON = (0.0, 200.0)


def day_cycle(t: float) -> float:
    """Interaction modulation of the time-modified prey, 10%..100% with
    period 2.4 and non-zero slope at t = 0."""
    return 0.55 + 0.45 * math.sin(2.0 * math.pi * t / 2.4)


# -- Lotka-Volterra ---------------------------------------------------------

def make_prey_spec(modified: bool, x0: float, u0: float) -> SystemSpec:
    a, b = LV_ALPHA, LV_BETA
    if modified:
        f = lambda t, x, u: x * (a - day_cycle(t) * b * u)
        dfdx = lambda t, x, u: np.array([[a - day_cycle(t) * b * u[0]]])
        dfdu = lambda t, x, u: np.array([[-day_cycle(t) * b * x[0]]])
    else:
        f = lambda t, x, u: x * (a - b * u)
        dfdx = lambda t, x, u: np.array([[a - b * u[0]]])
        dfdu = lambda t, x, u: np.array([[-b * x[0]]])
    return SystemSpec(
        n_st=1, n_in=1, n_out=1,
        f=f,
        g=lambda t, x, u: x.copy(),
        x_init=np.array([x0]),
        u_init=np.array([u0]),
        dfdx=dfdx, dfdu=dfdu,
        dgdx=lambda t, x, u: np.array([[1.0]]),
        dgdu=lambda t, x, u: np.array([[0.0]]),
        name="prey",
    )


def make_predator_spec(x0: float, u0: float) -> SystemSpec:
    g_, d_ = LV_GAMMA, LV_DELTA
    return SystemSpec(
        n_st=1, n_in=1, n_out=1,
        f=lambda t, x, u: x * (d_ * u - g_),
        g=lambda t, x, u: x.copy(),
        x_init=np.array([x0]),
        u_init=np.array([u0]),
        dfdx=lambda t, x, u: np.array([[d_ * u[0] - g_]]),
        dfdu=lambda t, x, u: np.array([[d_ * x[0]]]),
        dgdx=lambda t, x, u: np.array([[1.0]]),
        dgdu=lambda t, x, u: np.array([[0.0]]),
        name="predator",
    )


def make_lotka_volterra(modified: bool = False) -> CosimModel:
    """Coupled two-species model; each species is one system."""
    prey = System(make_prey_spec(modified, x0=1.0, u0=1.0))
    pred = System(make_predator_spec(x0=1.0, u0=1.0))
    graph = CouplingGraph(
        systems=[prey, pred],
        wires=[
            Wire(src_system=1, src_output=0, dst_system=0, dst_input=0),
            Wire(src_system=0, src_output=0, dst_system=1, dst_input=0),
        ],
    )
    a, b, g_, d_ = LV_ALPHA, LV_BETA, LV_GAMMA, LV_DELTA
    if modified:
        def rhs(t, z):
            return np.array([z[0] * (a - day_cycle(t) * b * z[1]), z[1] * (d_ * z[0] - g_)])
    else:
        def rhs(t, z):
            return np.array([z[0] * (a - b * z[1]), z[1] * (d_ * z[0] - g_)])

    def char_from_trace(trace):
        return np.column_stack([trace.outputs[0][:, 0], trace.outputs[1][:, 0]])

    return CosimModel(
        model_id=ModelId.LV_TIME_MODIFIED if modified else ModelId.LV_CLASSIC,
        graph=graph,
        monolithic_rhs=rhs,
        monolithic_x0=np.array([1.0, 1.0]),
        t_init=LV_HORIZON[0], t_end=LV_HORIZON[1],
        char_from_trace=char_from_trace,
        char_from_monolithic=lambda times, states: states[:, :2],
        char_mask=lambda times: np.ones(len(times), dtype=bool),
    )


def make_isolated_prey(modified: bool = False) -> tuple[System, PolyVecSignal]:
    """Single prey system plus its fixed predator stimulus polynomial."""
    spec = make_prey_spec(modified, x0=ISOLATED_PREY_X0, u0=ISOLATED_PREY_U0)
    coeffs = STIMULUS_MODIFIED if modified else STIMULUS_CLASSIC
    stimulus = PolyVecSignal(np.array([coeffs]), origin_time=0.0)
    return System(spec), stimulus


# -- mechanical two-body ------------------------------------------------------

def make_left_body_spec() -> SystemSpec:
    A = np.array([[0.0, 1.0], [-MECH_C1 / MECH_M1, -MECH_D1 / MECH_M1]])
    B = np.array([[0.0], [-1.0 / MECH_M1]])
    C = np.eye(2)
    D = np.zeros((2, 1))
    return SystemSpec(
        n_st=2, n_in=1, n_out=2,
        f=lambda t, x, u: A @ x + B @ u,
        g=lambda t, x, u: x.copy(),
        x_init=np.array([-1.0, 0.0]),
        u_init=np.array([MECH_SWITCH_FORCE]),  # spring force of the stretched c2 at t=0
        dfdx=lambda t, x, u: A,
        dfdu=lambda t, x, u: B,
        dgdx=lambda t, x, u: C,
        dgdu=lambda t, x, u: D,
        name="left_body",
    )


def make_right_body_spec() -> SystemSpec:
    A = np.array([[0.0, 1.0], [-(MECH_C2 + MECH_C3) / MECH_M2, -(MECH_D2 + MECH_D3) / MECH_M2]])
    B = np.array([[0.0, 0.0], [MECH_C2 / MECH_M2, MECH_D2 / MECH_M2]])
    C_pre = np.array([[-MECH_C2, -MECH_D2]])
    D_pre = np.array([[MECH_C2, MECH_D2]])
    C_post = np.zeros((1, 2))
    D_post = np.zeros((1, 2))

    def g(t, x, u):
        if t < MECH_SWITCH_TIME:
            return C_pre @ x + D_pre @ u
        return np.array([MECH_SWITCH_FORCE])

    return SystemSpec(
        n_st=2, n_in=2, n_out=1,
        f=lambda t, x, u: A @ x + B @ u,
        g=g,
        x_init=np.array([0.0, 0.0]),
        u_init=np.array([-1.0, 0.0]),  # left body position and velocity at t=0
        dfdx=lambda t, x, u: A,
        dfdu=lambda t, x, u: B,
        dgdx=lambda t, x, u: C_pre if t < MECH_SWITCH_TIME else C_post,
        dgdu=lambda t, x, u: D_pre if t < MECH_SWITCH_TIME else D_post,
        name="right_body",
    )


def make_mechanical() -> CosimModel:
    left = System(make_left_body_spec())
    right = System(make_right_body_spec())
    graph = CouplingGraph(
        systems=[left, right],
        wires=[
            Wire(src_system=0, src_output=0, dst_system=1, dst_input=0),
            Wire(src_system=0, src_output=1, dst_system=1, dst_input=1),
            Wire(src_system=1, src_output=0, dst_system=0, dst_input=0),
        ],
    )

    def rhs(t, z):
        x_l, v_l, x_r, v_r = z
        if t < MECH_SWITCH_TIME:
            force = -MECH_C2 * (x_r - x_l) - MECH_D2 * (v_r - v_l)
        else:
            force = MECH_SWITCH_FORCE
        return np.array([
            v_l,
            (-MECH_C1 * x_l - MECH_D1 * v_l - force) / MECH_M1,
            v_r,
            (-(MECH_C2 + MECH_C3) * x_r - (MECH_D2 + MECH_D3) * v_r
             + MECH_C2 * x_l + MECH_D2 * v_l) / MECH_M2,
        ])

    # the right body only exists until the behavior switch; its displacement
    # is the characteristic variable on that window
    return CosimModel(
        model_id=ModelId.MECH_TWO_BODY,
        graph=graph,
        monolithic_rhs=rhs,
        monolithic_x0=np.array([-1.0, 0.0, 0.0, 0.0]),
        t_init=MECH_HORIZON[0], t_end=MECH_HORIZON[1],
        char_from_trace=lambda trace: trace.states[1][:, 0:1],
        char_from_monolithic=lambda times, states: states[:, 2:3],
        char_mask=lambda times: np.asarray(times) <= MECH_SWITCH_TIME + 1e-9,
    )


# -- time-only tough case -----------------------------------------------------

def make_tough(a: Callable[[float], float], b: Callable[[float], float], x0: float = 0.0) -> SystemSpec:
    """dx/dt = a(t), y = x + b(t), with one unused input."""
    return SystemSpec(
        n_st=1, n_in=1, n_out=1,
        f=lambda t, x, u: np.array([a(t)]),
        g=lambda t, x, u: np.array([x[0] + b(t)]),
        x_init=np.array([x0]),
        u_init=np.array([0.0]),
        dfdx=lambda t, x, u: np.array([[0.0]]),
        dfdu=lambda t, x, u: np.array([[0.0]]),
        dgdx=lambda t, x, u: np.array([[1.0]]),
        dgdu=lambda t, x, u: np.array([[0.0]]),
        name="tough",
    )


def make_tough_model(
    a: Callable[[float], float] = lambda t: 1.0,
    b: Callable[[float], float] = lambda t: 0.5,
    x0: float = 0.0,
    horizon: tuple[float, float] = (0.0, 1.0),
) -> CosimModel:
    sys_ = System(make_tough(a, b, x0))
    graph = CouplingGraph(systems=[sys_], wires=[])

    def char_from_monolithic(times, states):
        return np.array([[states[i, 0] + b(times[i])] for i in range(len(times))])

    return CosimModel(
        model_id=ModelId.TOUGH_TIME_ONLY,
        graph=graph,
        monolithic_rhs=lambda t, z: np.array([a(t)]),
        monolithic_x0=np.array([x0]),
        t_init=horizon[0], t_end=horizon[1],
        char_from_trace=lambda trace: trace.outputs[0][:, 0:1],
        char_from_monolithic=char_from_monolithic,
        char_mask=lambda times: np.ones(len(times), dtype=bool),
    )


CATALOG: dict[ModelId, Callable[[], CosimModel]] = {
    ModelId.TOUGH_TIME_ONLY: make_tough_model,
    ModelId.MECH_TWO_BODY: make_mechanical,
    ModelId.LV_CLASSIC: lambda: make_lotka_volterra(False),
    ModelId.LV_TIME_MODIFIED: lambda: make_lotka_volterra(True),
}


def build_model(model_id: ModelId | str) -> CosimModel:
    """Fresh model instance (systems are stateful, one instance per run)."""
    if isinstance(model_id, str):
        try:
            model_id = ModelId[model_id]
        except KeyError:
            raise ValueError(f"unknown model id {model_id!r}") from None
    return CATALOG[model_id]()
