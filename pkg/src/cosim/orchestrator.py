"""Iterative co-simulation master with three step-replay modes.

The master advances all systems over a fixed macro-step grid.  Within a step
it iterates on the coupling data (end-of-step output values and time
derivatives of every system), rebuilding each system's input command as a
cubic Hermite polynomial that stays C1-continuous at the step start, until
successive evaluations agree in a relative max norm on the values.  How an
evaluation is produced depends on the mode:

* ``ROLLBACK``: every iteration restores a snapshot and genuinely integrates;
* ``COSTARICA``: iterations use the linearization-based output estimator and
  a single genuine integration per system closes the accepted step;
* ``COSTARICA_SSR``: same, with the estimator degraded to the raw state-space
  approximation (no state-derivative information).

All systems of one iteration sweep are evaluated against the same iterate
(Jacobi exchange), so results do not depend on system ordering.  Optional
Anderson mixing accelerates the fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .costarica import ControlPolicy, CostaricaEstimator
from .signals import PolyVecSignal, hermite_cubic
from .systems import CapabilityError, DivergenceError, System

INPUT_DEGREE = 3


class Mode(Enum):
    ROLLBACK = "ROLLBACK"
    COSTARICA = "COSTARICA"
    COSTARICA_SSR = "COSTARICA_SSR"


class ConvergenceFailure(RuntimeError):
    """The coupling iteration did not converge within the iteration budget."""

    def __init__(self, message: str, t_last: float):
        super().__init__(message)
        self.t_last = t_last


@dataclass(frozen=True)
class Wire:
    src_system: int
    src_output: int
    dst_system: int
    dst_input: int


@dataclass
class CouplingGraph:
    """Systems plus output-to-input wiring.  Unwired inputs hold their
    initial values for the whole run; no input may be wired twice."""

    systems: list[System]
    wires: list[Wire] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for w in self.wires:
            if not 0 <= w.src_system < len(self.systems):
                raise ValueError(f"wire references unknown source system {w.src_system}")
            if not 0 <= w.dst_system < len(self.systems):
                raise ValueError(f"wire references unknown target system {w.dst_system}")
            src, dst = self.systems[w.src_system], self.systems[w.dst_system]
            if not 0 <= w.src_output < src.spec.n_out:
                raise ValueError("wire source output index out of range")
            if not 0 <= w.dst_input < dst.spec.n_in:
                raise ValueError("wire target input index out of range")
            key = (w.dst_system, w.dst_input)
            if key in seen:
                raise ValueError(f"input {key} wired more than once")
            if w.src_system == w.dst_system and w.src_output == w.dst_input:
                # identity self-loops on matching indices create trivial
                # algebraic cycles with no physical meaning
                raise ValueError("self-wire on identical index pair")
            seen.add(key)


@dataclass
class CosimConfig:
    t_init: float
    t_end: float
    macro_dt: float
    mode: Mode = Mode.COSTARICA
    epsilon: float = 1e-6
    max_iters: int = 50
    anderson_depth: int = 3
    stehfest_N: int = 14
    rich_factor: float = 0.2
    control_policy: ControlPolicy = ControlPolicy.FLEX
    micro_steps: int = 100

    def __post_init__(self):
        if not self.t_end > self.t_init:
            raise ValueError("t_end must exceed t_init")
        if not self.macro_dt > 0.0:
            raise ValueError("macro_dt must be positive")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")


@dataclass
class TraceRecord:
    """Per-run results: one row per macro step plus the initial row."""

    times: np.ndarray                 # (n_rows,)
    outputs: list[np.ndarray]         # per system, (n_rows, n_out)
    states: list[np.ndarray]          # per system, (n_rows, n_st)
    iterations: np.ndarray            # (n_rows,) evaluation count, 0 on row 0
    mode: Mode
    step_counts: list[int] = field(default_factory=list)  # genuine integrations per system


def anderson_update(guesses: Sequence[np.ndarray], evals: Sequence[np.ndarray], depth: int) -> np.ndarray:
    """Next iterate from Anderson mixing of the residual history.

    ``guesses[i]`` and ``evals[i] = F(guesses[i])`` are the iteration history.
    With depth <= 0 or a single history entry this reduces to the plain
    fixed-point update.  A rank-deficient least-squares system falls back to
    the plain update as well.
    """
    m = len(guesses)
    if m != len(evals) or m == 0:
        raise ValueError("history of guesses and evaluations must align")
    f_new = evals[-1]
    if depth <= 0 or m == 1:
        return f_new.copy()
    k = min(depth, m - 1)
    G = np.stack(guesses[-(k + 1):], axis=1)   # (d, k+1)
    F = np.stack(evals[-(k + 1):], axis=1)
    R = F - G
    dR = np.diff(R, axis=1)                    # (d, k)
    dF = np.diff(F, axis=1)
    r = R[:, -1]
    # normal equations with a small ridge; garbage solutions from a
    # rank-deficient history trigger the plain-update fallback
    A = dR.T @ dR + 1e-12 * np.eye(k)
    try:
        gamma = np.linalg.solve(A, dR.T @ r)
    except np.linalg.LinAlgError:
        return f_new.copy()
    if not np.all(np.isfinite(gamma)) or np.linalg.norm(gamma) > 1e8:
        return f_new.copy()
    return f_new - dF @ gamma


class _Run:
    """Mutable state of one co-simulation run."""

    def __init__(self, graph: CouplingGraph, cfg: CosimConfig):
        self.graph = graph
        self.cfg = cfg
        systems = graph.systems
        self.n_sys = len(systems)
        self.offsets = np.cumsum([0] + [s.spec.n_out for s in systems])
        self.n_out_total = int(self.offsets[-1])
        # per-system map from input index to global output index, -1 unwired
        self.wmap = [np.full(s.spec.n_in, -1, dtype=int) for s in systems]
        for w in graph.wires:
            self.wmap[w.dst_system][w.dst_input] = self.offsets[w.src_system] + w.src_output

        for s in systems:
            s.reset()
            s.set_initial_time(cfg.t_init)

        if cfg.mode is not Mode.ROLLBACK:
            for s in systems:
                if not (s.flags.exposes_states and s.flags.provides_directional_derivatives):
                    raise CapabilityError(
                        f"{s.name}: estimation mode needs exposed states and directional derivatives"
                    )
            self.estimators = [
                CostaricaEstimator(
                    stehfest_N=cfg.stehfest_N,
                    rich_factor=cfg.rich_factor,
                    policy=cfg.control_policy,
                    need_derivatives=False,
                )
                for _ in systems
            ]
        else:
            for s in systems:
                if not s.flags.supports_rollback:
                    raise CapabilityError(f"{s.name}: rollback mode needs rollback support")
            self.estimators = None

        # initial outputs, computed from the initial inputs
        self.y_now = [s.outputs_now(s.spec.u_init) for s in systems]
        self.anchor_v = np.concatenate(self.y_now) if self.n_out_total else np.zeros(0)
        self.anchor_d = np.zeros(self.n_out_total)

    def _inputs_now(self, i: int) -> np.ndarray:
        """Left-limit input values of system i at the current anchor."""
        s = self.graph.systems[i]
        vals = s.spec.u_init.copy()
        wm = self.wmap[i]
        wired = wm >= 0
        vals[wired] = self.anchor_v[wm[wired]]
        return vals

    def _build_inputs(self, t0: float, t1: float, z_v: np.ndarray) -> list[PolyVecSignal]:
        polys = []
        for i, s in enumerate(self.graph.systems):
            wm = self.wmap[i]
            wired = wm >= 0
            lv = s.spec.u_init.copy()
            ld = np.zeros(s.spec.n_in)
            rv = s.spec.u_init.copy()
            idx = wm[wired]
            lv[wired] = self.anchor_v[idx]
            ld[wired] = self.anchor_d[idx]
            rv[wired] = z_v[idx]
            polys.append(hermite_quadratic(lv, ld, rv, t0, t1))
        return polys

    def _evaluate(self, polys: list[PolyVecSignal], t1: float, tokens) -> np.ndarray:
        cfg = self.cfg
        y_v = np.empty(self.n_out_total)
        for i, s in enumerate(self.graph.systems):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            if cfg.mode is Mode.ROLLBACK:
                s.restore_snapshot(tokens[i])
                res = s.do_step(polys[i], t1, cfg.micro_steps)
                y_v[lo:hi] = res.y_end
            else:
                yh, _ = self.estimators[i].estimate_outputs(polys[i].coeffs)
                y_v[lo:hi] = yh
        return y_v

    def step(self, t0: float, t1: float) -> tuple[int, list[PolyVecSignal]]:
        cfg = self.cfg
        systems = self.graph.systems
        dt = t1 - t0

        tokens = None
        if cfg.mode is Mode.ROLLBACK:
            tokens = [s.snapshot() for s in systems]
        else:
            ssr = cfg.mode is Mode.COSTARICA_SSR
            for i, s in enumerate(systems):
                lin = s.make_linearization_point(self._inputs_now(i), self.y_now[i], ssr_only=ssr)
                est = self.estimators[i]
                est.anchor(lin)
                est.prepare_step(dt, INPUT_DEGREE)

        # iterate on end-of-step coupling values; guess 0 extrapolates the anchor
        g = self.anchor_v.copy()
        guesses: list[np.ndarray] = []
        evals: list[np.ndarray] = []
        prev_vals = None
        polys = None
        m = 0
        while True:
            polys = self._build_inputs(t0, t1, g)
            y_v = self._evaluate(polys, t1, tokens)
            guesses.append(g)
            evals.append(y_v)
            if prev_vals is not None:
                scale = 1.0 + np.abs(y_v)
                if np.max(np.abs(y_v - prev_vals) / scale) < cfg.epsilon:
                    break
            prev_vals = y_v
            if m + 1 > cfg.max_iters:
                raise ConvergenceFailure(
                    f"no convergence within {cfg.max_iters} iterations on step starting at {t0}", t_last=t0
                )
            g = anderson_update(guesses, evals, cfg.anderson_depth)
            if len(guesses) > max(2, cfg.anderson_depth + 1):
                del guesses[0]
                del evals[0]
            m += 1

        g_final = guesses[-1]
        if cfg.mode is not Mode.ROLLBACK:
            # the one genuine integration per system that closes the step
            for i, s in enumerate(systems):
                res = s.do_step(polys[i], t1, cfg.micro_steps)
                self.y_now[i] = res.y_end
        else:
            for i, s in enumerate(systems):
                lo, hi = self.offsets[i], self.offsets[i + 1]
                self.y_now[i] = evals[-1][lo:hi]

        # carry the converged input polynomials' end data as the next left
        # anchor; the quadratic's end slope keeps the inputs C1-continuous
        self.anchor_d = 2.0 * (g_final - self.anchor_v) / dt - self.anchor_d
        self.anchor_v = g_final.copy()
        return m, polys


def run_cosimulation(graph: CouplingGraph, cfg: CosimConfig) -> TraceRecord:
    """Run the full time loop and return the trace.

    Raises :class:`ConvergenceFailure` (carrying the last reached time) when a
    step exhausts the iteration budget, and propagates pole/divergence errors
    from the numerical layers the same way.
    """
    run = _Run(graph, cfg)
    systems = graph.systems

    grid = [cfg.t_init]
    n_full = int(np.floor((cfg.t_end - cfg.t_init) / cfg.macro_dt + 1e-9))
    for k in range(1, n_full + 1):
        grid.append(cfg.t_init + k * cfg.macro_dt)
    if cfg.t_end - grid[-1] > 1e-9 * cfg.macro_dt:
        grid.append(cfg.t_end)

    n_rows = len(grid)
    times = np.asarray(grid)
    outputs = [np.empty((n_rows, s.spec.n_out)) for s in systems]
    states = [np.empty((n_rows, s.spec.n_st)) for s in systems]
    iters = np.zeros(n_rows, dtype=int)
    for i, s in enumerate(systems):
        outputs[i][0] = run.y_now[i]
        states[i][0] = s.state.x

    for row in range(1, n_rows):
        m, _ = run.step(times[row - 1], times[row])
        iters[row] = m
        for i, s in enumerate(systems):
            outputs[i][row] = run.y_now[i]
            states[i][row] = s.state.x

    return TraceRecord(
        times=times,
        outputs=outputs,
        states=states,
        iterations=iters,
        mode=cfg.mode,
        step_counts=[s.step_count for s in systems],
    )


def monolithic_reference(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t_init: float,
    sample_times: Sequence[float],
    micro_dt: float,
) -> np.ndarray:
    """Integrate an assembled global ODE with RK4, landing exactly on samples.

    Between consecutive sample times the interval is cut into equal RK4 steps
    no longer than ``micro_dt``.  Returns the states at ``sample_times``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    t = float(t_init)
    out = np.empty((len(sample_times), x.size))
    for row, ts in enumerate(sample_times):
        if ts < t - 1e-12:
            raise ValueError("sample times must be non-decreasing and start at t_init or later")
        if ts > t:
            n = max(1, int(np.ceil((ts - t) / micro_dt - 1e-12)))
            h = (ts - t) / n
            for i in range(n):
                ta = t + i * h
                k1 = rhs(ta, x)
                k2 = rhs(ta + 0.5 * h, x + (0.5 * h) * k1)
                k3 = rhs(ta + 0.5 * h, x + (0.5 * h) * k2)
                k4 = rhs(ta + h, x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(x)):
                raise DivergenceError("monolithic reference diverged", t_last=t)
            t = ts
        out[row] = x
    return out


def fit_loglog_slope(dts, errors) -> Optional[float]:
    """Least-squares slope of log error against log step size.

    Returns None when the fit is degenerate (fewer than two points or a zero
    error, whose logarithm is undefined).
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 2 or np.any(errors <= 0.0):
        return None
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def measure_convergence(entries) -> tuple[np.ndarray, Optional[float]]:
    """Per-step-size error and fitted order from (dt, cosim, reference) triples.

    ``cosim`` and ``reference`` are same-shape arrays of the characteristic
    variable sampled on the macro grid; the error is the max absolute
    difference over all samples.
    """
    dts = np.asarray([e[0] for e in entries], dtype=float)
    errs = np.asarray([float(np.max(np.abs(np.asarray(c) - np.asarray(r)))) for _, c, r in entries])
    return errs, fit_loglog_slope(dts, errs)
