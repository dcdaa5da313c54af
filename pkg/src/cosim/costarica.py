"""COSTARICA output estimator: predicts end-of-step outputs without integrating.

The estimator linearizes a system at its reached time, expresses the linear
response to a polynomial input command through the Laplace-domain matrices
G, P and R, inverts them numerically (Gaver-Stehfest), and adds a forecast of
the control part of the outputs (the portion not explained by C x + D u).
The work is split into three stages so a coupling iteration can re-evaluate
estimates cheaply:

* stage 1, once per reached time: linearization, rational coefficients;
* stage 2, once per step size: inverse-Laplace value/derivative operators and
  the control-part forecast;
* stage 3, per iteration: contractions against the input coefficient matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .laplace import StehfestWeights, inverse_laplace_stack, stehfest_weights
from .rational import LaplaceEnsemble, build_ensemble
from .signals import XiMatrix
from .systems import LinearizationPoint


class ControlPolicy(Enum):
    ZOH = "ZOH"
    FOH = "FOH"
    FLEX = "FLEX"


@dataclass
class EstimatorTensors:
    """Inverse-Laplace-evaluated contraction operators for one step size."""

    G_V: np.ndarray  # (n_out, n_in, n+1)
    P_V: np.ndarray  # (n_out, n_st)
    R_V: np.ndarray  # (n_out, n_st)
    dt: float
    G_D: Optional[np.ndarray] = None
    P_D: Optional[np.ndarray] = None
    R_D: Optional[np.ndarray] = None


class ControlHistory:
    """Ring buffer of (time, control-part) pairs with strictly increasing times."""

    def __init__(self, capacity: int = 4):
        if capacity < 3:
            raise ValueError("capacity must be at least 3")
        self.capacity = capacity
        self.times: list[float] = []
        self.values: list[np.ndarray] = []

    def append(self, t: float, y_c: np.ndarray) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError(f"history times must increase, got {t} after {self.times[-1]}")
        self.times.append(float(t))
        self.values.append(np.atleast_1d(np.asarray(y_c, dtype=float)).copy())
        if len(self.times) > self.capacity:
            del self.times[0]
            del self.values[0]

    def __len__(self) -> int:
        return len(self.times)


def update1(lin: LinearizationPoint) -> LaplaceEnsemble:
    """Stage 1: rational coefficients of G, P and R at a linearization point."""
    return build_ensemble(lin.A, lin.B, lin.C, lin.D)


def _value_stack(ens: LaplaceEnsemble, n: int):
    """Pad and stack all value-operator transforms: G x monomials, then P, R.

    Element order: G entries (i, j, k) row-major over (n_out, n_in, n+1) with
    numerator scaled by k! and denominator shifted by s^(k+1), followed by the
    P entries and the R entries row-major.
    """
    key = n
    cached = ens._stacks.get(key)
    if cached is not None:
        return cached
    nums: list[np.ndarray] = []
    dens: list[np.ndarray] = []
    for row in ens.G:
        for e in row:
            for k in range(n + 1):
                nums.append(e.num * math.factorial(k))
                dens.append(np.concatenate((np.zeros(k + 1), e.den)))
    for rows in (ens.P, ens.R):
        for row in rows:
            for e in row:
                nums.append(e.num)
                dens.append(e.den)
    pn = max(a.size for a in nums)
    pd = max(a.size for a in dens)
    num_m = np.zeros((len(nums), pn))
    den_m = np.zeros((len(dens), pd))
    for i, a in enumerate(nums):
        num_m[i, : a.size] = a
    for i, a in enumerate(dens):
        den_m[i, : a.size] = a
    ens._stacks[key] = (num_m, den_m)
    return num_m, den_m


def update2(
    ens: LaplaceEnsemble,
    dt: float,
    n: int,
    w: StehfestWeights,
    need_derivatives: bool = False,
    rich_factor: float = 0.2,
) -> EstimatorTensors:
    """Stage 2: evaluate the value (and optionally derivative) operators at dt.

    Derivative operators use the second-order one-sided Richardson formula
    (F(dt-h) - 4 F(dt-h/2) + 3 F(dt)) / h with h = rich_factor * dt, which is
    exact on quadratics.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if not 0.0 < rich_factor < 1.0:
        raise ValueError("rich_factor must lie in (0, 1)")
    n_out, n_in, n_st = ens.n_out, ens.n_in, ens.n_st
    num_m, den_m = _value_stack(ens, n)
    h = rich_factor * dt
    times = [dt, dt - h, dt - 0.5 * h] if need_derivatives else [dt]
    vals = inverse_laplace_stack(num_m, den_m, times, w)

    ng = n_out * n_in * (n + 1)
    npe = n_out * n_st

    def split(v):
        G = v[:ng].reshape(n_out, n_in, n + 1)
        P = v[ng : ng + npe].reshape(n_out, n_st)
        R = v[ng + npe :].reshape(n_out, n_st)
        return G, P, R

    G_V, P_V, R_V = split(vals[0])
    tens = EstimatorTensors(G_V=G_V, P_V=P_V, R_V=R_V, dt=dt)
    if need_derivatives:
        G_a, P_a, R_a = split(vals[1])  # at dt - h
        G_b, P_b, R_b = split(vals[2])  # at dt - h/2
        tens.G_D = (G_a - 4.0 * G_b + 3.0 * G_V) / h
        tens.P_D = (P_a - 4.0 * P_b + 3.0 * P_V) / h
        tens.R_D = (R_a - 4.0 * R_b + 3.0 * R_V) / h
    return tens


def control_predict(
    hist: ControlHistory, t_next: float, policy: ControlPolicy
) -> tuple[np.ndarray, np.ndarray]:
    """Forecast the control part of outputs and its derivative at ``t_next``.

    With a single history point every policy degrades to a zero-order hold
    with zero derivative.
    """
    if len(hist) == 0:
        raise ValueError("control history is empty")
    if not t_next > hist.times[-1]:
        raise ValueError("t_next must exceed the last history time")
    y_last = hist.values[-1]
    zero = np.zeros_like(y_last)
    if policy is ControlPolicy.ZOH or len(hist) == 1:
        return y_last.copy(), zero

    if policy is ControlPolicy.FOH:
        t1, t0 = hist.times[-1], hist.times[-2]
        slope = (hist.values[-1] - hist.values[-2]) / (t1 - t0)
        return y_last + (t_next - t1) * slope, slope

    return _flex_predict(hist, t_next)


def _fit_backward(times, values, order, t_eval):
    """Value and derivative at t_eval of the degree-``order`` interpolant
    through the last ``order + 1`` of the given points (Newton form)."""
    if order == 0:
        y = values[-1]
        return y.copy(), np.zeros_like(y)
    if order == 1:
        ta, tb = times[-2], times[-1]
        ya, yb = values[-2], values[-1]
        slope = (yb - ya) / (tb - ta)
        return yb + (t_eval - tb) * slope, slope
    t0, t1, t2 = times[-3], times[-2], times[-1]
    y0, y1, y2 = values[-3], values[-2], values[-1]
    d01 = (y1 - y0) / (t1 - t0)
    d12 = (y2 - y1) / (t2 - t1)
    d012 = (d12 - d01) / (t2 - t0)
    val = y0 + (t_eval - t0) * d01 + (t_eval - t0) * (t_eval - t1) * d012
    der = d01 + ((t_eval - t0) + (t_eval - t1)) * d012
    return val, der


def _flex_predict(hist: ControlHistory, t_next: float):
    """Per-coordinate adaptive order 0..2: score each candidate order by how
    well it back-predicts the newest point from older ones, then forecast with
    the winning order rebuilt on the newest points.  Ties go to lower order."""
    m = len(hist)
    t_new = hist.times[-1]
    y_new = hist.values[-1]
    n_out = y_new.size
    max_order = min(2, m - 2)
    if max_order < 0:
        return y_new.copy(), np.zeros(n_out)

    older_t, older_v = hist.times[:-1], hist.values[:-1]
    scores = np.full((max_order + 1, n_out), np.inf)
    for order in range(max_order + 1):
        if len(older_t) >= order + 1:
            pred, _ = _fit_backward(older_t, older_v, order, t_new)
            scores[order] = np.abs(pred - y_new)
    value = np.empty(n_out)
    deriv = np.empty(n_out)
    forecasts = {}
    for order in range(max_order + 1):
        forecasts[order] = _fit_backward(hist.times, hist.values, order, t_next)
    winners = np.argmin(scores, axis=0)  # argmin takes the lowest index on ties
    for j in range(n_out):
        v, d = forecasts[int(winners[j])]
        value[j] = v[j]
        deriv[j] = d[j]
    return value, deriv


def estimate(
    tens: EstimatorTensors,
    xi: XiMatrix | np.ndarray,
    x_tilde: np.ndarray,
    f_c: np.ndarray,
    yC_hat: np.ndarray,
    yC_dot_hat: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Stage 3: combine the operators with one input coefficient matrix.

    y_hat[i] = sum_jk G_V[i,j,k] xi[j,k] + (P_V x)[i] + (R_V f_c)[i] + yC_hat[i]
    and analogously for the derivative when the derivative operators exist.
    """
    x_arr = xi.entries if isinstance(xi, XiMatrix) else np.asarray(xi, dtype=float)
    n_out, n_in, ncol = tens.G_V.shape
    if x_arr.shape[0] != n_in or x_arr.shape[1] > ncol:
        raise ValueError(f"input coefficient matrix shape {x_arr.shape} does not fit ({n_in}, <={ncol})")
    gv = tens.G_V[:, :, : x_arr.shape[1]]
    y = gv.reshape(n_out, -1) @ x_arr.reshape(-1) + tens.P_V @ x_tilde + tens.R_V @ f_c + yC_hat
    if tens.G_D is None:
        return y, None
    if yC_dot_hat is None:
        raise ValueError("derivative tensors present but no control derivative forecast")
    gd = tens.G_D[:, :, : x_arr.shape[1]]
    y_dot = gd.reshape(n_out, -1) @ x_arr.reshape(-1) + tens.P_D @ x_tilde + tens.R_D @ f_c + yC_dot_hat
    return y, y_dot


class CostaricaEstimator:
    """Stateful wrapper driving the three stages for one system."""

    def __init__(
        self,
        stehfest_N: int = 14,
        rich_factor: float = 0.2,
        policy: ControlPolicy = ControlPolicy.FLEX,
        need_derivatives: bool = True,
    ):
        self.weights = stehfest_weights(stehfest_N)
        self.rich_factor = rich_factor
        self.policy = policy
        self.need_derivatives = need_derivatives
        self.history = ControlHistory()
        self.lin: Optional[LinearizationPoint] = None
        self.ensemble: Optional[LaplaceEnsemble] = None
        self.tensors: Optional[EstimatorTensors] = None
        self._yc_hat: Optional[np.ndarray] = None
        self._yc_dot_hat: Optional[np.ndarray] = None

    def anchor(self, lin: LinearizationPoint) -> None:
        """Stage 1 at a newly reached time."""
        self.lin = lin
        self.ensemble = update1(lin)
        self.history.append(lin.t_ref, lin.y_c)
        self.tensors = None

    def prepare_step(self, dt: float, degree: int) -> None:
        """Stage 2 once the step size is known."""
        if self.lin is None:
            raise RuntimeError("anchor() must run before prepare_step()")
        self.tensors = update2(
            self.ensemble, dt, degree, self.weights,
            need_derivatives=self.need_derivatives, rich_factor=self.rich_factor,
        )
        self._yc_hat, self._yc_dot_hat = control_predict(
            self.history, self.lin.t_ref + dt, self.policy
        )

    def estimate_outputs(self, xi: XiMatrix | np.ndarray):
        """Stage 3 for one input command iterate."""
        if self.tensors is None:
            raise RuntimeError("prepare_step() must run before estimate_outputs()")
        return estimate(
            self.tensors, xi, self.lin.x_tilde, self.lin.f_c,
            self._yc_hat, self._yc_dot_hat if self.need_derivatives else None,
        )
