"""Vector-valued polynomial signals: evaluation, time shifting, Hermite construction.

A :class:`PolyVecSignal` stores one polynomial per signal coordinate in the
monomial basis of its own time variable.  ``origin_time`` anchors that
variable in absolute time: the signal's value at absolute time ``t`` is the
polynomial evaluated at ``t - origin_time``.  Signals produced directly from
absolute-time coefficient tables (e.g. stimulus definitions starting at
``t = 0``) simply carry ``origin_time = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Polynomial degrees beyond this are outside any sane input-reconstruction
# scheme; binomial rows are built by exact integer Pascal recurrence.
MAX_DEGREE = 20


@lru_cache(maxsize=None)
def _pascal_rows(n: int) -> tuple[tuple[int, ...], ...]:
    if n > MAX_DEGREE:
        raise ValueError(f"polynomial degree {n} exceeds supported maximum {MAX_DEGREE}")
    rows = [(1,)]
    for i in range(1, n + 1):
        prev = rows[-1]
        rows.append((1, *(prev[k - 1] + prev[k] for k in range(1, i)), 1))
    return tuple(rows)


def binomial(n: int, k: int) -> int:
    """C(n, k) from the cached Pascal table (exact integers)."""
    if k < 0 or k > n:
        return 0
    return _pascal_rows(n)[n][k]


@dataclass(frozen=True)
class PolyVecSignal:
    """Per-coordinate polynomial signal, rows = coordinates, columns = powers."""

    coeffs: np.ndarray  # (n_sig, degree + 1), ascending powers
    origin_time: float = 0.0

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 2 or c.shape[1] < 1:
            raise ValueError("coeffs must be a (n_sig, degree+1) matrix")
        if c.shape[1] - 1 > MAX_DEGREE:
            raise ValueError(f"degree {c.shape[1] - 1} exceeds supported maximum {MAX_DEGREE}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "origin_time", float(self.origin_time))

    @property
    def n_sig(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1


@dataclass(frozen=True)
class XiMatrix:
    """Coefficient matrix of step-local polynomial inputs, n_in x (degree+1)."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", np.atleast_2d(np.asarray(self.entries, dtype=float)))


def _horner(coeffs: np.ndarray, t: float) -> np.ndarray:
    out = coeffs[:, -1].copy()
    for k in range(coeffs.shape[1] - 2, -1, -1):
        out *= t
        out += coeffs[:, k]
    return out


def _horner_deriv(coeffs: np.ndarray, t: float) -> np.ndarray:
    n = coeffs.shape[1] - 1
    if n == 0:
        return np.zeros(coeffs.shape[0])
    out = coeffs[:, -1] * n
    for k in range(n - 1, 0, -1):
        out *= t
        out += coeffs[:, k] * k
    return out


def eval_signal(sig: PolyVecSignal, t: float) -> np.ndarray:
    """Evaluate the signal at ``t`` expressed in the signal's own variable."""
    return _horner(sig.coeffs, t)


def eval_signal_derivative(sig: PolyVecSignal, t: float) -> np.ndarray:
    """First time derivative at ``t`` in the signal's own variable."""
    return _horner_deriv(sig.coeffs, t)


def value_at_absolute(sig: PolyVecSignal, t_abs: float) -> np.ndarray:
    """Signal value at an absolute time."""
    return _horner(sig.coeffs, t_abs - sig.origin_time)


def derivative_at_absolute(sig: PolyVecSignal, t_abs: float) -> np.ndarray:
    """Signal time derivative at an absolute time."""
    return _horner_deriv(sig.coeffs, t_abs - sig.origin_time)


def shift_coefficients(sig: PolyVecSignal, t_shift: float) -> PolyVecSignal:
    """Re-express the signal in a variable shifted forward by ``t_shift``.

    The returned signal satisfies ``shifted(t) == original(t + t_shift)`` in
    the respective variables, via the binomial re-expansion of every monomial.
    Its ``origin_time`` advances by ``t_shift`` so the absolute-time view is
    unchanged.
    """
    a = sig.coeffs
    n = a.shape[1] - 1
    rows = _pascal_rows(n)
    out = np.zeros_like(a)
    # powers of the shift, computed once
    tp = np.ones(n + 1)
    for p in range(1, n + 1):
        tp[p] = tp[p - 1] * t_shift
    for k in range(n + 1):
        acc = np.zeros(a.shape[0])
        for l in range(k, n + 1):
            acc += a[:, l] * (rows[l][k] * tp[l - k])
        out[:, k] = acc
    return PolyVecSignal(out, origin_time=sig.origin_time + t_shift)


def xi_for_step(sig: PolyVecSignal, t_step_start: float) -> XiMatrix:
    """Coefficients of the signal re-anchored at an absolute step start time."""
    shifted = shift_coefficients(sig, t_step_start - sig.origin_time)
    return build_xi(shifted)


def build_xi(shifted: PolyVecSignal) -> XiMatrix:
    """Wrap the coefficients of an already step-local signal."""
    return XiMatrix(shifted.coeffs.copy())


def hermite_cubic(v0, d0, v1, d1, t0: float, t1: float) -> PolyVecSignal:
    """Cubic through (value, derivative) data at both interval ends.

    The cubic is anchored at ``t0`` (``origin_time = t0``), which keeps the
    coefficients well conditioned regardless of where the interval sits in
    absolute time.
    """
    if not t1 > t0:
        raise ValueError(f"invalid step: t1={t1} must exceed t0={t0}")
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    d0 = np.atleast_1d(np.asarray(d0, dtype=float))
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    d1 = np.atleast_1d(np.asarray(d1, dtype=float))
    if not (v0.shape == d0.shape == v1.shape == d1.shape):
        raise ValueError("endpoint data must share one shape")
    dt = t1 - t0
    dv = v1 - v0
    c = np.empty((v0.size, 4))
    c[:, 0] = v0
    c[:, 1] = d0
    c[:, 2] = (3.0 * dv - (2.0 * d0 + d1) * dt) / dt**2
    c[:, 3] = (-2.0 * dv + (d0 + d1) * dt) / dt**3
    return PolyVecSignal(c, origin_time=t0)


def hermite_quadratic(v0, d0, v1, t0: float, t1: float) -> PolyVecSignal:
    """Quadratic through left (value, derivative) data and a right value.

    This is the one-sided variant used for input reconstruction in the
    coupling iteration: it keeps the input command C1-continuous at the step
    start while the step-end value is the quantity being iterated on.
    """
    if not t1 > t0:
        raise ValueError(f"invalid step: t1={t1} must exceed t0={t0}")
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    d0 = np.atleast_1d(np.asarray(d0, dtype=float))
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    if not (v0.shape == d0.shape == v1.shape):
        raise ValueError("endpoint data must share one shape")
    dt = t1 - t0
    c = np.empty((v0.size, 3))
    c[:, 0] = v0
    c[:, 1] = d0
    c[:, 2] = (v1 - v0 - d0 * dt) / dt**2
    return PolyVecSignal(c, origin_time=t0)


def constant_signal(values, origin_time: float = 0.0) -> PolyVecSignal:
    """Degree-0 signal holding the given values."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    return PolyVecSignal(v.reshape(-1, 1), origin_time=origin_time)
