"""Rational functions of the Laplace variable for linearized system responses.

Every entry of the transfer matrix G(s) = C (sI - A)^-1 B + D, of the initial
state map P(s) = C (sI - A)^-1 and of R(s) = P(s)/s is a ratio of real
polynomials over the common denominator det(sI - A).  The coefficients are
extracted with the Faddeev-LeVerrier resolvent recursion, which yields the
characteristic polynomial and the adjugate matrix polynomial in one sweep.
No numerator/denominator cancellation is attempted: it is numerically fragile
and evaluation points stay away from poles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DEN_FLOOR = 1e-300


class PoleError(ArithmeticError):
    """Evaluation hit (numerically) a pole of a rational function."""


@dataclass(frozen=True)
class RationalFn:
    """num(s)/den(s) with coefficients stored in ascending powers of s."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        nz = np.nonzero(den)[0]
        if nz.size == 0:
            raise ValueError("denominator is the zero polynomial")
        den = den[: nz[-1] + 1]  # trim so the leading coefficient is nonzero
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __call__(self, s: float) -> float:
        return eval_rational(self, s)


def _horner(c: np.ndarray, s: float) -> float:
    acc = 0.0
    for k in range(c.size - 1, -1, -1):
        acc = acc * s + c[k]
    return acc


def eval_rational(r: RationalFn, s: float) -> float:
    den = _horner(r.den, s)
    if abs(den) <= _DEN_FLOOR:
        raise PoleError(f"evaluation at s={s} hits a pole")
    return _horner(r.num, s) / den


def eval_rational_stack(nums: np.ndarray, dens: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate many rational functions at many points in one vectorized sweep.

    ``nums``/``dens`` are (m, p) coefficient matrices (ascending powers,
    zero-padded on the right); ``s`` is a 1-d array.  Returns (m, len(s)).
    """
    s = np.asarray(s, dtype=float)
    num_v = np.broadcast_to(nums[:, -1:], (nums.shape[0], s.size)).copy()
    for k in range(nums.shape[1] - 2, -1, -1):
        num_v *= s
        num_v += nums[:, k : k + 1]
    den_v = np.broadcast_to(dens[:, -1:], (dens.shape[0], s.size)).copy()
    for k in range(dens.shape[1] - 2, -1, -1):
        den_v *= s
        den_v += dens[:, k : k + 1]
    if np.any(np.abs(den_v) <= _DEN_FLOOR):
        raise PoleError("stacked evaluation hits a pole")
    return num_v / den_v


def faddeev_leverrier(A: np.ndarray):
    """Characteristic polynomial and adjugate matrix polynomial of sI - A.

    Returns ``(char, adj, remainder)`` where ``char`` holds det(sI - A) in
    ascending powers (length n+1, leading 1), ``adj[k]`` is the matrix
    coefficient of s^(n-1-k) in adj(sI - A), and ``remainder`` is the final
    recursion matrix, zero up to roundoff by Cayley-Hamilton.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    n = A.shape[0]
    char_desc = np.empty(n + 1)
    char_desc[0] = 1.0
    M = np.eye(n)
    adj = np.empty((n, n, n))
    for k in range(1, n + 1):
        adj[k - 1] = M
        AM = A @ M
        c = -np.trace(AM) / k
        char_desc[k] = c
        M = AM + c * np.eye(n)
    return char_desc[::-1].copy(), adj, M


def resolvent_rationals(A, B, C, D) -> list[list[RationalFn]]:
    """Entries of C (sI - A)^-1 B + D over the common denominator det(sI - A)."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    char, adj, _ = faddeev_leverrier(A)
    n = A.shape[0]
    n_out, n_in = D.shape
    # numerator coefficient of s^(n-1-k) is (C adj[k] B); D contributes D*det
    terms = np.einsum("oi,kij,jm->kom", C, adj, B)  # (n, n_out, n_in)
    nums = np.zeros((n_out, n_in, n + 1))
    for k in range(n):
        nums[:, :, n - 1 - k] = terms[k]
    nums += D[:, :, None] * char[None, None, :]
    return [[RationalFn(nums[i, j], char) for j in range(n_in)] for i in range(n_out)]


def p_matrix(A, C) -> list[list[RationalFn]]:
    """Entries of C (sI - A)^-1: the resolvent with B = I and D = 0."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    return resolvent_rationals(A, np.eye(n), C, np.zeros((C.shape[0], n)))


def r_from_p(P: list[list[RationalFn]]) -> list[list[RationalFn]]:
    """Divide every entry by s (denominator coefficient shift)."""
    return [
        [RationalFn(e.num, np.concatenate(([0.0], e.den))) for e in row]
        for row in P
    ]


@dataclass
class LaplaceEnsemble:
    """G, P and R for one linearization point, plus the shared denominator."""

    G: list[list[RationalFn]]
    P: list[list[RationalFn]]
    R: list[list[RationalFn]]
    char_poly: np.ndarray
    _stacks: dict = field(default_factory=dict, repr=False)

    @property
    def n_out(self) -> int:
        return len(self.P)

    @property
    def n_st(self) -> int:
        return len(self.P[0]) if self.P else 0

    @property
    def n_in(self) -> int:
        return len(self.G[0]) if self.G and self.G[0] else 0


def build_ensemble(A, B, C, D) -> LaplaceEnsemble:
    """Assemble G, P, R from one set of directional-derivative matrices."""
    char, _, _ = faddeev_leverrier(A)
    G = resolvent_rationals(A, B, C, D)
    P = p_matrix(A, C)
    R = r_from_p(P)
    return LaplaceEnsemble(G=G, P=P, R=R, char_poly=char)
