"""Analytic survival bound and the exponential transform of subharmonic functions.

For ``0 < eps < 2`` the modified rates ``(1 + eps1) a`` and ``(1 - eps2) delta``
with ``eps1 / (1 + eps1) = eps / 2`` and ``eps2 / (1 - eps2) = (eps / 2) e^eps``
turn a harmonic function h into the bounded subharmonic function
``f_eps = (1 - exp(-eps h)) / eps``. The resulting survival bound at recovery
rate ``(1 - gamma) delta_c`` is ``phi(gamma) = 1 - exp(-eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError

_SERIES_CUTOFF = 0.1
# (-x)^k / k! for k = 2..12, Horner coefficients from the top
_SERIES = [(-1.0) ** k / math.factorial(k) for k in range(2, 13)]


def _check_eps(eps):
    if not eps > 0:
        raise UsageError(f"eps must be > 0, got {eps}")


def _exp_tail(x):
    """``e^-x - 1 + x`` without cancellation, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < _SERIES_CUTOFF
    out = np.expm1(-x) + x
    if small.any():
        xs = x[small] if x.ndim else x
        acc = np.zeros_like(xs)
        for c in reversed(_SERIES):
            acc = acc * xs + c
        acc = acc * xs * xs
        if x.ndim:
            out[small] = acc
        else:
            out = acc
    return out


def phi_eps(eps: float, z):
    """``(e^{-eps z} - 1 + eps z) / eps``; nonnegative and convex in z."""
    _check_eps(eps)
    val = _exp_tail(eps * np.asarray(z, dtype=np.float64)) / eps
    return float(val) if np.ndim(val) == 0 else val


def f_eps(eps: float, h):
    """``(1 - e^{-eps h}) / eps``, increasing in h and bounded above by ``1 / eps``."""
    _check_eps(eps)
    val = -np.expm1(-eps * np.asarray(h, dtype=np.float64)) / eps
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class EpsParams:
    eps: float
    eps1: float
    eps2: float
    gamma: float

    @property
    def phi(self) -> float:
        return -math.expm1(-self.eps)


def gamma_of_eps(eps: float) -> float:
    x = eps * math.exp(eps)
    return (eps + x) / (2.0 + x)


def eps_params(eps: float) -> EpsParams:
    if not 0 < eps < 2:
        raise UsageError(f"eps must lie in (0, 2), got {eps}")
    half = 0.5 * eps
    x = half * math.exp(eps)
    return EpsParams(eps, half / (1.0 - half), x / (1.0 + x), gamma_of_eps(eps))


def eps_of_gamma(gamma: float, tol: float = 1e-14) -> float:
    """Invert the increasing map ``eps -> gamma(eps)`` on (0, 2) by bisection."""
    if not 0 < gamma < 1:
        raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
    lo, hi = 0.0, 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gamma_of_eps(mid) < gamma:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def phi_of_gamma(gamma: float) -> float:
    """Lower bound on the survival probability at recovery rate ``(1 - gamma) delta_c``."""
    return -math.expm1(-eps_of_gamma(gamma))


def quadratic_bound_check(eps: float, points: int = 10_000) -> float:
    """Largest excess of ``phi_eps`` over its quadratic majorants on [-1, 1].

    On [0, 1] the majorant is ``eps z^2 / 2``, on [-1, 0] it is
    ``eps e^eps z^2 / 2``. A nonpositive return value means both bounds hold.
    """
    _check_eps(eps)
    pos = np.linspace(0.0, 1.0, points)
    neg = np.linspace(-1.0, 0.0, points)
    v_pos = phi_eps(eps, pos) - 0.5 * eps * pos ** 2
    v_neg = phi_eps(eps, neg) - 0.5 * eps * math.exp(eps) * neg ** 2
    return float(max(v_pos.max(), v_neg.max()))


class QMatrix:
    """Square rate matrix with nonnegative off-diagonal entries and zero row sums."""

    def __init__(self, matrix, atol: float = 1e-9):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise UsageError(f"Q-matrix must be square, got shape {m.shape}")
        off = m - np.diag(np.diag(m))
        if (off < 0).any():
            raise UsageError("Q-matrix has negative off-diagonal entries")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m.sum(axis=1)).max() > atol * scale:
            raise UsageError("Q-matrix rows must sum to zero")
        self.matrix = m

    @classmethod
    def from_rates(cls, rates) -> "QMatrix":
        """Fill the diagonal so rows sum to zero."""
        m = np.array(rates, dtype=np.float64)
        np.fill_diagonal(m, 0.0)
        np.fill_diagonal(m, -m.sum(axis=1))
        return cls(m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, f) -> np.ndarray:
        """``Gf(x) = sum_y G(x, y) (f(y) - f(x))``."""
        f = np.asarray(f, dtype=np.float64)
        return (self.matrix * (f[None, :] - f[:, None])).sum(axis=1)

    def h_transform(self, h, eps: float) -> np.ndarray:
        """``H_eps h(x) = sum_y G(x, y) phi_eps(h(y) - h(x))``."""
        h = np.asarray(h, dtype=np.float64)
        diff = h[None, :] - h[:, None]
        return (self.matrix * phi_eps(eps, diff)).sum(axis=1)


@dataclass
class SubmartingaleReport:
    g_f: np.ndarray
    drift: np.ndarray
    weighted_drift: np.ndarray
    max_rel_error: float
    identity_holds: bool
    f_subharmonic: bool
    drift_nonnegative: bool

    @property
    def equivalent(self) -> bool:
        return self.f_subharmonic == self.drift_nonnegative


def submartingale_check(Q: QMatrix, h, eps: float, rtol: float = 1e-10,
                        sign_band: float = 0.0) -> SubmartingaleReport:
    """Compare ``G f_eps`` with ``e^{-eps h} (G h - H_eps h)`` entrywise.

    The two sides are computed independently; ``G f_eps`` from the transformed
    values, the right side from h directly. Errors are measured relative to
    ``sum_y G(x, y) |f(y) - f(x)|`` (at least 1). Sign flags treat values
    within ``sign_band`` of zero as zero.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (Q.size,):
        raise UsageError(f"h has shape {h.shape}, Q-matrix is {Q.size}x{Q.size}")
    _check_eps(eps)
    f = f_eps(eps, h)
    g_f = Q.apply(f)
    drift = Q.apply(h) - Q.h_transform(h, eps)
    weighted = np.exp(-eps * h) * drift
    off = Q.matrix - np.diag(np.diag(Q.matrix))
    scale = np.maximum(1.0, (off * np.abs(f[None, :] - f[:, None])).sum(axis=1))
    rel = float((np.abs(g_f - weighted) / scale).max()) if Q.size else 0.0
    return SubmartingaleReport(
        g_f=g_f,
        drift=drift,
        weighted_drift=weighted,
        max_rel_error=rel,
        identity_holds=rel <= rtol,
        f_subharmonic=bool((g_f >= -sign_band).all()),
        drift_nonnegative=bool((drift >= -sign_band).all()),
    )


def random_qmatrix(rng: np.random.Generator, max_states: int = 8, max_rate: float = 5.0) -> QMatrix:
    n = int(rng.integers(1, max_states + 1))
    rates = rng.uniform(0.0, max_rate, size=(n, n))
    # sparsify so that both signs of the drift show up
    rates *= rng.random((n, n)) < 0.6
    return QMatrix.from_rates(rates)


def fuzz_submartingale(cases: int, seed: int, max_states: int = 8):
    """Random ``(Q, h, eps)`` cases; yields ``(eps, report)``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    for _ in range(cases):
        Q = random_qmatrix(rng, max_states)
        h = rng.uniform(-2.0, 2.0, size=Q.size)
        eps = float(rng.uniform(0.0, 2.0))
        while eps == 0.0:
            eps = float(rng.uniform(0.0, 2.0))
        yield eps, submartingale_check(Q, h, eps)


def bracket_coefficients(eps: float, eps1: float, eps2: float):
    """The two coefficients multiplying the infection and recovery increments.

    ``eps1 - eps (1 + eps1) / 2`` and ``eps2 - eps e^eps (1 - eps2) / 2``; both
    vanish at :func:`eps_params` and are positive for larger eps1, eps2.
    """
    return (eps1 - 0.5 * eps * (1.0 + eps1),
            eps2 - 0.5 * eps * math.exp(eps) * (1.0 - eps2))


@dataclass
class DriftReport:
    params: EpsParams
    r: float
    coefficients: tuple
    min_gf: float
    min_drift: float
    min_chain_slack: float
    identity_max_rel_error: float
    identity_holds: bool
    max_increment: float

    def to_record(self) -> dict:
        return {
            "eps": self.params.eps, "eps1": self.params.eps1, "eps2": self.params.eps2,
            "gamma": self.params.gamma, "r": self.r,
            "coef_infection": self.coefficients[0], "coef_recovery": self.coefficients[1],
            "min_gf": self.min_gf, "min_drift": self.min_drift,
            "min_chain_slack": self.min_chain_slack,
            "identity_max_rel_error": self.identity_max_rel_error,
            "identity_holds": self.identity_holds, "max_increment": self.max_increment,
        }


def drift_certificate(torus, kernel, delta: float, eps: float, eps1: float | None = None,
                      eps2: float | None = None, increment_tol: float = 1e-9) -> DriftReport:
    """Evaluate the modified generator on ``f_eps(h)`` for the exact harmonic-type h.

    h comes from the eigenmeasure of the reversed-kernel process, so that
    ``G h = r h`` for the original generator. ``G~`` has rates
    ``(1 + eps1) a`` and ``(1 - eps2) delta``. Besides the minimum of
    ``G~ f_eps`` the report carries the slack of the estimate
    ``G~h - H~h >= r h + c1 I + c2 delta D`` (I, D the summed infection and
    recovery increments of h), which holds whenever h's increments are at
    most 1.
    """
    from . import exact
    from .lattice import InfectionKernel, reverse

    params = eps_params(eps)
    e1 = params.eps1 if eps1 is None else float(eps1)
    e2 = params.eps2 if eps2 is None else float(eps2)
    params = EpsParams(params.eps, e1, e2, params.gamma)

    dual_gen = exact.build_generator(torus, reverse(kernel), delta)
    eig = exact.exact_growth_rate(dual_gen)
    h = eig.h
    n = dual_gen.n_sites
    inc = exact.increments(h, n)
    max_inc = float(inc.max())
    if max_inc > 1.0 + increment_tol:
        raise NumericalError(f"increments of h exceed 1 (max {max_inc})")

    base = exact.build_generator(torus, kernel, delta)
    scaled = InfectionKernel(torus, {s: (1.0 + e1) * a for s, a in kernel.items()}, allow_zero=True)
    tilde = exact.build_generator(torus, scaled, (1.0 - e2) * delta)
    Q = QMatrix(tilde.dense(include_empty=True))
    rep = submartingale_check(Q, h, eps)

    # infection part I(A) and recovery part D(A) of the original generator on h
    infection = base.apply_col(h) + base.delta * _recovery_loss(base, h)
    recovery = _recovery_loss(base, h)
    c1, c2 = bracket_coefficients(eps, e1, e2)
    bound = eig.r * h + c1 * infection + c2 * delta * recovery
    slack = (rep.drift - bound)[1:]
    return DriftReport(
        params=params,
        r=eig.r,
        coefficients=(c1, c2),
        min_gf=float(rep.g_f[1:].min()),
        min_drift=float(rep.drift[1:].min()),
        min_chain_slack=float(slack.min()),
        identity_max_rel_error=rep.max_rel_error,
        identity_holds=rep.identity_holds,
        max_increment=max_inc,
    )


def _recovery_loss(gen, h) -> np.ndarray:
    """``sum_{i in A} (h(A) - h(A minus {i}))`` for every A."""
    s = gen.states()
    out = np.zeros(gen.n_states)
    for i in range(gen.n_sites):
        has = ((s >> i) & 1).astype(bool)
        out[has] += h[s[has]] - h[s[has] ^ (1 << i)]
    return out
