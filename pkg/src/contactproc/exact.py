"""Exact linear algebra for the contact process on small tori.

States are bitmasks over the enumerated sites (bit k set iff site k is
infected). All vectors have length ``2**n`` and are indexed by bitmask; entry
0 is the empty set and is kept at zero, which realises the restriction of the
dynamics to nonempty sets. Mass that would flow into the empty set is lost,
so the semigroup is sub-Markov.

The generator is never stored as a matrix. Applying it uses the fact that a
vector of length ``2**n`` reshaped to ``(-1, 2, 2**j)`` has bit j on its
middle axis, which turns "add site j" and "remove site j" into slicing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosedError, NumericalError, UsageError
from .lattice import InfectionKernel, SiteIndex, Torus, enumerate_sites, reverse

_PRESSURE_CACHE_MAX_SITES = 16


def _split(v: np.ndarray, j: int):
    """Views of ``v`` on states without / with site j."""
    v3 = v.reshape(-1, 2, 1 << j)
    return v3[:, 0, :], v3[:, 1, :]


@dataclass(frozen=True, eq=False)
class RestrictedGenerator:
    """Generator of the contact process restricted to nonempty subsets.

    ``exit_rate[s]`` is the total jump rate out of state ``s``, leaks to the
    empty set included, and ``theta`` is its maximum (the uniformization
    constant).
    """

    group: Torus
    kernel: InfectionKernel
    delta: float
    index: SiteIndex
    sources: tuple
    exit_rate: np.ndarray
    theta: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.index)

    @property
    def n_states(self) -> int:
        return 1 << self.n_sites

    def states(self) -> np.ndarray:
        return np.arange(self.n_states, dtype=np.int64)

    def bits(self, i: int) -> np.ndarray:
        return ((self.states() >> i) & 1).astype(np.float64)

    def popcount(self) -> np.ndarray:
        key = "popcount"
        if key not in self._cache:
            s = self.states()
            self._cache[key] = sum(((s >> i) & 1) for i in range(self.n_sites)).astype(np.float64)
        return self._cache[key]

    def pressure(self, j: int) -> np.ndarray:
        """Total infection rate into site j, ``sum_{i in A} a(i, j)``, for every A."""
        key = ("pressure", j)
        if key in self._cache:
            return self._cache[key]
        c = np.zeros(self.n_states)
        s = self.states()
        for i, a in self.sources[j]:
            c += a * ((s >> i) & 1)
        if self.n_sites <= _PRESSURE_CACHE_MAX_SITES:
            self._cache[key] = c
        return c

    def apply_row(self, v: np.ndarray) -> np.ndarray:
        """Row action ``v G`` (measures)."""
        v = np.array(v, dtype=np.float64)
        v[0] = 0.0
        out = -self.exit_rate * v
        for j in range(self.n_sites):
            v0, v1 = _split(v, j)
            o0, o1 = _split(out, j)
            c0, _ = _split(self.pressure(j), j)
            o1 += v0 * c0
            if self.delta:
                o0 += self.delta * v1
        out[0] = 0.0
        return out

    def apply_col(self, f: np.ndarray) -> np.ndarray:
        """Column action ``G f`` (functions, with ``f(empty) = 0``)."""
        f = np.array(f, dtype=np.float64)
        f[0] = 0.0
        out = -self.exit_rate * f
        for j in range(self.n_sites):
            f0, f1 = _split(f, j)
            o0, o1 = _split(out, j)
            c0, _ = _split(self.pressure(j), j)
            o0 += c0 * f1
            if self.delta:
                o1 += self.delta * f0
        out[0] = 0.0
        return out

    def dense(self, include_empty: bool = False) -> np.ndarray:
        """Dense matrix; with ``include_empty`` it is the full Q-matrix on all subsets."""
        if self.n_sites > 12:
            raise UsageError("dense generator limited to 12 sites")
        N = self.n_states
        G = np.zeros((N, N))
        s = self.states()
        for j in range(self.n_sites):
            without = s[(s >> j) & 1 == 0]
            c = self.pressure(j)[without]
            G[without, without | (1 << j)] += c
            if self.delta:
                with_j = s[(s >> j) & 1 == 1]
                G[with_j, with_j ^ (1 << j)] += self.delta
        G[s, s] -= self.exit_rate
        if include_empty:
            return G
        return G[1:, 1:]

    def mask_permutation(self, k: int) -> np.ndarray:
        """``perm[s]`` is the bitmask of ``site_k * A`` where ``A`` has bitmask ``s``."""
        s = self.states()
        perm = np.zeros_like(s)
        for i in range(self.n_sites):
            perm |= ((s >> i) & 1) << int(self.index.translate[k, i])
        return perm

    def indicator_hits(self, mask: int) -> np.ndarray:
        """``1{A ∩ B != empty}`` as a function of A, for fixed B given by ``mask``."""
        return ((self.states() & mask) != 0).astype(np.float64)


def build_generator(group: Torus, kernel: InfectionKernel, delta: float) -> RestrictedGenerator:
    if not isinstance(group, Torus):
        raise UsageError(f"exact engine needs a finite torus, got {group.label()}")
    if kernel.group != group:
        raise UsageError(f"kernel lives on {kernel.group.label()}, not {group.label()}")
    delta = float(delta)
    if not math.isfinite(delta) or delta < 0:
        raise UsageError(f"recovery rate must be finite and >= 0, got {delta}")
    index = enumerate_sites(group)
    n = len(index)
    sources = []
    for j, sj in enumerate(index.sites):
        # a(i, j) = a(0, x) with j = i x, so i = j x^-1
        src = {}
        for x, a in kernel.items():
            i = index.index[group.mul(sj, group.inv(x))]
            if i != j:
                src[i] = src.get(i, 0.0) + a
        sources.append(tuple(sorted(src.items())))
    N = 1 << n
    s = np.arange(N, dtype=np.int64)
    exit_rate = np.zeros(N)
    for j in range(n):
        c = np.zeros(N)
        for i, a in sources[j]:
            c += a * ((s >> i) & 1)
        exit_rate += np.where((s >> j) & 1, delta, c)
    exit_rate[0] = 0.0
    return RestrictedGenerator(group, kernel, delta, index, tuple(sources), exit_rate,
                               float(exit_rate.max()))


def semigroup_apply(gen: RestrictedGenerator, v: np.ndarray, t: float, form: str = "row",
                    tail: float = 1e-13) -> np.ndarray:
    """``v P_t`` (``form="row"``) or ``P_t v`` (``form="col"``) by uniformization.

    The horizon is split into slices with ``theta * dt <= 30`` so that the
    leading Poisson weight never underflows.
    """
    if t < 0:
        raise UsageError(f"time must be >= 0, got {t}")
    if form not in ("row", "col"):
        raise UsageError(f"form must be 'row' or 'col', got {form!r}")
    v = np.array(v, dtype=np.float64)
    if v.shape != (gen.n_states,):
        raise UsageError(f"vector has shape {v.shape}, expected ({gen.n_states},)")
    v[0] = 0.0
    theta = gen.theta
    if t == 0 or theta == 0:
        return v
    apply = gen.apply_row if form == "row" else gen.apply_col
    steps = max(1, math.ceil(theta * t / 30.0))
    x = theta * t / steps
    kmax = int(x + 40 * math.sqrt(x) + 60)
    for _ in range(steps):
        w = math.exp(-x)
        cum = w
        term = v
        acc = w * v
        k = 0
        while 1.0 - cum > tail and k < kmax:
            term = term + apply(term) / theta
            k += 1
            w *= x / k
            acc += w * term
            cum += w
        v = acc
    return v


def point_mass(gen: RestrictedGenerator, mask: int) -> np.ndarray:
    v = np.zeros(gen.n_states)
    v[mask] = 1.0
    return v


def state_distribution(gen: RestrictedGenerator, mask: int, t: float) -> np.ndarray:
    """Law of the state at time t from ``mask``; entry 0 holds the extinction probability."""
    p = semigroup_apply(gen, point_mass(gen, mask), t)
    p[0] = max(0.0, 1.0 - p[1:].sum())
    return p


def expected_size(gen: RestrictedGenerator, t: float, mask: int = 1) -> float:
    """``E|eta_t|`` started from ``mask`` (default: the origin)."""
    return float(semigroup_apply(gen, point_mass(gen, mask), t) @ gen.popcount())


def _reachable(gen: RestrictedGenerator, start: int, backward: bool) -> np.ndarray:
    N = gen.n_states
    seen = np.zeros(N, dtype=bool)
    seen[start] = True
    frontier = seen.copy()
    positive = [gen.pressure(j) > 0 for j in range(gen.n_sites)]
    while frontier.any():
        new = np.zeros(N, dtype=bool)
        for j in range(gen.n_sites):
            f0, f1 = _split(frontier, j)
            n0, n1 = _split(new, j)
            c0, _ = _split(positive[j], j)
            if backward:
                n0 |= f1 & c0
                if gen.delta:
                    n1 |= f0
            else:
                n1 |= f0 & c0
                if gen.delta:
                    n0 |= f1
        new[0] = False
        frontier = new & ~seen
        seen |= new
    return seen


def is_irreducible(gen: RestrictedGenerator) -> bool:
    """Whether every nonempty state communicates with every other (BFS both ways)."""
    fwd = _reachable(gen, 1, backward=False)
    bwd = _reachable(gen, 1, backward=True)
    return bool(fwd[1:].all() and bwd[1:].all())


@dataclass
class EigenResult:
    """Perron data of the restricted generator.

    ``nu`` is indexed by bitmask (``nu[0] = 0``) and normalised so that every
    site is covered with total mass 1. ``h[A]`` is the mass of sets hitting A.
    """

    r: float
    nu: np.ndarray
    h: np.ndarray
    residual_nu: float
    residual_h: float
    normalization: float
    iterations: int

    def to_record(self) -> dict:
        return {"r": self.r, "residual_nu": self.residual_nu, "residual_h": self.residual_h,
                "normalization": self.normalization, "iterations": self.iterations}


def site_coverage(gen: RestrictedGenerator, measure: np.ndarray, site: int = 0) -> float:
    """``sum_B measure(B) 1{site in B}``."""
    return float(measure @ gen.bits(site))


def exact_growth_rate(gen: RestrictedGenerator, tol: float = 1e-13, max_iter: int = 200_000,
                      residual_tol: float = 1e-12) -> EigenResult:
    """Growth rate r and eigenmeasure by power iteration on ``I + G / (theta + 1)``.

    Stops once successive Rayleigh quotients differ by less than ``tol`` and
    the eigen-residual of the (sum-normalised) iterate is below
    ``residual_tol``.
    """
    N = gen.n_states
    if gen.delta == 0:
        return _growth_rate_without_recovery(gen)
    if not is_irreducible(gen):
        raise UsageError("restricted generator is reducible; kernel support must generate the torus")
    scale = gen.theta + 1.0
    nu = np.ones(N)
    nu[0] = 0.0
    nu /= nu.sum()
    prev = None
    it = 0
    for it in range(1, max_iter + 1):
        g = gen.apply_row(nu)
        rq = g.sum()
        if prev is not None and abs(rq - prev) < tol:
            if np.abs(g - rq * nu).max() <= residual_tol:
                break
        prev = rq
        nu = nu + g / scale
        nu /= nu.sum()
    else:
        g = gen.apply_row(nu)
        res = float(np.abs(g - g.sum() * nu).max())
        raise NumericalError(f"power iteration did not converge in {max_iter} iterations", res)
    return _finish_eigen(gen, nu, it)


def _growth_rate_without_recovery(gen: RestrictedGenerator) -> EigenResult:
    # Without recovery no mass leaves the nonempty sets, so r = 0.
    if gen.kernel.is_zero:
        nu = np.zeros(gen.n_states)
        nu[1 << np.arange(gen.n_sites)] = 1.0
    else:
        if not _reachable(gen, 1, backward=False)[-1]:
            raise UsageError("kernel support does not generate the torus")
        nu = np.zeros(gen.n_states)
        nu[-1] = 1.0
    return _finish_eigen(gen, nu, 0, r=0.0)


def _finish_eigen(gen: RestrictedGenerator, nu: np.ndarray, iterations: int,
                  r: float | None = None) -> EigenResult:
    norm = site_coverage(gen, nu)
    nu = nu / norm
    g = gen.apply_row(nu)
    if r is None:
        r = float(g.sum() / nu.sum())
    res_nu = float(np.abs(g - r * nu).max())
    h = harmonic_from_measure(np.clip(nu, 0.0, None))
    dual = build_generator(gen.group, reverse(gen.kernel), gen.delta)
    res_h = float(np.abs(dual.apply_col(h) - r * h).max())
    return EigenResult(r, nu, h, res_nu, res_h, norm, iterations)


def homogeneity_defect(gen: RestrictedGenerator, nu: np.ndarray) -> float:
    """Largest change of ``nu`` under any translation of the torus."""
    worst = 0.0
    for k in range(gen.n_sites):
        perm = gen.mask_permutation(k)
        worst = max(worst, float(np.abs(nu[perm] - nu).max()))
    return worst


def harmonic_from_measure(mu: np.ndarray) -> np.ndarray:
    """``h(A) = sum_B mu(B) 1{A ∩ B != empty}`` for every subset A.

    Computed as total mass minus the subset-sum of ``mu`` over the complement
    of A.
    """
    mu = np.array(mu, dtype=np.float64)
    N = mu.shape[0]
    n = N.bit_length() - 1
    if N != 1 << n:
        raise UsageError(f"measure length {N} is not a power of two")
    if (mu < 0).any():
        raise UsageError("measure has negative entries")
    mu[0] = 0.0
    below = mu.copy()
    for j in range(n):
        b0, b1 = _split(below, j)
        b1 += b0
    h = below[-1] - below[::-1]
    h[0] = 0.0
    return h


def increments(h: np.ndarray, n_sites: int) -> np.ndarray:
    """``h(A) - h(A minus {i})`` for all A containing i, concatenated over i."""
    out = []
    for i in range(n_sites):
        h0, h1 = _split(h, i)
        out.append((h1 - h0).ravel())
    return np.concatenate(out)


@dataclass
class ResolventMeasure:
    lam: float
    nu: np.ndarray
    pi: float
    residual: float
    iterations: int


def singleton_measure(gen: RestrictedGenerator) -> np.ndarray:
    mu = np.zeros(gen.n_states)
    mu[1 << np.arange(gen.n_sites)] = 1.0
    return mu


def resolvent_eigenmeasure(gen: RestrictedGenerator, lam: float, r: float | None = None,
                           tol: float = 1e-12, max_iter: int = 2_000_000) -> ResolventMeasure:
    """Solve ``nu (lam - G) = mu`` with ``mu`` the unit mass on each singleton.

    Jacobi sweeps: the diagonal ``lam + exit_rate`` is positive whenever
    ``lam > r >= -delta``, and ``lam - G`` is then a nonsingular M-matrix, so
    the splitting converges for every admissible ``lam``.
    """
    if r is None:
        r = exact_growth_rate(gen).r
    if not lam > r:
        raise IllPosedError(f"resolvent needs lam > r = {r}, got {lam}")
    mu = singleton_measure(gen)
    diag = lam + gen.exit_rate
    diag[0] = 1.0
    nu = mu / diag
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = gen.apply_row(nu)
        resid = lam * nu - g - mu
        resid[0] = 0.0
        res = float(np.abs(resid).max())
        if res <= tol * max(1.0, float(nu.max())):
            break
        nu = nu - resid / diag
    else:
        raise NumericalError(f"resolvent iteration did not converge in {max_iter} sweeps", res)
    return ResolventMeasure(float(lam), nu, site_coverage(gen, nu), res, it)


def duality_check(group: Torus, kernel: InfectionKernel, delta: float, A, B, t: float):
    """``(P[eta^A_t ∩ B != empty], P[A ∩ dual eta^B_t != empty])``.

    ``A`` and ``B`` are bitmasks or iterables of sites.
    """
    gen = build_generator(group, kernel, delta)
    dual = build_generator(group, reverse(kernel), delta)
    a, b = _as_mask(gen, A), _as_mask(gen, B)
    if a == 0 or b == 0:
        raise UsageError("duality check needs nonempty A and B")
    lhs = semigroup_apply(gen, point_mass(gen, a), t) @ gen.indicator_hits(b)
    rhs = semigroup_apply(dual, point_mass(dual, b), t) @ dual.indicator_hits(a)
    return float(lhs), float(rhs)


def _as_mask(gen: RestrictedGenerator, x) -> int:
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < gen.n_states:
            raise UsageError(f"bitmask {x} out of range")
        return int(x)
    return gen.index.mask_of(x)


def submultiplicativity_check(gen: RestrictedGenerator, s: float, t: float):
    """``(E|eta_{s+t}|, E|eta_s| * E|eta_t|)`` from a single infected origin."""
    if s < 0 or t < 0:
        raise UsageError("times must be >= 0")
    return expected_size(gen, s + t), expected_size(gen, s) * expected_size(gen, t)
