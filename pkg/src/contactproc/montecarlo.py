"""Event-driven Monte Carlo for contact processes started from finite sets.

Every replica draws from its own Philox stream seeded by
``SeedSequence(seed, spawn_key=(replica,))``; replicas are reduced in index
order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import _gillespie as gk
from .bounds import phi_of_gamma
from .errors import EstimationError, UsageError
from .lattice import FreeGroup, GroupSpec, InfectionKernel, Torus, enumerate_sites

Z95 = NormalDist().inv_cdf(0.975)
STATUS_NAMES = {gk.STATUS_ALIVE: "alive", gk.STATUS_EXTINCT: "extinct",
                gk.STATUS_CAPPED: "capped", gk.STATUS_OUT_OF_RANGE: "out_of_range"}


@dataclass(frozen=True)
class SimConfig:
    group: GroupSpec
    kernel: InfectionKernel
    delta: float
    horizon: float
    replicas: int
    seed: int
    initial: tuple = None
    size_cap: int = 10_000
    grid: tuple = None

    def __post_init__(self):
        if self.kernel.group != self.group:
            raise UsageError("kernel and config use different groups")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise UsageError(f"delta must be finite and >= 0, got {self.delta}")
        if not self.horizon > 0:
            raise UsageError(f"horizon must be > 0, got {self.horizon}")
        if self.replicas < 1:
            raise UsageError(f"need at least one replica, got {self.replicas}")
        if self.size_cap < 1:
            raise UsageError(f"size cap must be >= 1, got {self.size_cap}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise UsageError(f"seed must be a nonnegative integer, got {self.seed!r}")
        init = (self.group.identity,) if self.initial is None else self.initial
        object.__setattr__(self, "initial", tuple(self.group.canonical(s) for s in init))
        grid = np.linspace(0.0, self.horizon, 101) if self.grid is None else np.asarray(self.grid, float)
        if grid.ndim != 1 or (np.diff(grid) < 0).any() or grid.size and (grid[0] < 0 or grid[-1] > self.horizon):
            raise UsageError("record grid must be sorted and lie within [0, horizon]")
        object.__setattr__(self, "grid", tuple(float(x) for x in grid))

    def with_(self, **changes) -> "SimConfig":
        fields = dict(group=self.group, kernel=self.kernel, delta=self.delta,
                      horizon=self.horizon, replicas=self.replicas, seed=self.seed,
                      initial=self.initial, size_cap=self.size_cap, grid=self.grid)
        if "horizon" in changes and "grid" not in changes:
            fields["grid"] = None
        fields.update(changes)
        return SimConfig(**fields)

    def to_record(self) -> dict:
        return {
            "group": self.group.label(),
            "kernel": self.kernel.to_pairs(),
            "delta": self.delta,
            "horizon": self.horizon,
            "replicas": self.replicas,
            "seed": int(self.seed),
            "initial": [s if isinstance(s, str) else list(s) for s in self.initial],
            "size_cap": self.size_cap,
            "grid": list(self.grid),
        }


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(replica),))))


@dataclass
class Trajectory:
    replica: int
    status: str
    sizes: np.ndarray
    extinction_time: float
    t_end: float
    events: int
    final_sites: list = field(repr=False, default=None)

    @property
    def survived(self) -> bool:
        return self.status == "alive"


def _kernel_arrays(kernel: InfectionKernel):
    g = kernel.group
    items = list(kernel.items())
    d = g.d
    offsets = np.array([s for s, _ in items], dtype=np.int64).reshape(len(items), d)
    rates = np.array([a for _, a in items], dtype=np.float64)
    if isinstance(g, Torus):
        # shortest representative keeps coordinates small; result is reduced mod n anyway
        offsets = np.where(offsets > g.n // 2, offsets - g.n, offsets)
    cum = np.cumsum(rates) / rates.sum() if len(items) else np.zeros(0)
    return offsets, cum


def simulate(config: SimConfig, replica: int) -> Trajectory:
    """One replica of the jump chain on ``[0, horizon]``.

    Events arrive at total rate ``(|a| + delta) |eta|``. With probability
    ``delta / (|a| + delta)`` a uniform infected site recovers, otherwise a
    uniform infected site picks a kernel-distributed target and infects it if
    it is healthy.
    """
    rng = replica_rng(config.seed, replica)
    if isinstance(config.group, FreeGroup):
        return _simulate_words(config, replica, rng)
    g = config.group
    if not isinstance(g, Torus) and g.d > gk.MAX_PACKED_DIM:
        raise UsageError(f"lattice simulation supports d <= {gk.MAX_PACKED_DIM}")
    offsets, cum = _kernel_arrays(config.kernel)
    wrap = np.full(g.d, g.n if isinstance(g, Torus) else 0, dtype=np.int64)
    init = np.array(config.initial, dtype=np.int64).reshape(len(config.initial), g.d)
    sizes, status, t_ext, t_end, events, final = gk.run_replica(
        rng, offsets, cum, config.kernel.total, float(config.delta), wrap, init,
        float(config.horizon), int(config.size_cap), np.asarray(config.grid, dtype=np.float64))
    if status == gk.STATUS_OUT_OF_RANGE:
        raise EstimationError(f"replica {replica} left the representable coordinate range")
    return Trajectory(replica, STATUS_NAMES[status], sizes, float(t_ext), float(t_end), int(events),
                      [tuple(int(c) for c in row) for row in final])


def _simulate_words(config: SimConfig, replica: int, rng: np.random.Generator) -> Trajectory:
    g = config.group
    kernel = config.kernel
    sites = list(kernel.base)
    cum = np.cumsum(list(kernel.base.values())) / kernel.total if sites else np.zeros(0)
    grid = config.grid
    sizes = np.zeros(len(grid))
    active = list(dict.fromkeys(config.initial))
    where = {s: k for k, s in enumerate(active)}
    per_site = kernel.total + config.delta
    t, gi, events = 0.0, 0, 0
    status, t_ext = "alive", math.inf
    if len(active) > config.size_cap:
        status = "capped"
    while status == "alive":
        n = len(active)
        if n == 0:
            status, t_ext = "extinct", t
            break
        if per_site * n <= 0:
            break
        t_next = t + rng.exponential(1.0 / (per_site * n))
        while gi < len(grid) and grid[gi] < t_next:
            sizes[gi] = n
            gi += 1
        if t_next >= config.horizon:
            break
        t = t_next
        events += 1
        u = rng.random() * per_site
        src = min(int(rng.random() * n), n - 1)
        if u < config.delta:
            gone = active[src]
            last = active.pop()
            del where[gone]
            if src < len(active):
                active[src] = last
                where[last] = src
            continue
        k = int(np.searchsorted(cum, (u - config.delta) / kernel.total, side="right"))
        target = g.mul(active[src], sites[min(k, len(sites) - 1)])
        if target in where:
            continue
        where[target] = len(active)
        active.append(target)
        if len(active) > config.size_cap:
            status = "capped"
    t_end = t if status != "alive" else config.horizon
    fill = 0.0 if status == "extinct" else len(active)
    sizes[gi:] = fill
    return Trajectory(replica, status, sizes, t_ext, t_end, events, list(active))


def run_replicas(config: SimConfig, threads: int = 1, replicas: Sequence[int] | None = None) -> list:
    """All replicas in index order; ``threads`` only affects wall time."""
    idx = list(range(config.replicas)) if replicas is None else list(replicas)
    if threads <= 1 or len(idx) < 2:
        return [simulate(config, i) for i in idx]
    chunks = [idx[k::threads] for k in range(threads)]

    def work(chunk):
        return [simulate(config, i) for i in chunk]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, chunks))
    by_index = {tr.replica: tr for part in parts for tr in part}
    return [by_index[i] for i in idx]


def wilson_interval(successes: int, n: int, z: float = Z95):
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class SurvivalStats:
    delta: float
    horizon: float
    replicas: int
    survived: int
    extinct: int
    capped: int
    theta_hat: float
    ci: tuple
    se: float
    extinction_times: np.ndarray = field(repr=False)

    def to_row(self) -> dict:
        return {"delta": self.delta, "theta_hat": self.theta_hat, "ci_lo": self.ci[0],
                "ci_hi": self.ci[1], "n": self.replicas, "t_horizon": self.horizon}


def survival_from_trajectories(config: SimConfig, trajs: list) -> SurvivalStats:
    survived = sum(tr.status == "alive" for tr in trajs)
    capped = sum(tr.status == "capped" for tr in trajs)
    extinct = sum(tr.status == "extinct" for tr in trajs)
    n = len(trajs)
    hits = survived + capped
    theta = hits / n
    return SurvivalStats(
        delta=config.delta, horizon=config.horizon, replicas=n, survived=survived,
        extinct=extinct, capped=capped, theta_hat=theta, ci=wilson_interval(hits, n),
        se=math.sqrt(theta * (1 - theta) / n),
        extinction_times=np.array([tr.extinction_time for tr in trajs]),
    )


def estimate_survival(config: SimConfig, threads: int = 1, min_replicas: int = 100) -> SurvivalStats:
    """Fraction of replicas alive (or capped) at the horizon, with a Wilson 95% interval."""
    if config.replicas < min_replicas:
        raise UsageError(f"survival estimate needs >= {min_replicas} replicas")
    return survival_from_trajectories(config, run_replicas(config, threads))


@dataclass
class GrowthFit:
    times: np.ndarray
    mean_size: np.ndarray
    slope: float
    se: float
    window: tuple
    points_used: int
    capped: int
    batch_slopes: np.ndarray = field(repr=False)

    @property
    def log_mean(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mean_size)

    def rows(self) -> list:
        return [{"t": t, "mean_size": m, "log_mean": lm}
                for t, m, lm in zip(self.times, self.mean_size, self.log_mean)]


def _log_slope(times, means, in_window):
    use = in_window & (means > 0)
    if use.sum() < 2:
        return math.nan, int(use.sum())
    slope = np.polyfit(times[use], np.log(means[use]), 1)[0]
    return float(slope), int(use.sum())


def estimate_growth_rate(config: SimConfig, window: tuple | None = None, batches: int = 10,
                         threads: int = 1, min_replicas: int = 100) -> GrowthFit:
    """Least-squares slope of ``log E|eta_t|`` over the fit window.

    Extinct replicas count as size 0. The standard error is the delete-one
    jackknife over ``batches`` contiguous replica batches.
    """
    if config.replicas < min_replicas:
        raise UsageError(f"growth estimate needs >= {min_replicas} replicas")
    lo, hi = (config.horizon / 3.0, config.horizon) if window is None else window
    times = np.asarray(config.grid)
    in_window = (times >= lo) & (times <= hi)
    if in_window.sum() < 2:
        raise UsageError(f"record grid has fewer than 2 points in the fit window [{lo}, {hi}]")
    trajs = run_replicas(config, threads)
    sizes = np.array([tr.sizes for tr in trajs])
    capped = sum(tr.status == "capped" for tr in trajs)
    means = sizes.mean(axis=0)
    slope, used = _log_slope(times, means, in_window)
    if math.isnan(slope):
        raise EstimationError(
            f"all replicas extinct before the fit window [{lo}, {hi}] "
            f"(last positive mean at t={times[means > 0].max() if (means > 0).any() else 0.0})")
    bounds = np.linspace(0, len(trajs), batches + 1).astype(int)
    sums = np.array([sizes[a:b].sum(axis=0) for a, b in zip(bounds[:-1], bounds[1:])])
    counts = np.diff(bounds)
    total, total_n = sums.sum(axis=0), counts.sum()
    jack = []
    for b in range(batches):
        m = (total - sums[b]) / (total_n - counts[b])
        s, _ = _log_slope(times, m, in_window)
        jack.append(s)
    jack = np.array(jack)
    ok = jack[~np.isnan(jack)]
    if ok.size < 2:
        se = math.inf
    else:
        se = float(math.sqrt((ok.size - 1) / ok.size * ((ok - ok.mean()) ** 2).sum()))
    return GrowthFit(times, means, slope, se, (lo, hi), used, capped, jack)


@dataclass
class CriticalEstimate:
    bracket: tuple
    path: list
    horizon: float
    replicas: int
    p_star: float
    consistent: bool

    @property
    def estimate(self) -> float:
        return 0.5 * (self.bracket[0] + self.bracket[1])


class BracketError(UsageError):
    pass


def _survives(config: SimConfig, delta: float, p_star: float, threads: int):
    stats = estimate_survival(config.with_(delta=delta), threads)
    return stats.theta_hat > p_star, stats


def bisect_critical(config: SimConfig, delta_lo: float, delta_hi: float, iterations: int = 12,
                    p_star: float = 0.01, threads: int = 1) -> CriticalEstimate:
    """Bisection on delta with decision rule ``theta_hat > p_star`` at the horizon."""
    if not 0 <= delta_lo < delta_hi:
        raise UsageError("need 0 <= delta_lo < delta_hi")
    path = []
    ok_lo, st = _survives(config, delta_lo, p_star, threads)
    path.append((delta_lo, st.theta_hat, ok_lo))
    if not ok_lo:
        raise BracketError(f"process dies at delta_lo={delta_lo} (theta_hat={st.theta_hat}); widen the bracket")
    ok_hi, st = _survives(config, delta_hi, p_star, threads)
    path.append((delta_hi, st.theta_hat, ok_hi))
    if ok_hi:
        raise BracketError(f"process survives at delta_hi={delta_hi} (theta_hat={st.theta_hat}); widen the bracket")
    lo, hi = delta_lo, delta_hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        ok, st = _survives(config, mid, p_star, threads)
        path.append((mid, st.theta_hat, ok))
        if ok:
            lo = mid
        else:
            hi = mid
    alive = [d for d, _, ok in path if ok]
    dead = [d for d, _, ok in path if not ok]
    consistent = max(alive) < min(dead)
    return CriticalEstimate((lo, hi), path, config.horizon, config.replicas, p_star, consistent)


@dataclass
class BoundRow:
    gamma: float
    delta: float
    phi_gamma: float
    theta_hat: float
    ci_lo: float
    ci_hi: float
    se: float
    passed: bool

    def to_row(self) -> dict:
        return {"gamma": self.gamma, "delta": self.delta, "phi_gamma": self.phi_gamma,
                "theta_hat": self.theta_hat, "ci_lo": self.ci_lo, "pass": self.passed}


def verify_lower_bound(config: SimConfig, delta_c: float, gammas: Sequence[float],
                       threads: int = 1) -> list:
    """Check ``theta_hat((1 - gamma) delta_c) + 2 SE >= phi(gamma)`` for each gamma."""
    rows = []
    for gamma in gammas:
        if not 0 < gamma < 1:
            raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
        delta = (1.0 - gamma) * delta_c
        st = estimate_survival(config.with_(delta=delta), threads)
        phi = phi_of_gamma(gamma)
        rows.append(BoundRow(gamma, delta, phi, st.theta_hat, st.ci[0], st.ci[1], st.se,
                             st.theta_hat + 2 * st.se >= phi))
    return rows


def graphical_representation(group: Torus, kernel: InfectionKernel, delta: float, t: float,
                             rng: np.random.Generator):
    """Poisson arrows ``(time, i, j)`` and recovery marks ``(time, i)`` on ``[0, t]``."""
    index = enumerate_sites(group)
    arrows, marks = [], []
    for i, si in enumerate(index.sites):
        for x, a in kernel.items():
            j = index.index[group.mul(si, x)]
            for s in rng.uniform(0.0, t, size=rng.poisson(a * t)):
                arrows.append((float(s), i, j))
        if delta > 0:
            for s in rng.uniform(0.0, t, size=rng.poisson(delta * t)):
                marks.append((float(s), i))
    return arrows, marks


def pathwise_duality_check(group: Torus, kernel: InfectionKernel, delta: float, A, B, t: float,
                           seed: int):
    """Forward and backward hit indicators on one graphical representation.

    Forward: infection paths from A at time 0 along arrows, cut by marks,
    reaching B at time t. Backward: paths from B at time t run down in time
    along reversed arrows, reaching A at time 0.
    """
    if not isinstance(group, Torus):
        raise UsageError("pathwise duality needs a finite torus")
    if not t > 0:
        raise UsageError("t must be > 0")
    index = enumerate_sites(group)
    a = {index.index[group.canonical(s)] for s in A}
    b = {index.index[group.canonical(s)] for s in B}
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    arrows, marks = graphical_representation(group, kernel, delta, t, rng)
    events = sorted([(s, 0, i, j) for s, i, j in arrows] + [(s, 1, i, -1) for s, i in marks])
    fwd = set(a)
    for _, kind, i, j in events:
        if kind == 0:
            if i in fwd:
                fwd.add(j)
        else:
            fwd.discard(i)
    bwd = set(b)
    for _, kind, i, j in reversed(events):
        if kind == 0:
            if j in bwd:
                bwd.add(i)
        else:
            bwd.discard(i)
    return bool(fwd & b), bool(bwd & a)
