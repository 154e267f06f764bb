"""Continuous-time heat-bath chain with non-local gap-ratio rates.

One shared event representation drives everything: ring times form a Poisson
stream of rate L-1 with sites uniform on {1,...,L-1} and an independent
uniform threshold per ring (uniformization of independent unit-rate site
clocks).  A replica applies an event iff the site is active under its
schedule at that time, then resamples the site from the conditional law given
its current neighbors: occupy iff u < p.  Because p is monotone in the
surrounding configuration, replicas fed the same stream stay ordered, which
is what the coupling module exploits.
"""

from __future__ import annotations

import dataclasses
from bisect import bisect_left, bisect_right, insort
from math import exp, log
from typing import Callable, Iterable, Sequence

import numpy as np

from pinfrag.equilibrium import Configuration, bridge_log_g, bridge_sample
from pinfrag.laws import DomainError, KernelTable, ResourceLimitError

_BATCH = 8192

MAX_BLOCK_HALF_WIDTH = 12


@dataclasses.dataclass(frozen=True)
class UpdateEvent:
    """One clock ring: when, where, and the uniform threshold consumed."""

    time: float
    site: int
    u: float


class Schedule:
    """Time-windowed active-site sets.

    Windows (t_start, t_end, spec) must tile [0, horizon) without overlap.
    Specs: "all", ("exclude", frozenset), ("only", frozenset).
    """

    def __init__(self, windows: Sequence[tuple[float, float, object]]):
        windows = sorted(windows, key=lambda w: w[0])
        for (s0, e0, _), (s1, _, _) in zip(windows, windows[1:]):
            if s1 < e0:
                raise DomainError("schedule windows overlap")
        for s, e, spec in windows:
            if e <= s:
                raise DomainError("empty schedule window")
            if spec != "all" and not (
                isinstance(spec, tuple) and spec[0] in ("exclude", "only")
            ):
                raise DomainError(f"bad active-site spec {spec!r}")
        self.windows = [
            (float(s), float(e), self._normalize(spec)) for s, e, spec in windows
        ]

    @staticmethod
    def _normalize(spec):
        if spec == "all":
            return "all"
        kind, sites = spec
        return (kind, frozenset(int(x) for x in sites))

    @classmethod
    def all_sites(cls, horizon: float) -> "Schedule":
        return cls([(0.0, horizon, "all")])

    @classmethod
    def none(cls, horizon: float) -> "Schedule":
        return cls([(0.0, horizon, ("only", frozenset()))])

    def window_at(self, t: float):
        """(t_end, spec) of the window covering t; inactive outside windows."""
        for s, e, spec in self.windows:
            if s <= t < e:
                return e, spec
            if t < s:
                return s, ("only", frozenset())
        return float("inf"), ("only", frozenset())

    def is_active(self, site: int, t: float) -> bool:
        _, spec = self.window_at(t)
        return _spec_active(spec, site)

    def inactive_sites(self, L: int) -> frozenset[int]:
        """Interior sites never activated by any window."""
        never = set(range(1, L))
        for _, _, spec in self.windows:
            if spec == "all":
                return frozenset()
            kind, sites = spec
            if kind == "exclude":
                never &= sites
            else:
                never -= sites
        return frozenset(never)


def _spec_active(spec, site: int) -> bool:
    if spec == "all":
        return True
    kind, sites = spec
    return (site not in sites) if kind == "exclude" else (site in sites)


def censoring_length(L: int, beta: float = 1.0) -> int:
    """Marker spacing floor((log L)^(1+beta)) used by the censoring schedule."""
    return max(1, int(np.log(L) ** (1.0 + beta)))


def round_length(ell: int, alpha: float) -> float:
    """Duration 1 + ell^(alpha+1) of one censoring round."""
    return 1.0 + float(ell) ** (alpha + 1.0)


def censoring_schedule(
    L: int, ell: int, alpha: float, rounds: int
) -> tuple["Schedule", np.ndarray, list[int]]:
    """Round-structured schedule freezing marker sites y_j = j*ell.

    Round k covers [T_k, T_{k+1}) with T_k = k (1 + ell^(alpha+1)): all sites
    update during the first unit of the round, then the markers are frozen
    until the round ends.  Returns (schedule, round start times T_k including
    the final one, marker sites).
    """
    if ell < 1 or rounds < 1:
        raise DomainError("need ell >= 1 and rounds >= 1")
    markers = [y for y in range(ell, L, ell) if y < L]
    frozen = ("exclude", frozenset(markers))
    period = round_length(ell, alpha)
    windows = []
    t_marks = np.array([k * period for k in range(rounds + 1)])
    for k in range(rounds):
        windows.append((t_marks[k], t_marks[k] + 1.0, "all"))
        windows.append((t_marks[k] + 1.0, t_marks[k + 1], frozen))
    return Schedule(windows), t_marks, markers


def parse_schedule_file(path: str) -> Schedule:
    """Line format: `t_start t_end sites:<all|exclude:1,2|only:3,4>`."""
    windows = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            t0, t1, sites = line.split()
            if not sites.startswith("sites:"):
                raise DomainError(f"bad schedule line: {raw!r}")
            spec_txt = sites[len("sites:") :]
            if spec_txt == "all":
                spec = "all"
            else:
                kind, _, csv = spec_txt.partition(":")
                if kind not in ("exclude", "only"):
                    raise DomainError(f"bad site spec: {spec_txt!r}")
                spec = (kind, frozenset(int(x) for x in csv.split(",") if x))
            windows.append((float(t0), float(t1), spec))
    return Schedule(windows)


# --- rates -------------------------------------------------------------------


def creation_rate(table: KernelTable, config: Configuration, x: int) -> float:
    """Probability an update occupies the vacant interior site x.

    lam / (lam + K(r - l) / (K(r - x) K(x - l))) with l, r the flanking
    particles; the ratio is formed in log space so macroscopic gaps are safe.
    """
    if not 0 < x < config.L:
        raise DomainError(f"x={x} is frozen or outside (0, L)")
    if config.occupied(x):
        raise DomainError(f"site {x} is occupied; creation_rate needs a vacancy")
    left, right = config.neighbors(x)
    ratio = exp(table.log_creation_ratio(right - left, right - x, x - left))
    return table.lam / (table.lam + ratio)


def destruction_rate(table: KernelTable, config: Configuration, x: int) -> float:
    """Probability an update vacates the occupied interior site x.

    1 / (1 + lam K(r - x) K(x - l) / K(r - l)); complements creation_rate for
    the same flanking geometry, so the two sum to one exactly.
    """
    if x in (0, config.L):
        raise DomainError(f"site {x} is frozen")
    if not config.occupied(x):
        raise DomainError(f"site {x} is vacant; destruction_rate needs a particle")
    left, right = config.neighbors(x)
    ratio = exp(table.log_creation_ratio(right - left, right - x, x - left))
    return ratio / (ratio + table.lam)


def heat_bath_probability(table: KernelTable, config: Configuration, x: int) -> float:
    """p = pi(eta_x = 1 | configuration off x); the shared-threshold target."""
    if not 0 < x < config.L:
        raise DomainError(f"x={x} is frozen or outside (0, L)")
    left, right = config.neighbors(x)
    ratio = exp(table.log_creation_ratio(right - left, right - x, x - left))
    return table.lam / (table.lam + ratio)


def apply_update(table: KernelTable, config: Configuration, event: UpdateEvent) -> Configuration:
    """Set eta_x <- 1[u < p] with p the conditional occupancy given the rest.

    One rule covers creation and destruction, and keeps shared-threshold
    replicas ordered because p is monotone in the neighboring configuration.
    """
    p = heat_bath_probability(table, config, event.site)
    if event.u < p:
        config.add(event.site)
    else:
        config.remove(event.site)
    return config


# --- trajectory record -------------------------------------------------------


@dataclasses.dataclass
class TrajectoryRecord:
    times: np.ndarray
    site_grid: tuple[int, ...]
    occupancy: np.ndarray  # len(times) x len(site_grid), uint8
    n_particles: np.ndarray
    front: np.ndarray | None
    final: Configuration
    applied_events: int


_INACTIVE = ("only", frozenset())


class _Replica:
    """Mutable simulation state: sorted site list + occupancy bytes + schedule."""

    __slots__ = (
        "sites",
        "occ",
        "schedule",
        "win_idx",
        "win_end",
        "win_spec",
        "mirrored",
        "applied",
    )

    def __init__(self, config: Configuration, schedule: Schedule, mirrored: bool = False):
        self.sites = list(config.sites)
        self.occ = bytearray(config.occ)
        self.schedule = schedule
        self.win_idx = 0
        self.win_end = -1.0
        self.win_spec = _INACTIVE
        self.advance_window(0.0)
        self.mirrored = mirrored
        self.applied = 0

    def advance_window(self, t: float) -> None:
        wins = self.schedule.windows
        i = self.win_idx
        while i < len(wins) and t >= wins[i][1]:
            i += 1
        self.win_idx = i
        if i >= len(wins):
            self.win_end, self.win_spec = float("inf"), _INACTIVE
            return
        s, e, spec = wins[i]
        if t < s:
            self.win_end, self.win_spec = s, _INACTIVE
        else:
            self.win_end, self.win_spec = e, spec

    def as_configuration(self, L: int) -> Configuration:
        out = Configuration.__new__(Configuration)
        out.L = L
        out.sites = list(self.sites)
        out.occ = bytearray(self.occ)
        return out


def _apply_event(rep: _Replica, L: int, log_k, lam: float, x: int, u: float) -> int:
    """Heat-bath update of replica at site x with threshold u.

    Returns the occupancy change at x (-1, 0, +1).  Inlined bisect and log-K
    arithmetic: this is the hot path.
    """
    sites = rep.sites
    occ = rep.occ
    i = bisect_left(sites, x)
    if sites[i] == x:
        left = sites[i - 1]
        right = sites[i + 1]
        was = 1
    else:
        left = sites[i - 1]
        right = sites[i]
        was = 0
    ratio = exp(log_k[right - left] - log_k[right - x] - log_k[x - left])
    want = 1 if u * (lam + ratio) < lam else 0
    rep.applied += 1
    if want == was:
        return 0
    if want:
        sites.insert(i, x)
        occ[x] = 1
        if rep.mirrored:
            mx = L - x
            if mx != x and not occ[mx]:
                insort(sites, mx)
                occ[mx] = 1
        return 1
    if rep.mirrored:
        return 0  # growth variant: destruction suppressed
    del sites[i]
    occ[x] = 0
    return -1


def drive(
    table: KernelTable,
    replicas: list[_Replica],
    L: int,
    horizon: float,
    rng: np.random.Generator,
    observe_times: Sequence[float],
    observer: Callable[[float, list[_Replica]], None] | None = None,
    stop: Callable[[], bool] | None = None,
    on_change: Callable[[int, int, int], None] | None = None,
) -> None:
    """Run all replicas on one shared event stream until the horizon.

    `observer(t, replicas)` fires at each requested time <= horizon (state
    just before any event at the same instant).  `on_change(rep_index, site,
    delta)` fires after every occupancy change in a standard replica;
    mirrored replicas report only the primary site.  `stop()` is polled after
    changes and ends the run early, flushing the remaining observation times
    against the terminal state; use it only when the observed quantity is
    constant once the condition holds (e.g. pair discrepancy after
    coalescence).
    """
    log_k = table.log_k
    lam = table.lam
    obs = sorted(float(t) for t in observe_times if t <= horizon)
    obs_i = 0
    t = 0.0
    n_interior = L - 1
    if n_interior < 1:
        raise DomainError("need L >= 2 for any dynamics")
    scale = 1.0 / n_interior
    while True:
        dts = rng.exponential(scale=scale, size=_BATCH)
        xs = rng.integers(1, L, size=_BATCH)
        us = rng.random(size=_BATCH)
        for b in range(_BATCH):
            t_next = t + dts[b]
            if t_next == t:
                continue  # degenerate increment; regenerate from the stream
            while obs_i < len(obs) and obs[obs_i] <= t_next:
                if observer is not None:
                    observer(obs[obs_i], replicas)
                obs_i += 1
            if t_next >= horizon:
                return
            t = t_next
            x = int(xs[b])
            u = us[b]
            for ri, rep in enumerate(replicas):
                if t >= rep.win_end:
                    rep.advance_window(t)
                if not _spec_active(rep.win_spec, x):
                    continue
                delta = _apply_event(rep, L, log_k, lam, x, u)
                if delta and on_change is not None:
                    on_change(ri, x, delta)
            if stop is not None and stop():
                while obs_i < len(obs):
                    if observer is not None:
                        observer(obs[obs_i], replicas)
                    obs_i += 1
                return


def simulate(
    table: KernelTable,
    init: Configuration,
    horizon: float,
    rng: np.random.Generator,
    schedule: Schedule | None = None,
    boundary: Configuration | None = None,
    observe_times: Sequence[float] = (),
    observe_sites: Sequence[int] = (),
    variant: str = "standard",
    track_front: bool = False,
) -> TrajectoryRecord:
    """Event-driven run of one trajectory.

    The ring stream has total rate L-1 with uniform site marks; events at
    sites inactive under the schedule are discarded, so applied rings at any
    instant form a Poisson process of rate |active set|.  Frozen endpoints
    never change.  `variant="growth_mirrored"` suppresses destruction and
    mirrors every creation through L/2.
    """
    L = init.L
    if schedule is None:
        schedule = Schedule.all_sites(horizon)
    if boundary is not None:
        inactive = schedule.inactive_sites(L)
        for x in inactive:
            if init.occupied(x) != boundary.occupied(x):
                raise DomainError(
                    f"init disagrees with boundary on never-active site {x}"
                )
    if variant not in ("standard", "growth_mirrored"):
        raise DomainError(f"unknown variant {variant!r}")
    rep = _Replica(init.copy(), schedule, mirrored=(variant == "growth_mirrored"))
    grid = tuple(int(x) for x in observe_sites)
    times: list[float] = []
    occ_rows: list[list[int]] = []
    n_rows: list[int] = []
    front_rows: list[int] = []
    half = L // 2

    def observer(t: float, reps: list[_Replica]) -> None:
        r = reps[0]
        times.append(t)
        occ_rows.append([r.occ[x] for x in grid])
        n_rows.append(len(r.sites) - 2)
        if track_front:
            front_rows.append(r.sites[bisect_right(r.sites, half) - 1])

    drive(table, [rep], L, horizon, rng, observe_times, observer)
    return TrajectoryRecord(
        times=np.array(times),
        site_grid=grid,
        occupancy=np.array(occ_rows, dtype=np.uint8).reshape(len(times), len(grid)),
        n_particles=np.array(n_rows, dtype=np.int64),
        front=np.array(front_rows, dtype=np.int64) if track_front else None,
        final=rep.as_configuration(L),
        applied_events=rep.applied,
    )


def event_stream(
    L: int, horizon: float, rng: np.random.Generator
) -> Iterable[UpdateEvent]:
    """Yield the shared ring stream as explicit events (reference/tests path;
    `drive` inlines the same draws batch-wise)."""
    t = 0.0
    scale = 1.0 / (L - 1)
    while True:
        dt = rng.exponential(scale=scale)
        if dt == 0.0:
            continue
        t += dt
        if t >= horizon:
            return
        yield UpdateEvent(time=t, site=int(rng.integers(1, L)), u=float(rng.random()))


# --- block heat-bath update --------------------------------------------------


def block_weight_log(
    table: KernelTable, a: int, b: int, block_sites: Sequence[int], pattern: int
) -> float:
    """log W of one block pattern: lam^k times the gap-law product along
    a -> placed particles -> b; the empty pattern weighs K(b - a)."""
    prev = a
    lw = 0.0
    for idx, site in enumerate(block_sites):
        if (pattern >> idx) & 1:
            lw += table.log_k[site - prev] + log(table.lam)
            prev = site
    lw += table.log_k[b - prev]
    return float(lw)


def block_resample(
    table: KernelTable,
    config: Configuration,
    x: int,
    ell: int,
    rng: np.random.Generator,
) -> Configuration:
    """Exactly resample the contents of the block [x-ell, x+ell] from the
    stationary conditional given everything outside.

    The conditional weights are lam^k prod K(gap) along the pinned bridge from
    the nearest outside particle on the left to the one on the right; the
    bridge is drawn by a backward/forward pass over the block sites, which
    reproduces the normalized block-pattern weights without enumerating the
    2^|block| patterns.
    """
    if not 0 < x < config.L:
        raise DomainError(f"block center {x} outside (0, L)")
    if ell > MAX_BLOCK_HALF_WIDTH:
        raise ResourceLimitError(
            f"block half-width {ell} beyond the enumerable limit {MAX_BLOCK_HALF_WIDTH}"
        )
    lo = max(1, x - ell)
    hi = min(config.L - 1, x + ell)
    block = list(range(lo, hi + 1))
    a = config.predecessor(lo)
    b = config.successor(hi)
    for s in block:
        config.remove(s)
    for s in bridge_sample(table, a, b, block, rng):
        config.add(s)
    return config


def block_pattern_log_probability(
    table: KernelTable, config: Configuration, x: int, ell: int, pattern: int
) -> float:
    """log-probability block_resample leaves the given bit pattern on the block."""
    lo = max(1, x - ell)
    hi = min(config.L - 1, x + ell)
    block = list(range(lo, hi + 1))
    a = config.predecessor(lo)
    b = config.successor(hi)
    log_g = bridge_log_g(table, a, b, block)
    lw = block_weight_log(table, a, b, block, pattern)
    return float(lw - log_g[0])
