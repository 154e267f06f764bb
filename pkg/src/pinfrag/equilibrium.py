"""Exact equilibrium machinery: particle configurations, sequential sampling,
closed-form marginals, and a brute-force enumeration oracle for small L.

Sampling is sequential-exact (first-gap conditionals chained left to right),
never MCMC, so that the stationary law used as ground truth is independent of
the dynamics being tested.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right, insort

import numpy as np

from pinfrag.laws import DomainError, KernelTable, ResourceLimitError


class Configuration:
    """Particle set {0 = x_0 < ... < x_{n+1} = L} with frozen endpoints.

    Backed by a sorted site list plus an occupancy byte array, giving
    O(log L) predecessor/successor queries and O(1) membership tests.
    The partial order between configurations is occupancy-wise, i.e.
    subset inclusion of the particle sets.
    """

    __slots__ = ("L", "sites", "occ")

    def __init__(self, L: int, particles=None):
        if L < 1:
            raise DomainError("L must be >= 1")
        self.L = L
        if particles is None:
            particles = (0, L)
        sites = sorted(set(int(p) for p in particles) | {0, L})
        if sites[0] != 0 or sites[-1] != L or sites[0] < 0:
            raise DomainError("particles must stay within [0, L]")
        self.sites = sites
        occ = bytearray(L + 1)
        for p in sites:
            occ[p] = 1
        self.occ = occ

    @classmethod
    def empty(cls, L: int) -> "Configuration":
        """Endpoints only; every interior site vacant."""
        return cls(L)

    @classmethod
    def full(cls, L: int) -> "Configuration":
        return cls(L, range(L + 1))

    @classmethod
    def from_mask(cls, L: int, mask: int) -> "Configuration":
        """Interior bitmask decode: bit i (0-based) holds site i + 1."""
        particles = [i + 1 for i in range(L - 1) if (mask >> i) & 1]
        return cls(L, [0, *particles, L])

    def interior_mask(self) -> int:
        mask = 0
        for p in self.sites[1:-1]:
            mask |= 1 << (p - 1)
        return mask

    @property
    def n(self) -> int:
        """Number of particles strictly inside (0, L)."""
        return len(self.sites) - 2

    def occupied(self, x: int) -> bool:
        return bool(self.occ[x])

    def neighbors(self, x: int) -> tuple[int, int]:
        """Nearest particle strictly below and strictly above x."""
        i = bisect_left(self.sites, x)
        if i < len(self.sites) and self.sites[i] == x:
            return self.sites[i - 1], self.sites[i + 1]
        return self.sites[i - 1], self.sites[i]

    def predecessor(self, x: int) -> int:
        """Nearest particle strictly below x (x > 0)."""
        return self.sites[bisect_left(self.sites, x) - 1]

    def successor(self, x: int) -> int:
        """Nearest particle strictly above x (x < L)."""
        return self.sites[bisect_right(self.sites, x)]

    def add(self, x: int) -> None:
        if not 0 < x < self.L:
            raise DomainError("cannot add at a frozen endpoint")
        if not self.occ[x]:
            insort(self.sites, x)
            self.occ[x] = 1

    def remove(self, x: int) -> None:
        if not 0 < x < self.L:
            raise DomainError("cannot remove a frozen endpoint")
        if self.occ[x]:
            del self.sites[bisect_left(self.sites, x)]
            self.occ[x] = 0

    def gaps(self):
        s = self.sites
        return [s[i + 1] - s[i] for i in range(len(s) - 1)]

    def copy(self) -> "Configuration":
        new = Configuration.__new__(Configuration)
        new.L = self.L
        new.sites = list(self.sites)
        new.occ = bytearray(self.occ)
        return new

    def __eq__(self, other) -> bool:
        return isinstance(other, Configuration) and self.L == other.L and self.sites == other.sites

    def __hash__(self):
        return hash((self.L, tuple(self.sites)))

    def __le__(self, other: "Configuration") -> bool:
        """Occupancy-wise order: every particle of self is a particle of other."""
        if self.L != other.L:
            raise DomainError("configurations live on different intervals")
        return all(other.occ[p] for p in self.sites)

    def __repr__(self):
        return f"Configuration(L={self.L}, particles={self.sites})"


def log_weight(table: KernelTable, config: Configuration) -> float:
    """Unnormalized log pi weight: n(eta) log lam + sum of log K over gaps."""
    lw = config.n * np.log(table.lam)
    for g in config.gaps():
        lw += table.log_k[g]
    return float(lw)


def gap_conditional(table: KernelTable, j: int, m: int) -> float:
    """P(first gap = j | remaining length m) for the left-to-right decomposition.

    Equals lam^{1[j<m]} K(j) Z_{m-j} / Z_m: a gap that does not exhaust the
    interval ends at an interior particle and carries one pinning factor.
    """
    if not 1 <= j <= m:
        raise DomainError(f"need 1 <= j <= m, got j={j}, m={m}")
    if m > table.L_max:
        raise DomainError(f"m={m} beyond table L_max={table.L_max}")
    log_p = table.log_k[j] + table.log_z[m - j] - table.log_z[m]
    if j < m:
        log_p += np.log(table.lam)
    return float(np.exp(log_p))


def gap_conditional_row(table: KernelTable, m: int) -> np.ndarray:
    """Vector of gap_conditional(j, m) over j = 1..m (index 0 unused)."""
    if not 1 <= m <= table.L_max:
        raise DomainError(f"m={m} outside [1, L_max]")
    log_p = table.log_k[1 : m + 1] + table.log_z[m - 1 :: -1] - table.log_z[m]
    log_p = log_p.copy()
    log_p[: m - 1] += np.log(table.lam)
    return np.exp(log_p)


def sample_config(table: KernelTable, L: int, rng: np.random.Generator) -> Configuration:
    """Exact draw from the stationary law on [0, L] by chained gap conditionals."""
    if L > table.L_max:
        raise DomainError(f"L={L} beyond table L_max={table.L_max}")
    particles = [0]
    pos = 0
    while pos < L:
        m = L - pos
        probs = gap_conditional_row(table, m)
        u = rng.random()
        j = int(np.searchsorted(np.cumsum(probs), u, side="right")) + 1
        j = min(j, m)
        pos += j
        particles.append(pos)
    return Configuration(L, particles)


def sample_log_probability(table: KernelTable, config: Configuration) -> float:
    """log of the probability that sample_config outputs exactly this configuration.

    Product of the chained conditionals; telescopes to the Gibbs weight over Z_L.
    """
    lp = 0.0
    s = config.sites
    for i in range(len(s) - 1):
        m = config.L - s[i]
        j = s[i + 1] - s[i]
        lp += np.log(gap_conditional(table, j, m))
    return float(lp)


def marginal_occupancy(table: KernelTable, L: int, x: int) -> float:
    """pi(eta_x = 1) = lam Z_x Z_{L-x} / Z_L for interior x."""
    if not 0 < x < L:
        raise DomainError(f"x={x} not strictly inside (0, {L})")
    if L > table.L_max:
        raise DomainError(f"L={L} beyond table L_max={table.L_max}")
    log_p = np.log(table.lam) + table.log_z[x] + table.log_z[L - x] - table.log_z[L]
    return float(np.exp(log_p))


def conditional_occupancy(table: KernelTable, a: int, b: int, d: int) -> float:
    """pi(eta_b = 1 | eta_a = eta_d = 1) = lam Z_{b-a} Z_{d-b} / Z_{d-a}.

    Valid for 0 <= a < b < d <= L by the renewal property at pinned sites;
    the content of (a, d) is independent of everything outside.
    """
    if not a < b < d:
        raise DomainError(f"need a < b < d, got {(a, b, d)}")
    if d - a > table.L_max:
        raise DomainError("span beyond table L_max")
    log_p = (
        np.log(table.lam)
        + table.log_z[b - a]
        + table.log_z[d - b]
        - table.log_z[d - a]
    )
    return float(np.exp(log_p))


def empty_window_probability(table: KernelTable, L: int, a: int, b: int) -> float:
    """pi(eta_x = 0 for every a < x < b), exact.

    Sums over the unique gap (u, v) spanning the window: u <= a, v >= b
    adjacent particles, weight lam^{1[u>0]} Z_u K(v-u) lam^{1[v<L]} Z_{L-v}.
    """
    if not 0 <= a < b <= L:
        raise DomainError("need 0 <= a < b <= L")
    if b - a < 2:
        return 1.0
    log_lam = np.log(table.lam)
    u = np.arange(0, a + 1)
    v = np.arange(b, L + 1)
    log_left = table.log_z[u] + np.where(u > 0, log_lam, 0.0)
    log_right = table.log_z[L - v] + np.where(v < L, log_lam, 0.0)
    span = v[None, :] - u[:, None]
    terms = log_left[:, None] + table.log_k[span] + log_right[None, :] - table.log_z[L]
    peak = terms.max()
    return float(np.exp(peak) * np.sum(np.exp(terms - peak)))


def particle_count_tail(table: KernelTable, L: int, trials: int, rng) -> np.ndarray:
    """Empirical P(n(eta) >= k) for k = 0..max observed, from exact samples."""
    counts = np.array([sample_config(table, L, rng).n for _ in range(trials)])
    kmax = counts.max()
    return np.array([(counts >= k).mean() for k in range(kmax + 1)])


def enumerate_measure(table: KernelTable, L: int) -> np.ndarray:
    """Full probability vector over interior bitmasks (bit i <-> site i + 1).

    Ground truth for the sampler, marginals, and the generator module;
    L <= 16 keeps the 2^{L-1} state space enumerable.
    """
    if L > 16:
        raise ResourceLimitError(f"enumeration limited to L <= 16, got L={L}")
    if L > table.L_max:
        raise DomainError(f"L={L} beyond table L_max={table.L_max}")
    n_states = 1 << (L - 1)
    log_lam = np.log(table.lam)
    log_k = table.log_k
    log_w = np.empty(n_states)
    for mask in range(n_states):
        prev = 0
        lw = 0.0
        n = 0
        rest = mask
        while rest:
            i = (rest & -rest).bit_length() - 1
            site = i + 1
            lw += log_k[site - prev]
            prev = site
            n += 1
            rest &= rest - 1
        lw += log_k[L - prev] + n * log_lam
        log_w[mask] = lw
    peak = log_w.max()
    w = np.exp(log_w - peak)
    return w / w.sum()


def expected_particle_count(table: KernelTable, L: int) -> float:
    """sum_x pi(eta_x = 1) over interior sites; closed form via marginals."""
    return float(sum(marginal_occupancy(table, L, x) for x in range(1, L)))


# --- conditional sampling between two pinned particles -----------------------
#
# The conditional law of the segment between two particles a < b, given that
# particles may only sit on an allowed subset of (a, b), factorizes over
# consecutive gaps with one pinning factor per placed particle.  A backward
# pass computes the constrained continuation weights; sampling then walks
# left to right.  This is what block updates and window couplings need.


def bridge_log_g(table: KernelTable, a: int, b: int, allowed: list[int]) -> np.ndarray:
    """log G(s) for s in [a] + allowed, where G(s) sums the weights of all
    particle placements on allowed positions strictly right of s, ending at b:
    G(s) = K(b - s) + sum_{p in allowed, p > s} lam K(p - s) G(p).
    """
    if b - a > table.L_max:
        raise DomainError("span beyond table L_max")
    pos = [a] + list(allowed)
    if any(not a < p < b for p in allowed):
        raise DomainError("allowed positions must lie strictly inside (a, b)")
    log_lam = np.log(table.lam)
    log_k = table.log_k
    m = len(pos)
    log_g = np.empty(m)
    for i in range(m - 1, -1, -1):
        s = pos[i]
        terms = [log_k[b - s]]
        for j in range(i + 1, m):
            terms.append(log_lam + log_k[pos[j] - s] + log_g[j])
        arr = np.array(terms)
        peak = arr.max()
        log_g[i] = peak + np.log(np.sum(np.exp(arr - peak)))
    return log_g


def bridge_sample(
    table: KernelTable,
    a: int,
    b: int,
    allowed: list[int],
    rng: np.random.Generator,
    log_g: np.ndarray | None = None,
) -> list[int]:
    """Exact draw of the particle set on `allowed`, conditioned on particles at
    a and b and vacancies on (a, b) outside `allowed`."""
    allowed = list(allowed)
    if log_g is None:
        log_g = bridge_log_g(table, a, b, allowed)
    pos = [a] + allowed
    log_lam = np.log(table.lam)
    log_k = table.log_k
    chosen: list[int] = []
    i = 0
    while True:
        s = pos[i]
        u = rng.random()
        acc = np.exp(log_k[b - s] - log_g[i])
        if u < acc:
            return chosen
        nxt = None
        for j in range(i + 1, len(pos)):
            acc += np.exp(log_lam + log_k[pos[j] - s] + log_g[j] - log_g[i])
            if u < acc:
                nxt = j
                break
        if nxt is None:
            nxt = len(pos) - 1  # guard against rounding at the last candidate
        chosen.append(pos[nxt])
        i = nxt


def bridge_log_probability(
    table: KernelTable, a: int, b: int, allowed: list[int], chosen: list[int]
) -> float:
    """log-probability that bridge_sample returns exactly `chosen`."""
    log_g = bridge_log_g(table, a, b, allowed)
    pos = [a] + list(allowed)
    index = {p: i for i, p in enumerate(pos)}
    log_lam = np.log(table.lam)
    lp = 0.0
    cur = a
    for p in chosen:
        lp += log_lam + table.log_k[p - cur] + log_g[index[p]] - log_g[index[cur]]
        cur = p
    lp += table.log_k[b - cur] - log_g[index[cur]]
    return float(lp)
