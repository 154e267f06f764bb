"""Gap-law numerics: power-law kernel, exponential tilts, renewal mass, partition function.

Everything downstream (exact sampling, jump rates, generator matrices) is a
function of a handful of one-dimensional tables indexed by gap length.  This
module builds those tables once, in a numerically controlled way:

* ``K(j) = C_K j^{-(1+rho)}`` with ``C_K`` normalizing K to a probability law,
* the tilt exponent ``F`` solving ``lam * sum_j exp(-F j) K(j) = 1`` (zero for
  ``lam <= 1``),
* the tilted gap law ``K_lam(j) = lam * exp(-F j) * K(j)`` (a probability law
  for ``lam >= 1``, defective with total mass ``lam`` for ``lam < 1``),
* the renewal mass function ``P_lam`` and, in the defective phase, the
  survival function ``R_lam``,
* the interval partition function ``Z_m`` in log space.

All mass ratios consumed by the dynamics are formed in log space; gaps up to
``L_max ~ 3e4`` are supported before the O(L^2) recursions become the
bottleneck.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from typing import NamedTuple

import numpy as np
from scipy import integrate

TABLE_FORMAT_VERSION = 2

CACHE_ENV_VAR = "PINFRAG_CACHE"

# Truncation point for infinite gap sums.  Tails beyond it are added through
# an Euler-Maclaurin expansion whose remainder is far below 1e-12 relative.
_TAIL_CUTOFF = 200_000


class DomainError(ValueError):
    """Argument outside the contract of a law operation."""


class TableExtensionRequired(ValueError):
    """A table lookup beyond L_max; rebuild the table with a larger L_max."""


class ResourceLimitError(ValueError):
    """Requested computation exceeds the enumerable / dense-solve regime."""


def _power_tail(s: float, j: int) -> float:
    """sum_{k > j} k^{-s} for s > 1, via Euler-Maclaurin about a = j + 1.

    Remainder is O(a^{-s-5}), i.e. below 1e-25 relative for a >= 1e4.
    """
    a = float(j + 1)
    return (
        a ** (1.0 - s) / (s - 1.0)
        + 0.5 * a ** (-s)
        + s / 12.0 * a ** (-s - 1.0)
        - s * (s + 1.0) * (s + 2.0) / 720.0 * a ** (-s - 3.0)
    )


def zeta_norm(rho: float) -> float:
    """Normalizer C_K = 1 / sum_{j>=1} j^{-(1+rho)}.

    Partial sum out to a fixed cutoff plus an Euler-Maclaurin tail; the tail
    remainder keeps the relative error well under 1e-12.  Deterministic.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie strictly in (0, 1), got {rho}")
    s = 1.0 + rho
    j = np.arange(1, _TAIL_CUTOFF + 1, dtype=np.float64)
    zeta_s = float(np.sum(j ** (-s))) + _power_tail(s, _TAIL_CUTOFF)
    return 1.0 / zeta_s


@dataclasses.dataclass(frozen=True)
class KernelParams:
    """Gap-law parameters: tail exponent rho in (0,1), pinning weight lam > 0.

    ``c_k`` is derived, never passed: the unique constant making the gap law
    sum to one.
    """

    rho: float
    lam: float
    c_k: float = dataclasses.field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie strictly in (0, 1), got {self.rho}")
        if self.lam <= 0.0:
            raise DomainError(f"lam must be positive, got {self.lam}")
        object.__setattr__(self, "c_k", zeta_norm(self.rho))

    @property
    def defective(self) -> bool:
        """True in the phase where the tilted gap law has total mass < 1."""
        return self.lam < 1.0

    @property
    def phase(self) -> str:
        if self.lam > 1.0:
            return "localized"
        if self.lam < 1.0:
            return "delocalized"
        return "critical"

    def log_k(self, j) -> np.ndarray | float:
        """log K(j) = log C_K - (1+rho) log j, vectorized over j >= 1."""
        j_arr = np.asarray(j, dtype=np.float64)
        if np.any(j_arr < 1):
            raise DomainError("gap length must be >= 1")
        return np.log(self.c_k) - (1.0 + self.rho) * np.log(j_arr)

    def k(self, j) -> np.ndarray | float:
        return np.exp(self.log_k(j))

    def k_tail(self, j: int) -> float:
        """sum_{m > j} K(m), via the Euler-Maclaurin tail."""
        return self.c_k * _power_tail(1.0 + self.rho, j)


class FreeEnergyResult(NamedTuple):
    value: float
    defective: bool


def _tilted_mass_deficit(params: KernelParams, f: float) -> float:
    """1 - sum_j exp(-f j) K(j), computed without cancellation.

    Head terms use expm1; the tail splits into the plain gap-law tail minus
    sum_{j>J} exp(-f j) K(j), the latter via quadrature plus Euler-Maclaurin
    endpoint corrections when f is too small for outright truncation.
    """
    if f == 0.0:
        return 0.0
    s = 1.0 + params.rho
    j = np.arange(1, _TAIL_CUTOFF + 1, dtype=np.float64)
    head = -np.expm1(-f * j) * params.c_k * j ** (-s)
    deficit = float(np.sum(head))
    tail_k = params.k_tail(_TAIL_CUTOFF)
    if f * _TAIL_CUTOFF >= 40.0:
        # exp(-f j) tail below 4e-18 of tail_k: outright truncation.
        return deficit + tail_k
    a = float(_TAIL_CUTOFF + 1)
    integral, _ = integrate.quad(
        lambda x: np.exp(-f * x) * x ** (-s), a, np.inf, epsabs=0.0, epsrel=1e-13, limit=200
    )
    g_a = np.exp(-f * a) * a ** (-s)
    gp_a = -g_a * (f + s / a)
    exp_tail = params.c_k * (integral + 0.5 * g_a - gp_a / 12.0)
    return deficit + tail_k - exp_tail


def free_energy(params: KernelParams, residual_tol: float = 1e-12) -> FreeEnergyResult:
    """Tilt exponent F >= 0 with lam * sum_j exp(-F j) K(j) = 1.

    Unique root by monotonicity; bisection on [0, log lam + 1], where the
    upper end always overshoots since sum_j exp(-F j) K(j) <= exp(-F).
    For lam < 1 no tilt exists and F = 0 is returned with the defective flag.
    """
    if params.lam < 1.0:
        return FreeEnergyResult(0.0, True)
    if params.lam == 1.0:
        return FreeEnergyResult(0.0, False)
    target = 1.0 - 1.0 / params.lam  # root of deficit(F) = target

    def residual(f: float) -> float:
        return params.lam * (1.0 - _tilted_mass_deficit(params, f)) - 1.0

    lo, hi = 0.0, np.log(params.lam) + 1.0
    f = 0.5 * hi
    for _ in range(200):
        r = residual(f)
        if abs(r) <= residual_tol:
            break
        if r > 0.0:
            lo = f
        else:
            hi = f
        if hi - lo < 1e-16 * max(1.0, hi):
            break
        f = 0.5 * (lo + hi)
    assert abs(residual(f)) <= 1e-10, "free-energy residual out of tolerance"
    del target
    return FreeEnergyResult(f, False)


@dataclasses.dataclass(frozen=True)
class KernelTable:
    """Immutable per-(rho, lam, L_max) tables; safe for concurrent reads.

    Arrays are indexed by gap length / interval length directly:
    ``log_k[j]`` for j in [1, L_max] (index 0 is -inf padding),
    ``p_lam[n]`` for n in [0, L_max], ``log_z[m]`` for m in [0, L_max].
    ``r_lam`` is present only in the defective phase.
    """

    params: KernelParams
    L_max: int
    log_k: np.ndarray
    k: np.ndarray
    free_energy: float
    log_k_lam: np.ndarray
    k_lam: np.ndarray
    p_lam: np.ndarray
    r_lam: np.ndarray | None
    log_z: np.ndarray

    @property
    def rho(self) -> float:
        return self.params.rho

    @property
    def lam(self) -> float:
        return self.params.lam

    def z(self, m: int) -> float:
        return float(np.exp(self.log_z[m]))

    def log_creation_ratio(self, gap: int, left_part: int, right_part: int) -> float:
        """log [ K(gap) / (K(left_part) K(right_part)) ], gap = left + right."""
        lk = self.log_k
        return float(lk[gap] - lk[left_part] - lk[right_part])


def _log_partition_table(params: KernelParams, L_max: int) -> np.ndarray:
    """log Z_m for m in [0, L_max] by the first-gap recursion, log-sum-exp per row.

    Z_0 = 1 and Z_m = K(m) + sum_{x=1}^{m-1} lam K(x) Z_{m-x}: the first gap
    either spans the whole interval (terminal, no pinning weight) or ends at
    an interior particle carrying one factor of lam.
    """
    log_z = np.empty(L_max + 1)
    log_z[0] = 0.0
    log_lam = np.log(params.lam)
    log_k = np.concatenate(([-np.inf], np.asarray(params.log_k(np.arange(1, L_max + 1)))))
    for m in range(1, L_max + 1):
        terms = np.empty(m)
        terms[: m - 1] = log_lam + log_k[1:m] + log_z[m - 1 : 0 : -1]
        terms[m - 1] = log_k[m]
        peak = terms.max()
        log_z[m] = peak + np.log(np.sum(np.exp(terms - peak)))
    return log_z


def build_table(params: KernelParams, L_max: int) -> KernelTable:
    """Construct all tables up to L_max.  O(L_max^2); fine to L_max ~ 3e4."""
    if L_max < 1:
        raise DomainError("L_max must be >= 1")
    j = np.arange(1, L_max + 1, dtype=np.float64)
    log_k = np.concatenate(([-np.inf], np.asarray(params.log_k(j))))
    k = np.exp(log_k, where=log_k > -np.inf, out=np.zeros(L_max + 1))

    f = free_energy(params).value
    log_k_lam = np.concatenate(
        ([-np.inf], np.log(params.lam) - f * j + log_k[1:])
    )
    k_lam = np.exp(log_k_lam, where=log_k_lam > -np.inf, out=np.zeros(L_max + 1))

    p_lam = np.empty(L_max + 1)
    p_lam[0] = 1.0
    for n in range(1, L_max + 1):
        p_lam[n] = float(np.dot(k_lam[1 : n + 1], p_lam[n - 1 :: -1]))

    r_lam = (1.0 - params.lam) * np.cumsum(p_lam) if params.defective else None

    log_z = _log_partition_table(params, L_max)

    return KernelTable(
        params=params,
        L_max=L_max,
        log_k=log_k,
        k=k,
        free_energy=f,
        log_k_lam=log_k_lam,
        k_lam=k_lam,
        p_lam=p_lam,
        r_lam=r_lam,
        log_z=log_z,
    )


def tilted_gap_law(table: KernelTable, j: int) -> float:
    """K_lam(j): tilted-normalized for lam >= 1, defective lam*K(j) for lam < 1."""
    if j < 1:
        raise DomainError(f"gap length must be >= 1, got {j}")
    if j > table.L_max:
        raise TableExtensionRequired(f"j={j} beyond table L_max={table.L_max}")
    return float(table.k_lam[j])


def log_tilted_gap_law(table: KernelTable, j: int) -> float:
    if j < 1:
        raise DomainError(f"gap length must be >= 1, got {j}")
    if j > table.L_max:
        raise TableExtensionRequired(f"j={j} beyond table L_max={table.L_max}")
    return float(table.log_k_lam[j])


def renewal_mass(table: KernelTable, n: int) -> float:
    """P_lam(n): probability the tilted renewal visits n.  P_lam(0) = 1."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if n > table.L_max:
        raise TableExtensionRequired(f"n={n} beyond table L_max={table.L_max}")
    return float(table.p_lam[n])


def survival(table: KernelTable, n: int) -> float:
    """R_lam(n): probability the defective renewal has no point beyond n.

    Last-renewal decomposition: the walk dies with probability (1 - lam) at
    each visited point, so R_lam(n) = (1-lam) sum_{x<=n} P_lam(x).
    """
    if table.r_lam is None:
        raise DomainError("survival is defined only in the defective phase (lam < 1)")
    if n < 0 or n > table.L_max:
        raise TableExtensionRequired(f"n={n} outside [0, L_max={table.L_max}]")
    return float(table.r_lam[n])


def log_partition(table: KernelTable, L: int) -> np.ndarray:
    """View of log Z_m for m in [0, L]."""
    if L < 1:
        raise DomainError(f"L must be >= 1, got {L}")
    if L > table.L_max:
        raise TableExtensionRequired(f"L={L} beyond table L_max={table.L_max}")
    return table.log_z[: L + 1]


def tilted_mass_total(table: KernelTable) -> tuple[float, float]:
    """(sum_{j<=L_max} K_lam(j), upper bound on the mass beyond L_max).

    For lam >= 1 the two should bracket 1; for lam < 1 they bracket lam.
    """
    head = float(np.sum(table.k_lam[1:]))
    f = table.free_energy
    if f > 0.0:
        # geometric-decay bound: K_lam(j) <= lam K(L_max) e^{-f j} for j > L_max
        tail = (
            table.lam
            * table.k[table.L_max]
            * np.exp(-f * (table.L_max + 1))
            / -np.expm1(-f)
        )
    else:
        tail = table.lam * table.params.k_tail(table.L_max)
    return head, float(tail)


# --- binary cache -----------------------------------------------------------


def _cache_key(rho: float, lam: float, L_max: int) -> str:
    raw = f"{TABLE_FORMAT_VERSION}|{rho!r}|{lam!r}|{L_max}"
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def cache_path(cache_dir: str, rho: float, lam: float, L_max: int) -> str:
    return os.path.join(cache_dir, f"kernel_{_cache_key(rho, lam, L_max)}.npz")


def save_table(table: KernelTable, cache_dir: str) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    path = cache_path(cache_dir, table.rho, table.lam, table.L_max)
    payload = dict(
        version=np.int64(TABLE_FORMAT_VERSION),
        rho=table.rho,
        lam=table.lam,
        L_max=np.int64(table.L_max),
        log_k=table.log_k,
        free_energy=table.free_energy,
        log_k_lam=table.log_k_lam,
        p_lam=table.p_lam,
        log_z=table.log_z,
    )
    if table.r_lam is not None:
        payload["r_lam"] = table.r_lam
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)
    return path


def load_table(path: str) -> KernelTable:
    with np.load(path) as data:
        if int(data["version"]) != TABLE_FORMAT_VERSION:
            raise ValueError(f"cache format version mismatch in {path}")
        params = KernelParams(rho=float(data["rho"]), lam=float(data["lam"]))
        log_k = data["log_k"]
        log_k_lam = data["log_k_lam"]
        return KernelTable(
            params=params,
            L_max=int(data["L_max"]),
            log_k=log_k,
            k=np.exp(log_k, where=log_k > -np.inf, out=np.zeros_like(log_k)),
            free_energy=float(data["free_energy"]),
            log_k_lam=log_k_lam,
            k_lam=np.exp(
                log_k_lam, where=log_k_lam > -np.inf, out=np.zeros_like(log_k_lam)
            ),
            p_lam=data["p_lam"],
            r_lam=data["r_lam"] if "r_lam" in data else None,
            log_z=data["log_z"],
        )


def load_or_build(
    rho: float, lam: float, L_max: int, cache_dir: str | None = None
) -> KernelTable:
    """Fetch a table from the binary cache or build and store it.

    Cache directory: explicit argument, else $PINFRAG_CACHE, else no caching.
    """
    if cache_dir is None:
        cache_dir = os.environ.get(CACHE_ENV_VAR)
    if cache_dir:
        path = cache_path(cache_dir, rho, lam, L_max)
        if os.path.exists(path):
            return load_table(path)
    table = build_table(KernelParams(rho=rho, lam=lam), L_max)
    if cache_dir:
        save_table(table, cache_dir)
    return table
