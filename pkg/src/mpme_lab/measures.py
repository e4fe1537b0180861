"""Equilibrium product measures: partition function, density map, sampling.

The single-site marginal at fugacity psi puts mass psi^k / (Z(psi) g(k)!)
on occupancy k. Z is evaluated by adaptive series truncation in log space;
the density map R(psi) = psi Z'(psi)/Z(psi) is inverted numerically to get
the fugacity Phi(rho) at a prescribed density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, TorusGeometry
from .rates import GFunction

HARD_TERM_CAP = 100_000
PSI_MARGIN = 1e-6  # evaluation ceiling psi* (1 - margin) for finite psi*


class SeriesError(RuntimeError):
    """Partition-function series did not converge within the term cap."""


class EquilibriumFamily:
    """The one-parameter family of product measures attached to a g function."""

    def __init__(self, gf: GFunction, eps_Z: float = 1e-14, K_Z: int = HARD_TERM_CAP):
        self.gf = gf
        self.psi_star = gf.psi_star
        self.eps_Z = float(eps_Z)
        self.K_Z = min(int(K_Z), HARD_TERM_CAP)
        self._lgf = gf.extended_log_factorials(min(self.K_Z, _table_limit(gf)))
        self._logk = np.concatenate([[-np.inf], np.log(np.arange(1, self._lgf.size))])

    @property
    def psi_eval_max(self) -> float:
        if math.isinf(self.psi_star):
            return math.inf
        return self.psi_star * (1.0 - PSI_MARGIN)

    def label(self) -> str:
        return self.gf.label()

    # -- series ------------------------------------------------------------

    def _series(self, psi: float, moments: int = 0):
        """log of sum_k k^i psi^k/g(k)! for i = 0..moments, adaptively truncated.

        The truncation point grows (in doubling chunks) until the last three
        terms each contribute less than eps_Z relative to every running sum.
        """
        if psi < 0:
            raise ValueError("fugacity must be non-negative")
        if psi > self.psi_eval_max:
            raise ValueError(
                f"fugacity {psi} outside the evaluable range [0, {self.psi_eval_max}]"
            )
        if psi == 0.0:
            return [0.0] + [-math.inf] * moments
        logpsi = math.log(psi)
        kcap = self._lgf.size - 1
        log_eps = math.log(self.eps_Z)
        hi = min(64, kcap)
        while True:
            ks = np.arange(hi + 1, dtype=np.float64)
            logterm = ks * logpsi - self._lgf[: hi + 1]
            sums = []
            converged = True
            for i in range(moments + 1):
                t = logterm if i == 0 else logterm + i * self._logk[: hi + 1]
                s = float(np.logaddexp.reduce(t))
                sums.append(s)
                if np.any(t[-3:] >= log_eps + s):
                    converged = False
            if converged:
                return sums
            if hi == kcap:
                raise SeriesError(
                    f"series at psi={psi} not converged within {kcap} terms"
                )
            hi = min(2 * hi, kcap)

    def log_partition_Z(self, psi: float) -> float:
        return float(self._series(psi)[0])

    def partition_Z(self, psi: float) -> float:
        return math.exp(self.log_partition_Z(psi))

    def density_R(self, psi: float) -> float:
        """Mean occupancy under the fugacity-psi marginal: psi Z'(psi)/Z(psi)."""
        s = self._series(psi, moments=1)
        return math.exp(s[1] - s[0])

    def _R_and_slope(self, psi: float) -> tuple[float, float]:
        """R(psi) and dR/dpsi = Var(eta)/psi, from the first two moments."""
        s = self._series(psi, moments=2)
        r = math.exp(s[1] - s[0])
        second = math.exp(s[2] - s[0])
        return r, (second - r * r) / psi

    # -- density -> fugacity -------------------------------------------------

    def phi(self, rho: float, tol_scale: float = 1e-10) -> float:
        """The fugacity psi with R(psi) = rho (bisection plus Newton polish)."""
        if rho < 0:
            raise ValueError("density must be non-negative")
        if rho == 0.0:
            return 0.0
        lo, hi = 0.0, self._bracket(rho)
        psi = 0.5 * (lo + hi)
        tol = tol_scale * (1.0 + rho)
        for _ in range(200):
            r, slope = self._R_and_slope(psi)
            if abs(r - rho) <= tol:
                return psi
            if r < rho:
                lo = psi
            else:
                hi = psi
            step = psi + (rho - r) / slope if slope > 0 else math.nan
            psi = step if lo < step < hi else 0.5 * (lo + hi)
        raise SeriesError(f"phi({rho}) did not reach tolerance {tol}")

    def _bracket(self, rho: float) -> float:
        if math.isinf(self.psi_star):
            hi = 1.0
            for _ in range(200):
                if self.density_R(hi) >= rho:
                    return hi
                hi *= 2.0
            raise SeriesError(f"could not bracket density {rho}")
        hi = 0.5 * self.psi_star
        while True:
            try:
                if self.density_R(hi) >= rho:
                    return hi
            except SeriesError:
                raise SeriesError(
                    f"density {rho} beyond the evaluable range of {self.label()}"
                ) from None
            if hi >= self.psi_eval_max:
                raise ValueError(
                    f"density {rho} beyond the evaluable range of {self.label()}"
                )
            hi = min(0.5 * (hi + self.psi_star), self.psi_eval_max)

    def phi_grid(self, rho: np.ndarray, tol_scale: float = 1e-10) -> np.ndarray:
        """phi evaluated on an array of densities (vectorized convenience)."""
        rho = np.asarray(rho, dtype=np.float64)
        out = np.empty(rho.shape)
        flat, oflat = rho.ravel(), out.ravel()
        cache: dict[float, float] = {}
        for i, r in enumerate(flat):
            key = float(r)
            if key not in cache:
                cache[key] = self.phi(key, tol_scale)
            oflat[i] = cache[key]
        return out

    def diffusion_D(self, rho: float, m: int) -> float:
        """Diffusion coefficient m Phi(rho)^(m-1) Phi'(rho) of the limit PDE."""
        if rho <= 0:
            raise ValueError("diffusion coefficient is evaluated at rho > 0")
        h = 1e-6 * (1.0 + rho)
        h = min(h, 0.5 * rho)
        dphi = (self.phi(rho + h) - self.phi(rho - h)) / (2.0 * h)
        return m * self.phi(rho) ** (m - 1) * dphi

    # -- sampling ------------------------------------------------------------

    def marginal_pmf(self, psi: float, mass_tol: float = 1e-12) -> np.ndarray:
        """Occupancy pmf truncated once the missing tail mass is below mass_tol."""
        if psi == 0.0:
            return np.array([1.0])
        logZ = self.log_partition_Z(psi)
        logpsi = math.log(psi)
        ks = np.arange(self._lgf.size)
        logp = ks * logpsi - self._lgf - logZ
        p = np.exp(logp)
        csum = np.cumsum(p)
        idx = np.searchsorted(csum, 1.0 - mass_tol)
        if idx >= p.size:
            raise SeriesError(f"marginal at psi={psi} needs more than {p.size} terms")
        return p[: idx + 1]

    def sample_marginal(self, psi: float, rng: np.random.Generator, size=None):
        """Exact inverse-CDF draw(s) from the single-site marginal."""
        cdf = np.cumsum(self.marginal_pmf(psi))
        u = rng.random(size)
        k = np.searchsorted(cdf, u, side="right")
        return np.minimum(k, len(cdf) - 1)

    def mean_g(self, psi: float) -> float:
        """E[g(eta)] under the fugacity-psi marginal (equals psi identically)."""
        pmf = self.marginal_pmf(psi, mass_tol=1e-14)
        g = self.gf.extended_values(pmf.size - 1)
        return float(np.dot(pmf, g))

    def exponential_moment(self, psi: float, theta: float) -> float:
        """E[exp(theta eta)] by truncated series; raises SeriesError if divergent."""
        if psi == 0.0:
            return 1.0
        if psi > self.psi_eval_max:
            raise ValueError("fugacity outside the evaluable range")
        logZ = self.log_partition_Z(psi)
        logpsi = math.log(psi)
        total = -logZ
        small_streak = 0
        for k in range(1, self._lgf.size):
            t = theta * k + k * logpsi - self._lgf[k] - logZ
            total = np.logaddexp(total, t)
            small_streak = small_streak + 1 if t < math.log(1e-10) + total else 0
            if small_streak >= 3:
                return math.exp(total)
        raise SeriesError(f"exponential moment diverges at theta={theta}")

    def find_exponential_moment_theta(self, psi: float, theta0: float = 1.0) -> float:
        """A theta > 0 with finite E[exp(theta eta)], found by halving."""
        theta = theta0
        for _ in range(60):
            try:
                self.exponential_moment(psi, theta)
                return theta
            except SeriesError:
                theta *= 0.5
        raise SeriesError(f"no positive exponential moment found at psi={psi}")


def _table_limit(gf: GFunction) -> int:
    return gf.K_max if gf.kind == "tabulated" else HARD_TERM_CAP


# -- density profiles ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityProfile:
    """Initial macroscopic density rho_0 on the unit torus, bounded in [delta0, delta1]."""

    kind: str
    params: tuple = ()
    table: np.ndarray | None = None
    d: int = 1

    @classmethod
    def constant(cls, c: float) -> "DensityProfile":
        if c <= 0:
            raise ValueError("constant profile must be positive")
        return cls("constant", (float(c),))

    @classmethod
    def cosine(cls, a0: float, a1: float, wavevector=1) -> "DensityProfile":
        """rho(u) = a0 + a1 cos(2 pi k . u)."""
        k = tuple(int(v) for v in np.atleast_1d(wavevector))
        prof = cls("cosine", (float(a0), float(a1)) + k, d=len(k))
        if prof.delta0 <= 0:
            raise ValueError("cosine profile must stay strictly positive")
        return prof

    @classmethod
    def tabulated(cls, table: np.ndarray, d: int = 1) -> "DensityProfile":
        """Values on a uniform grid of [0,1)^d (row-major for d=2), linear interpolation."""
        table = np.asarray(table, dtype=np.float64)
        if d == 1:
            if table.ndim != 1:
                raise ValueError("1-d profile table must be a vector")
        else:
            side = round(table.size ** (1.0 / d))
            if side**d != table.size:
                raise ValueError("grid table size must be a perfect d-th power")
            table = table.reshape((side,) * d)
        if np.min(table) <= 0:
            raise ValueError("profile table must be strictly positive")
        return cls("tabulated", (), table, d=d)

    @classmethod
    def from_file(cls, path, d: int = 1) -> "DensityProfile":
        """Parse `u rho` (d=1) or `u1 u2 rho` (d=2, row-major) columns."""
        data = np.loadtxt(path, ndmin=2)
        if data.shape[1] != d + 1:
            raise ValueError(f"profile file must have {d + 1} columns for d={d}")
        values = data[:, -1]
        n = values.size
        side = round(n ** (1.0 / d))
        if side**d != n:
            raise ValueError("profile file must cover a full uniform grid")
        # verify the coordinates match the implied row-major uniform grid
        expected = np.stack(
            [g.ravel() for g in np.meshgrid(*([np.arange(side) / side] * d), indexing="ij")],
            axis=1,
        )
        if not np.allclose(data[:, :d], expected, atol=1e-9):
            raise ValueError("profile file coordinates must form the uniform grid i/M")
        return cls.tabulated(values, d=d)

    @property
    def delta0(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "cosine":
            return self.params[0] - abs(self.params[1])
        return float(np.min(self.table))

    @property
    def delta1(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "cosine":
            return self.params[0] + abs(self.params[1])
        return float(np.max(self.table))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Evaluate at points u of shape (..., d) (or scalar/1-d array when d=1)."""
        u = np.asarray(u, dtype=np.float64)
        if self.d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
            u = u[..., np.newaxis]
        if u.shape[-1] != self.d:
            raise ValueError(f"points must have {self.d} coordinates")
        u = np.mod(u, 1.0)
        if self.kind == "constant":
            return np.full(u.shape[:-1], self.params[0])
        if self.kind == "cosine":
            a0, a1, *k = self.params
            phase = 2.0 * math.pi * np.tensordot(u, np.array(k, dtype=float), axes=([-1], [0]))
            return a0 + a1 * np.cos(phase)
        return self._interp(u)

    def _interp(self, u: np.ndarray) -> np.ndarray:
        side = self.table.shape[0]
        scaled = u * side
        base = np.floor(scaled).astype(int)
        frac = scaled - base
        out = np.zeros(u.shape[:-1])
        # multilinear interpolation with periodic wrap
        for corner in range(2**self.d):
            weight = np.ones(u.shape[:-1])
            idx = []
            for axis in range(self.d):
                bit = (corner >> axis) & 1
                idx.append((base[..., axis] + bit) % side)
                weight = weight * (frac[..., axis] if bit else 1.0 - frac[..., axis])
            out += weight * self.table[tuple(idx)]
        return out

    def at_sites(self, geometry: TorusGeometry) -> np.ndarray:
        """rho_0(x/N) for every lattice site, in site order."""
        if self.d not in (1, geometry.d):
            raise ValueError(f"profile dimension {self.d} does not match lattice d={geometry.d}")
        coords = np.stack(
            [g.ravel() for g in np.indices(geometry.shape)], axis=1
        ).astype(np.float64)
        pts = coords / geometry.N
        if self.d == 1 and geometry.d > 1:
            pts = pts[:, :1]  # profiles varying along the first axis only
        return self(pts)

    def on_grid(self, M: int, d: int | None = None) -> np.ndarray:
        """Profile sampled at grid points i/M, shape (M,)*d."""
        d = self.d if d is None else d
        coords = np.stack([g.ravel() for g in np.indices((M,) * d)], axis=1) / M
        if self.d == 1 and d > 1:
            coords = coords[:, :1]
        return self(coords).reshape((M,) * d)


# -- product measures ----------------------------------------------------------


class ProductMeasureSampler:
    """Site-wise inverse-CDF sampler for the product measure nu^N_{rho_0(.)}.

    Per-site CDF tables are built once; sampling consumes one uniform per
    site from the caller's generator.
    """

    def __init__(self, fam: EquilibriumFamily, profile: DensityProfile, geometry: TorusGeometry):
        self.fam = fam
        self.profile = profile
        self.geometry = geometry
        rho = profile.at_sites(geometry)
        self.site_psi = fam.phi_grid(rho)
        pmfs = {psi: fam.marginal_pmf(psi) for psi in np.unique(self.site_psi)}
        width = max(p.size for p in pmfs.values())
        self._cdf = np.ones((geometry.site_count, width))
        for x, psi in enumerate(self.site_psi):
            c = np.cumsum(pmfs[float(psi)])
            self._cdf[x, : c.size] = c
            self._cdf[x, c.size :] = c[-1]

    def sample(self, rng: np.random.Generator) -> Configuration:
        u = rng.random(self.geometry.site_count)
        k = (self._cdf < u[:, None]).sum(axis=1)
        return Configuration(self.geometry, k)


def sample_product(
    fam: EquilibriumFamily,
    profile: DensityProfile,
    geometry: TorusGeometry,
    rng: np.random.Generator,
) -> Configuration:
    """One configuration drawn from the product measure with marginal nu_{rho0(x/N)}."""
    return ProductMeasureSampler(fam, profile, geometry).sample(rng)


def product_relative_entropy(
    fam: EquilibriumFamily,
    profile_mu: DensityProfile,
    profile_nu: DensityProfile,
    geometry: TorusGeometry,
) -> float:
    """Exact relative entropy H(nu^N_mu | nu^N_nu) of the two product measures.

    Site-wise KL for exponential-family marginals:
    sum_x [ R(psi_mu) log(psi_mu/psi_nu) - log(Z(psi_mu)/Z(psi_nu)) ].
    """
    psim = fam.phi_grid(profile_mu.at_sites(geometry))
    psin = fam.phi_grid(profile_nu.at_sites(geometry))
    total = 0.0
    cache: dict[tuple[float, float], float] = {}
    for pm, pn in zip(psim, psin):
        key = (float(pm), float(pn))
        if key not in cache:
            if pm == 0.0:
                cache[key] = -math.log(1.0) + fam.log_partition_Z(pn)
            elif pn == 0.0:
                raise ValueError("relative entropy infinite: reference profile hits density 0")
            else:
                cache[key] = fam.density_R(pm) * (math.log(pm) - math.log(pn)) - (
                    fam.log_partition_Z(pm) - fam.log_partition_Z(pn)
                )
        total += cache[key]
    return total


def mobile_cluster_probability_bound(fam: EquilibriumFamily, delta0: float, d: int, l: int) -> float:
    """Lower bound 1 - (1 - P^(2^d))^(l^d) for finding an occupied 2-hypercube
    in the radius-l box under i.i.d. nu_{delta0}, with P the probability of a
    nonempty site."""
    if delta0 <= 0:
        raise ValueError("bound requires a density bounded away from zero")
    if l < 1:
        raise ValueError("box radius must be >= 1")
    psi = fam.phi(delta0)
    p_nonempty = 1.0 - math.exp(-fam.log_partition_Z(psi))
    return 1.0 - (1.0 - p_nonempty ** (2**d)) ** (l**d)
