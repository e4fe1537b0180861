"""Periodic lattice geometry, particle configurations, and elementary moves.

Sites of the d-dimensional torus of side N are addressed by a row-major
linear index; axis arguments are 1-based (axis j shifts the (j-1)-th
coordinate). Coordinate tuples are accepted wherever a site is expected
and the return type follows the input type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TorusGeometry:
    """Discrete d-dimensional torus of side N."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.N < 3:
            raise ValueError(f"side length must be >= 3, got {self.N}")

    @property
    def site_count(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def coords(self, x: int) -> tuple[int, ...]:
        """Coordinate tuple of the linear site index x (row-major)."""
        out = []
        for _ in range(self.d):
            out.append(x % self.N)
            x //= self.N
        return tuple(reversed(out))

    def index(self, coords) -> int:
        """Linear index of a coordinate tuple, reduced modulo N."""
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        x = 0
        for c in coords:
            x = x * self.N + (int(c) % self.N)
        return x

    def as_index(self, x) -> int:
        """Normalize a site given as linear index or coordinate tuple."""
        if isinstance(x, (tuple, list, np.ndarray)):
            return self.index(x)
        x = int(x)
        if not 0 <= x < self.site_count:
            raise ValueError(f"site index {x} outside [0, {self.site_count})")
        return x


def shift_site(geometry: TorusGeometry, x, j: int, steps: int):
    """Site at x + steps*e_j on the torus (axis j is 1-based)."""
    if not 1 <= j <= geometry.d:
        raise ValueError(f"axis {j} out of range 1..{geometry.d}")
    tuple_in = isinstance(x, (tuple, list))
    idx = geometry.as_index(x)
    shifted = shift_table(geometry, j, steps)[idx]
    return geometry.coords(shifted) if tuple_in else int(shifted)


@lru_cache(maxsize=None)
def shift_table(geometry: TorusGeometry, j: int, steps: int) -> np.ndarray:
    """Permutation array mapping each site to its shift by steps*e_j."""
    if not 1 <= j <= geometry.d:
        raise ValueError(f"axis {j} out of range 1..{geometry.d}")
    grid = np.arange(geometry.site_count).reshape(geometry.shape)
    # roll(A, -s, axis)[c] == A[c + s e_j]
    return np.roll(grid, -steps, axis=j - 1).ravel()


@lru_cache(maxsize=None)
def shift_tables(geometry: TorusGeometry, max_offset: int = 4) -> np.ndarray:
    """Stacked shift tables for all axes and offsets -max_offset..+max_offset.

    Shape (d, 2*max_offset+1, site_count); entry [j-1, off+max_offset, x]
    is the site x + off*e_j. This is the lookup structure the simulator's
    compiled kernels index into.
    """
    out = np.empty((geometry.d, 2 * max_offset + 1, geometry.site_count), dtype=np.int64)
    for j in range(1, geometry.d + 1):
        for off in range(-max_offset, max_offset + 1):
            out[j - 1, off + max_offset] = shift_table(geometry, j, off)
    return out


@dataclass
class Configuration:
    """Occupation numbers on a torus; total particle count is cached."""

    geometry: TorusGeometry
    occupancy: np.ndarray
    total: int = field(init=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.int64)
        if occ.shape == self.geometry.shape:
            occ = occ.ravel()
        if occ.shape != (self.geometry.site_count,):
            raise ValueError(
                f"occupancy has {occ.size} entries, geometry has {self.geometry.site_count} sites"
            )
        if np.any(occ < 0):
            raise ValueError("occupancies must be non-negative")
        self.occupancy = occ
        self.total = int(occ.sum())

    @classmethod
    def empty(cls, geometry: TorusGeometry) -> "Configuration":
        return cls(geometry, np.zeros(geometry.site_count, dtype=np.int64))

    def copy(self) -> "Configuration":
        return Configuration(self.geometry, self.occupancy.copy())

    def grid(self) -> np.ndarray:
        """Occupancy reshaped to the d-dimensional grid (a view)."""
        return self.occupancy.reshape(self.geometry.shape)

    def __getitem__(self, x) -> int:
        return int(self.occupancy[self.geometry.as_index(x)])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Configuration)
            and self.geometry == other.geometry
            and np.array_equal(self.occupancy, other.occupancy)
        )


def apply_jump(config: Configuration, x, y) -> Configuration:
    """Configuration after one particle jumps from x to a nearest neighbor y."""
    geo = config.geometry
    xi, yi = geo.as_index(x), geo.as_index(y)
    if config.occupancy[xi] < 1:
        raise ValueError(f"empty source: site {xi} has no particle to move")
    cx, cy = geo.coords(xi), geo.coords(yi)
    dist = sum(min((a - b) % geo.N, (b - a) % geo.N) for a, b in zip(cx, cy))
    if dist != 1:
        raise ValueError(f"sites {cx} and {cy} are not nearest neighbors")
    occ = config.occupancy.copy()
    occ[xi] -= 1
    occ[yi] += 1
    return Configuration(geo, occ)


def block_average(config: Configuration, x, l: int) -> float:
    """Mean occupancy over the cube of radius l (sup-norm) centered at x."""
    geo = config.geometry
    if l < 0:
        raise ValueError("block radius must be non-negative")
    if 2 * l + 1 > geo.N:
        raise ValueError(f"block of radius {l} does not fit in a torus of side {geo.N}")
    xi = geo.as_index(x)
    cx = geo.coords(xi)
    grid = config.grid()
    for axis, c in enumerate(cx):
        idx = (np.arange(c - l, c + l + 1)) % geo.N
        grid = np.take(grid, idx, axis=axis)
    return float(grid.sum()) / (2 * l + 1) ** geo.d


def translate(config: Configuration, z) -> Configuration:
    """Shifted configuration tau_z eta with (tau_z eta)(x) = eta(x - z)."""
    geo = config.geometry
    cz = geo.coords(geo.as_index(z))
    grid = config.grid()
    for axis, c in enumerate(cz):
        grid = np.roll(grid, c, axis=axis)
    return Configuration(geo, grid.ravel().copy())


def write_snapshot(path, config: Configuration, m: int, seed: int, t_macro: float) -> None:
    """Write a configuration snapshot: header `d N m seed t_macro`, then occupancies."""
    geo = config.geometry
    with open(path, "w") as fh:
        fh.write(f"{geo.d} {geo.N} {m} {seed} {t_macro!r}\n")
        fh.write(" ".join(str(int(v)) for v in config.occupancy))
        fh.write("\n")


def read_snapshot(path) -> tuple[Configuration, dict]:
    """Read a snapshot file; returns (configuration, header metadata)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"snapshot header must have 5 fields, got {len(header)}")
        d, N, m, seed = (int(v) for v in header[:4])
        t_macro = float(header[4])
        occ = np.array(fh.read().split(), dtype=np.int64)
    geo = TorusGeometry(d, N)
    return Configuration(geo, occ), {"d": d, "N": N, "m": m, "seed": seed, "t_macro": t_macro}
