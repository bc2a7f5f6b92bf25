"""Measurement geometry: triangular grids, link budget, train/test splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .rng import substream


@dataclass(frozen=True)
class Location:
    """A point of the campaign geometry, coordinates in meters."""

    id: int
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ConfigurationError(f"location {self.id}: non-finite coordinates")


@dataclass(frozen=True)
class LinkBudget:
    """Transmit SNR.  Either give gamma_tx directly (linear) or derive it
    from transmit power [dBm], bandwidth [Hz] and noise PSD [W/Hz]."""

    gamma_tx: float

    def __post_init__(self) -> None:
        if not (self.gamma_tx > 0 and math.isfinite(self.gamma_tx)):
            raise ConfigurationError(f"gamma_tx must be positive, got {self.gamma_tx}")

    @classmethod
    def from_power(cls, p_tx_dbm: float, bandwidth_hz: float, n0_w_per_hz: float) -> "LinkBudget":
        if bandwidth_hz <= 0 or n0_w_per_hz <= 0:
            raise ConfigurationError("bandwidth and noise PSD must be positive")
        p_tx_w = 10.0 ** ((p_tx_dbm - 30.0) / 10.0)
        return cls(gamma_tx=p_tx_w / (bandwidth_hz * n0_w_per_hz))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of equilateral triangles: rows x cols points, side in meters.
    Odd rows are shifted by side/2; row spacing is side*sqrt(3)/2."""

    origin: Location
    rows: int
    cols: int
    side: float

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError(f"rows and cols must be >= 1, got {self.rows}x{self.cols}")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise ConfigurationError(f"side must be positive, got {self.side}")


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split: D training locations, drawn with the given seed."""

    D: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.D < 1:
            raise ConfigurationError(f"D must be >= 1, got {self.D}")


def generate_triangular_grid(spec: GridSpec) -> list[Location]:
    """Generate rows*cols locations; ids are row-major starting at 0."""
    h = spec.side * math.sqrt(3.0) / 2.0
    out: list[Location] = []
    for i in range(spec.rows):
        x_off = spec.side / 2.0 if i % 2 == 1 else 0.0
        for j in range(spec.cols):
            out.append(
                Location(
                    id=i * spec.cols + j,
                    x=spec.origin.x + j * spec.side + x_off,
                    y=spec.origin.y + i * h,
                    z=spec.origin.z,
                )
            )
    return out


def split_train_test(
    locations: list[Location],
    split: SplitSpec,
    rng: np.random.Generator | None = None,
) -> tuple[list[Location], list[Location]]:
    """Draw split.D training locations uniformly without replacement.

    Test set is the complement; both keep the input ordering.  Deterministic:
    with rng=None the stream is derived from split.seed.
    """
    n = len(locations)
    if split.D >= n:
        raise ConfigurationError(f"D={split.D} must be < number of locations ({n})")
    if rng is None:
        rng = substream(split.seed, "split")
    chosen = rng.choice(n, size=split.D, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    train = [loc for loc, m in zip(locations, mask) if m]
    test = [loc for loc, m in zip(locations, mask) if not m]
    return train, test


def distance(a: Location, b: Location) -> float:
    """Euclidean distance in meters."""
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def distance_matrix(locations_a: list[Location], locations_b: list[Location]) -> np.ndarray:
    """Pairwise Euclidean distances, shape (len(a), len(b))."""
    pa = np.array([(l.x, l.y, l.z) for l in locations_a], dtype=float)
    pb = np.array([(l.x, l.y, l.z) for l in locations_b], dtype=float)
    diff = pa[:, None, :] - pb[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


@dataclass(frozen=True)
class Scenario:
    """A complete measurement scenario: geometry plus link budget.

    `count` optionally truncates the generated grid (row-major) so layouts
    whose point total is not a rows*cols product -- such as the 127-location
    reference campaign -- can be expressed.
    """

    grid: GridSpec
    bs: Location
    link_budget: LinkBudget
    seed: int = 0
    count: int | None = None

    def locations(self) -> list[Location]:
        locs = generate_triangular_grid(self.grid)
        if self.count is not None:
            if not (1 <= self.count <= len(locs)):
                raise ConfigurationError(
                    f"count={self.count} outside 1..{len(locs)} for {self.grid.rows}x{self.grid.cols} grid"
                )
            locs = locs[: self.count]
        return locs


def reference_scenario(seed: int = 0) -> Scenario:
    """The bundled 127-location layout: a 10x13 triangular grid (side 5 m)
    truncated to 127 points, base station placed outside the south-west corner.

    gamma_tx corresponds to 0 dBm transmit power over a 1 kHz measurement
    bandwidth at thermal noise density -174 dBm/Hz.
    """
    grid = GridSpec(origin=Location(id=-1, x=0.0, y=0.0, z=1.5), rows=10, cols=13, side=5.0)
    bs = Location(id=-2, x=-12.0, y=-9.0, z=1.5)
    budget = LinkBudget.from_power(p_tx_dbm=0.0, bandwidth_hz=1e3, n0_w_per_hz=10 ** (-20.4))
    return Scenario(grid=grid, bs=bs, link_budget=budget, seed=seed, count=127)
