"""Bird's-eye-view coordinate conventions and uniform value binning.

The BEV frame is x-right / y-forward, in meters. Spatial coordinates and
the kinematic scalars (velocity, acceleration) share the same discretization
scheme: a fixed range split into uniform bins, encoded as integer indices
and decoded back to bin centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class BevPoint(NamedTuple):
    """A point in the BEV plane: x positive to the right, y positive forward."""

    x: float
    y: float


@dataclass(frozen=True)
class BinSpec:
    """Uniform discretization of [lo, hi) into n bins.

    Bins are half-open [lo + k*w, lo + (k+1)*w) with the top bin closed, so
    every real value (after clamping) maps to exactly one index. Indices
    decode to bin centers, which keeps the worst-case quantization error at
    w/2 and makes encode(decode(b)) == b exact.
    """

    lo: float = -50.0
    hi: float = 50.0
    n: int = 1000
    unit: str = "meters"

    def __post_init__(self) -> None:
        if not (self.lo < self.hi):
            raise ValueError(f"BinSpec requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.n < 1:
            raise ValueError(f"BinSpec requires n >= 1, got {self.n}")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n


# The two specs used throughout: positions in meters, velocity/acceleration
# scalars on the same +-50 range with kinematic units.
SPATIAL_BINS = BinSpec(unit="meters")
KINEMATIC_BINS = BinSpec(unit="m_per_s")


def encode_bin(v: float, spec: BinSpec = SPATIAL_BINS) -> int:
    """Map a real value to its bin index, clamping out-of-range values.

    Values below lo land in bin 0, values at or above hi in bin n-1. A
    serving path must stay total over degenerate inputs, so out-of-range
    values clamp instead of raising; only non-finite input is an error.
    """
    if not math.isfinite(v):
        raise ValueError(f"cannot encode non-finite value {v!r}")
    if v <= spec.lo:
        return 0
    if v >= spec.hi:
        return spec.n - 1
    # The 1e-9 nudge snaps fractions sitting a hair below a bin boundary up
    # to it, so decimal inputs like -7.6 land in the bin exact decimal
    # arithmetic would give. Costs at most ~1e-10 extra quantization error.
    idx = int(math.floor((v - spec.lo) / spec.width + 1e-9))
    return min(max(idx, 0), spec.n - 1)


def decode_bin(b: int, spec: BinSpec = SPATIAL_BINS) -> float:
    """Return the center of bin b."""
    if not (0 <= b < spec.n):
        raise ValueError(f"bin index {b} outside [0, {spec.n - 1}]")
    return spec.lo + (b + 0.5) * spec.width


def encode_point(p: BevPoint, spec: BinSpec = SPATIAL_BINS) -> tuple[int, int]:
    """Encode a BEV point componentwise."""
    return encode_bin(p[0], spec), encode_bin(p[1], spec)


def decode_point(b: tuple[int, int], spec: BinSpec = SPATIAL_BINS) -> BevPoint:
    """Decode a pair of bin indices to the componentwise bin centers."""
    return BevPoint(decode_bin(b[0], spec), decode_bin(b[1], spec))
