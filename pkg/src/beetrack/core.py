"""Domain types and ID/bit utilities shared by every other module.

A detection is one decoded marker observation: position and orientation on
the comb plane plus 12 bit probabilities encoding the marker ID (0..4095).
Tracklets are gap-free chains of detections, tracks are gap-tolerant chains
of tracklets. Bit index 0 is the most significant bit of the decoded ID;
this convention is fixed here and used consistently by the file formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

N_BITS = 12
MAX_ID = (1 << N_BITS) - 1

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    return (float(theta) + math.pi) % TWO_PI - math.pi


def _check_bits(bits: Sequence[float]) -> tuple[float, ...]:
    vals = tuple(float(b) for b in bits)
    if len(vals) != N_BITS:
        raise InvalidInputError(f"expected {N_BITS} bit probabilities, got {len(vals)}")
    for v in vals:
        if not (0.0 <= v <= 1.0):
            raise InvalidInputError(f"bit probability {v!r} outside [0, 1]")
    return vals


@dataclass(frozen=True, slots=True)
class Detection:
    """One decoded marker observation in one frame."""

    detection_id: int
    frame_index: int
    timestamp: float
    cam_id: int
    x_px: float
    y_px: float
    orientation_rad: float
    bits: tuple[float, ...]

    def __post_init__(self):
        if self.frame_index < 0:
            raise InvalidInputError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "bits", _check_bits(self.bits))
        object.__setattr__(self, "orientation_rad", wrap_angle(self.orientation_rad))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x_px, self.y_px)


@dataclass(frozen=True, slots=True)
class Tracklet:
    """Gap-free, time-ordered chain of detections produced by tracking step 1.

    A single detection is a valid tracklet; consecutive members must be
    exactly one frame apart.
    """

    tracklet_id: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        dets = tuple(self.detections)
        if not dets:
            raise InvalidInputError("tracklet must contain at least one detection")
        for a, b in zip(dets, dets[1:]):
            if b.frame_index != a.frame_index + 1:
                raise InvalidInputError(
                    f"tracklet frames must be consecutive, got {a.frame_index} -> {b.frame_index}"
                )
        object.__setattr__(self, "detections", dets)

    @property
    def start_frame(self) -> int:
        return self.detections[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.detections[-1].frame_index

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True, slots=True)
class Track:
    """Time-ordered, non-overlapping chain of tracklets with an optional decoded ID.

    Gaps between member tracklets are bounded by the tracker configuration
    that produced the track; hour-chunk merging may concatenate across larger
    gaps, so only ordering and non-overlap are structural invariants here.
    """

    track_id: int
    tracklets: tuple[Tracklet, ...]
    assigned_id: int | None = None

    def __post_init__(self):
        ts = tuple(self.tracklets)
        if not ts:
            raise InvalidInputError("track must contain at least one tracklet")
        for a, b in zip(ts, ts[1:]):
            if b.start_frame <= a.end_frame:
                raise InvalidInputError(
                    f"tracklets overlap or are out of order: "
                    f"end {a.end_frame} vs start {b.start_frame}"
                )
        object.__setattr__(self, "tracklets", ts)
        if self.assigned_id is not None and not (0 <= self.assigned_id <= MAX_ID):
            raise InvalidInputError(f"assigned_id {self.assigned_id} outside [0, {MAX_ID}]")

    @property
    def detections(self) -> tuple[Detection, ...]:
        return tuple(d for t in self.tracklets for d in t.detections)

    @property
    def start_frame(self) -> int:
        return self.tracklets[0].start_frame

    @property
    def end_frame(self) -> int:
        return self.tracklets[-1].end_frame

    def gaps(self) -> list[int]:
        """Frame gaps between consecutive member tracklets (0 = no gap)."""
        ts = self.tracklets
        return [b.start_frame - a.end_frame - 1 for a, b in zip(ts, ts[1:])]


@dataclass(frozen=True, slots=True)
class GroundTruthTrack:
    """Manually (or synthetically) labeled trajectory of one animal."""

    true_id: int
    detections: tuple[Detection, ...] = field(default=())

    def __post_init__(self):
        if not (0 <= self.true_id <= MAX_ID):
            raise InvalidInputError(f"true_id {self.true_id} outside [0, {MAX_ID}]")
        dets = tuple(self.detections)
        if not dets:
            raise InvalidInputError("ground-truth track must contain at least one detection")
        for a, b in zip(dets, dets[1:]):
            if b.frame_index <= a.frame_index:
                raise InvalidInputError("ground-truth frames must be strictly increasing")
        object.__setattr__(self, "detections", dets)

    @property
    def start_frame(self) -> int:
        return self.detections[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.detections[-1].frame_index

    def gaps(self) -> list[int]:
        ds = self.detections
        return [b.frame_index - a.frame_index - 1 for a, b in zip(ds, ds[1:])]


def binarize_bits(bits: Sequence[float]) -> int:
    """Decode 12 bit probabilities into an integer ID.

    A bit counts as set when its probability is >= 0.5; bits[0] is the most
    significant bit.
    """
    vals = _check_bits(bits)
    out = 0
    for v in vals:
        out = (out << 1) | (1 if v >= 0.5 else 0)
    return out


def bits_of_id(marker_id: int) -> tuple[float, ...]:
    """Exact bit vector (0.0/1.0 entries) of an integer ID, MSB first."""
    if not (0 <= marker_id <= MAX_ID):
        raise InvalidInputError(f"marker id {marker_id} outside [0, {MAX_ID}]")
    return tuple(float((marker_id >> (N_BITS - 1 - i)) & 1) for i in range(N_BITS))


def bitwise_median(detections: Sequence[Detection]) -> np.ndarray:
    """Per-bit median of the bit probabilities over a set of detections.

    Even counts use the mean of the two central values.
    """
    if len(detections) == 0:
        raise InvalidInputError("bitwise_median needs at least one detection")
    stack = np.array([d.bits for d in detections], dtype=np.float64)
    return np.median(stack, axis=0)


def median_bits_of(bit_rows: np.ndarray) -> np.ndarray:
    """bitwise_median on a raw (n, 12) float array."""
    if bit_rows.ndim != 2 or bit_rows.shape[0] == 0 or bit_rows.shape[1] != N_BITS:
        raise InvalidInputError(f"expected a non-empty (n, {N_BITS}) array")
    return np.median(bit_rows, axis=0)


def assign_track_id(track: Track) -> int:
    """Decoded ID of a track: binarized per-bit median over all its detections."""
    dets = track.detections
    if not dets:
        raise InvalidInputError("cannot assign an ID to an empty track")
    return binarize_bits(bitwise_median(dets))


def angular_difference(a: float, b: float) -> float:
    """Smallest absolute angle between two orientations, in [0, pi]."""
    d = abs(float(a) - float(b)) % TWO_PI
    return min(d, TWO_PI - d)


def manhattan_bits(a: Sequence[float], b: Sequence[float]) -> float:
    """Manhattan distance between two 12-entry bit-probability vectors."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != (N_BITS,) or bv.shape != (N_BITS,):
        raise InvalidInputError(
            f"manhattan_bits expects two vectors of length {N_BITS}, "
            f"got shapes {av.shape} and {bv.shape}"
        )
    return float(np.abs(av - bv).sum())
