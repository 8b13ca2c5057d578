"""Deterministic feature extraction for detection pairs and tracklet pairs.

Step 1 scores a detection against a candidate in the next frame with three
features; step 2 scores a tracklet against a later candidate tracklet with
six. Feature order is fixed here and baked into trained models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Detection, Tracklet, angular_difference, bitwise_median, manhattan_bits
from .errors import InvalidInputError

STEP1_FEATURE_NAMES = ("euclidean_px", "angle_diff_rad", "id_manhattan")
STEP2_FEATURE_NAMES = (
    "id_manhattan_avg",
    "euclidean_px",
    "forward_error_px",
    "backward_error_px",
    "angle_diff_rad",
    "confidence_diff",
)

DEFAULT_GATE_RADIUS_PX = 200.0
DEFAULT_MAX_GAP_FRAMES = 14


@dataclass(frozen=True, slots=True)
class Step1Features:
    euclidean_px: float
    angle_diff_rad: float
    id_manhattan: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.euclidean_px, self.angle_diff_rad, self.id_manhattan)


@dataclass(frozen=True, slots=True)
class Step2Features:
    id_manhattan_avg: float
    euclidean_px: float
    forward_error_px: float
    backward_error_px: float
    angle_diff_rad: float
    confidence_diff: float

    def as_tuple(self):
        return (
            self.id_manhattan_avg,
            self.euclidean_px,
            self.forward_error_px,
            self.backward_error_px,
            self.angle_diff_rad,
            self.confidence_diff,
        )


def euclidean_px(a: Detection, b: Detection) -> float:
    return math.hypot(b.x_px - a.x_px, b.y_px - a.y_px)


def step1_features(a: Detection, b: Detection) -> Step1Features:
    """Features of a consecutive-frame detection pair (b one frame after a)."""
    if b.frame_index != a.frame_index + 1:
        raise InvalidInputError(
            f"step-1 pairs must be one frame apart, got frames "
            f"{a.frame_index} and {b.frame_index}"
        )
    return Step1Features(
        euclidean_px=euclidean_px(a, b),
        angle_diff_rad=angular_difference(a.orientation_rad, b.orientation_rad),
        id_manhattan=manhattan_bits(a.bits, b.bits),
    )


def gate_candidates(a: Detection, frame: Sequence[Detection], radius_px: float = DEFAULT_GATE_RADIUS_PX):
    """Detections of ``frame`` within ``radius_px`` of ``a`` (inclusive)."""
    if radius_px <= 0:
        raise InvalidInputError(f"gate radius must be positive, got {radius_px}")
    return [d for d in frame if euclidean_px(a, d) <= radius_px]


def _dets(t) -> tuple[Detection, ...]:
    if isinstance(t, Tracklet):
        return t.detections
    dets = tuple(t)
    if not dets:
        raise InvalidInputError("tracklet part must contain at least one detection")
    return dets


def motion_step(detections: Sequence[Detection]) -> tuple[float, float]:
    """Per-frame velocity from the last two detections; zero for singletons.

    The two reference detections need not be in adjacent frames (training
    splits of gappy ground-truth tracks), so the displacement is divided by
    the frame distance actually spanned.
    """
    if len(detections) < 2:
        return (0.0, 0.0)
    prev, last = detections[-2], detections[-1]
    df = last.frame_index - prev.frame_index
    return ((last.x_px - prev.x_px) / df, (last.y_px - prev.y_px) / df)


def bit_confidence(median_bits: np.ndarray) -> float:
    """Distance from 0.5 of the least certain bit of a median bit vector."""
    return float(np.abs(np.asarray(median_bits) - 0.5).min())


def extrapolation_error(
    origin_xy: tuple[float, float],
    velocity: tuple[float, float],
    steps: int,
    target_xy: tuple[float, float],
) -> float:
    """Distance between a constant-velocity extrapolation and a target point."""
    px = origin_xy[0] + velocity[0] * steps
    py = origin_xy[1] + velocity[1] * steps
    return math.hypot(target_xy[0] - px, target_xy[1] - py)


def step2_features(t1, t2, max_gap_frames: int = DEFAULT_MAX_GAP_FRAMES) -> Step2Features:
    """Features of an ordered tracklet pair (t2 strictly after t1).

    Accepts Tracklets or plain detection sequences; the latter occur when
    ground-truth tracks are split into training parts and may contain
    internal gaps.
    """
    d1 = _dets(t1)
    d2 = _dets(t2)
    last1 = d1[-1]
    first2 = d2[0]
    gap = first2.frame_index - last1.frame_index - 1
    if gap < 0:
        raise InvalidInputError(
            f"tracklets overlap or are out of order: frames "
            f"{last1.frame_index} -> {first2.frame_index}"
        )
    if gap > max_gap_frames:
        raise InvalidInputError(f"gap {gap} exceeds maximum of {max_gap_frames} frames")

    med1 = bitwise_median(d1)
    med2 = bitwise_median(d2)
    steps = gap + 1

    forward_vel = motion_step(d1)
    if len(d2) >= 2:
        nxt = d2[1]
        df = nxt.frame_index - first2.frame_index
        backward_vel = ((nxt.x_px - first2.x_px) / df, (nxt.y_px - first2.y_px) / df)
    else:
        backward_vel = (0.0, 0.0)

    return Step2Features(
        id_manhattan_avg=manhattan_bits(med1, med2),
        euclidean_px=euclidean_px(last1, first2),
        forward_error_px=extrapolation_error(last1.xy, forward_vel, steps, first2.xy),
        backward_error_px=extrapolation_error(
            first2.xy, (-backward_vel[0], -backward_vel[1]), steps, last1.xy
        ),
        angle_diff_rad=angular_difference(last1.orientation_rad, first2.orientation_rad),
        confidence_diff=abs(bit_confidence(med1) - bit_confidence(med2)),
    )
