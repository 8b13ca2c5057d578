"""Request/response models for the HTTP service.

Wire field names mirror the JSONL file formats, so a line of a detections
file is also a valid ``DetectionIO`` payload.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..core import Detection, GroundTruthTrack, Track
from ..errors import DataFormatError
from ..pipeline import detections_to_tracklets
from ..synthgen import MotionConfig, SynthConfig
from ..tracking import TrackerConfig


class DetectionIO(BaseModel):
    detection_id: int
    frame: int
    ts: float = 0.0
    cam: int = 0
    x: float
    y: float
    theta: float
    bits: list[float]

    def to_core(self) -> Detection:
        return Detection(
            detection_id=self.detection_id,
            frame_index=self.frame,
            timestamp=self.ts,
            cam_id=self.cam,
            x_px=self.x,
            y_px=self.y,
            orientation_rad=self.theta,
            bits=self.bits,
        )

    @classmethod
    def from_core(cls, d: Detection) -> "DetectionIO":
        return cls(
            detection_id=d.detection_id,
            frame=d.frame_index,
            ts=d.timestamp,
            cam=d.cam_id,
            x=d.x_px,
            y=d.y_px,
            theta=d.orientation_rad,
            bits=list(d.bits),
        )


class TruthTrackIO(BaseModel):
    true_id: int
    detection_ids: list[int]

    def to_core(self, lookup: dict[int, Detection]) -> GroundTruthTrack:
        try:
            dets = sorted((lookup[i] for i in self.detection_ids), key=lambda d: d.frame_index)
        except KeyError as exc:
            raise DataFormatError(f"ground truth references unknown detection {exc}") from exc
        return GroundTruthTrack(true_id=self.true_id, detections=tuple(dets))

    @classmethod
    def from_core(cls, t: GroundTruthTrack) -> "TruthTrackIO":
        return cls(true_id=t.true_id, detection_ids=[d.detection_id for d in t.detections])


class TrackIO(BaseModel):
    track_id: int
    assigned_id: int | None
    detection_ids: list[int]
    start_frame: int
    end_frame: int

    def to_core(self, lookup: dict[int, Detection]) -> Track:
        try:
            dets = sorted((lookup[i] for i in self.detection_ids), key=lambda d: d.frame_index)
        except KeyError as exc:
            raise DataFormatError(f"track references unknown detection {exc}") from exc
        if not dets:
            raise DataFormatError(f"track {self.track_id} has no detections")
        return Track(
            track_id=self.track_id,
            tracklets=tuple(detections_to_tracklets(dets)),
            assigned_id=self.assigned_id,
        )

    @classmethod
    def from_core(cls, t: Track) -> "TrackIO":
        return cls(
            track_id=t.track_id,
            assigned_id=t.assigned_id,
            detection_ids=[d.detection_id for d in t.detections],
            start_frame=t.start_frame,
            end_frame=t.end_frame,
        )


class MotionSettings(BaseModel):
    speed_mean_px: float = 20.0
    turn_sd_rad: float = 0.5


class SynthSettings(BaseModel):
    n_bees: int = 50
    width_px: float = 3000.0
    height_px: float = 3000.0
    fps: float = 3.0
    duration_s: float = 120.0
    detect_prob: float = 0.97
    long_gap_rate: float = 0.006
    absence_mean_frames: float = 90.0
    bit_flip_prob: float = 0.002
    bit_noise_sd: float = 0.215
    false_positive_rate: float = 0.005
    motion: MotionSettings = Field(default_factory=MotionSettings)
    seed: int = 0

    def to_core(self) -> SynthConfig:
        return SynthConfig(
            n_bees=self.n_bees,
            width_px=self.width_px,
            height_px=self.height_px,
            fps=self.fps,
            duration_s=self.duration_s,
            detect_prob=self.detect_prob,
            long_gap_rate=self.long_gap_rate,
            absence_mean_frames=self.absence_mean_frames,
            bit_flip_prob=self.bit_flip_prob,
            bit_noise_sd=self.bit_noise_sd,
            false_positive_rate=self.false_positive_rate,
            motion=MotionConfig(
                speed_mean_px=self.motion.speed_mean_px,
                turn_sd_rad=self.motion.turn_sd_rad,
            ),
            seed=self.seed,
        )


class TrackerSettings(BaseModel):
    gate_radius_px: float = 200.0
    accept_threshold: float = 0.5
    max_gap_frames: int = 14

    def to_core(self) -> TrackerConfig:
        return TrackerConfig(
            gate_radius_px=self.gate_radius_px,
            accept_threshold=self.accept_threshold,
            max_gap_frames=self.max_gap_frames,
        )


class SynthRequest(BaseModel):
    config: SynthSettings = Field(default_factory=SynthSettings)


class SynthResponse(BaseModel):
    detections: list[DetectionIO]
    truth: list[TruthTrackIO]


class TrainStep1Request(BaseModel):
    detections: list[DetectionIO]
    truth: list[TruthTrackIO]
    radius_px: float = 200.0
    l2: float = 1e-4
    epochs: int = 500
    lr: float = 0.5
    seed: int = 0
    class_weight: str | None = None


class TrainStep2Request(BaseModel):
    detections: list[DetectionIO]
    truth: list[TruthTrackIO]
    max_gap: int = 14
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0
    class_weight: str | None = None
    # optional stratified cap on the training set; the sample construction
    # itself is exhaustive
    max_samples: int | None = None
    sample_seed: int = 0


class ModelResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: dict
    n_samples: int
    positive_fraction: float


class TrackRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    detections: list[DetectionIO]
    model_step1: dict
    model_step2: dict
    settings: TrackerSettings = Field(default_factory=TrackerSettings)
    chunk_length_frames: int = 10800
    workers: int = 1
    merge_gap_frames: int | None = None
    stop_after_step1: bool = False


class BaselineRequest(BaseModel):
    detections: list[DetectionIO]
    max_gap_frames: int = 14


class TracksResponse(BaseModel):
    tracks: list[TrackIO]


class EvalRequest(BaseModel):
    tracks: list[TrackIO]
    truth: list[TruthTrackIO]
    detections: list[DetectionIO]


class EvalReportIO(BaseModel):
    pct_incorrect_detection_ids: float
    pct_incorrect_track_ids: float
    pct_complete_tracks: float
    pct_detections_deleted: float
    pct_tracks_with_deletion: float
    n_insertions: int
    n_mismatches: int
    track_length_histogram: dict[int, int]
    gap_histogram: dict[int, int]


class StatsRequest(BaseModel):
    tracks: list[TrackIO]
    detections: list[DetectionIO]


class StatsResponse(BaseModel):
    n_tracks: int
    track_length_histogram: dict[int, int]
    gap_histogram: dict[int, int]
    mean_track_length_frames: float
    detection_weighted_mean_track_length_frames: float


class HealthResponse(BaseModel):
    status: str
    version: str
