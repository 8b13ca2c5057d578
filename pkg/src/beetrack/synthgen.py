"""Synthetic hive detection generator.

Produces ground-truth trajectories plus corrupted detections at desk scale,
so the tracking improvements are measurable without the real recordings.
Each bee walks a correlated random walk inside the comb rectangle; per frame
it is detected with a fixed probability unless it is away from the comb
(absence intervals model bees leaving the observation area, and close the
current ground-truth track). Observed bits are the true marker bits after
independent flips plus clipped Gaussian noise; false positives are uniform
random detections with uniform bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Detection, GroundTruthTrack, MAX_ID, N_BITS, bits_of_id, wrap_angle
from .errors import InvalidInputError
from .features import DEFAULT_MAX_GAP_FRAMES

ORIENTATION_NOISE_SD = 0.1


@dataclass(frozen=True, slots=True)
class MotionConfig:
    speed_mean_px: float = 20.0
    turn_sd_rad: float = 0.5


@dataclass(frozen=True, slots=True)
class SynthConfig:
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
    motion: MotionConfig = field(default_factory=MotionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise InvalidInputError("comb dimensions must be positive")
        for name in ("detect_prob", "long_gap_rate", "bit_flip_prob", "false_positive_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidInputError(f"{name} must be in [0, 1], got {v}")
        if self.false_positive_rate >= 1.0:
            raise InvalidInputError("false_positive_rate must be < 1")
        if self.bit_noise_sd < 0:
            raise InvalidInputError("bit_noise_sd must be >= 0")
        if self.absence_mean_frames < 1:
            raise InvalidInputError("absence_mean_frames must be >= 1")
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))


def corrupt_bits(bits, flip_prob: float, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    """Independent per-bit flips, then additive Gaussian noise, clipped to [0, 1]."""
    b = np.asarray(bits, dtype=np.float64)
    if b.shape != (N_BITS,):
        raise InvalidInputError(f"expected {N_BITS} bits, got shape {b.shape}")
    flips = rng.random(N_BITS) < flip_prob
    out = np.where(flips, 1.0 - b, b)
    out = out + rng.normal(0.0, noise_sd, N_BITS) if noise_sd > 0 else out
    return np.clip(out, 0.0, 1.0)


def expected_bit_error_rate(flip_prob: float, noise_sd: float) -> float:
    """Probability that one observed bit binarizes to the wrong side."""
    if noise_sd > 0:
        cross = 0.5 * math.erfc(0.5 / (noise_sd * math.sqrt(2.0)))
    else:
        cross = 0.0
    return flip_prob * (1.0 - cross) + (1.0 - flip_prob) * cross


def expected_decode_error_rate(flip_prob: float, noise_sd: float) -> float:
    """Probability that a single detection hard-decodes to a wrong ID."""
    return 1.0 - (1.0 - expected_bit_error_rate(flip_prob, noise_sd)) ** N_BITS


def _bee_rng(seed: int, bee: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, bee)))


def generate(cfg: SynthConfig):
    """Simulate one recording. Returns (truth_tracks, detections).

    Truth tracks partition the non-false-positive detections. A bee's
    trajectory becomes a new ground-truth track wherever the realized gap
    between consecutive detections exceeds the trackable horizon of 14
    frames (a bee away from the comb that long is a fresh trajectory under
    the same ID); shorter absences and missed detections stay as in-track
    gaps. Output is deterministic in the seed; per-bee streams are
    independent, and detection ids run in (frame, bee, then false positives)
    order.
    """
    if cfg.n_bees < 1:
        raise InvalidInputError(f"n_bees must be >= 1, got {cfg.n_bees}")
    if cfg.n_bees > MAX_ID + 1:
        raise InvalidInputError(f"at most {MAX_ID + 1} bees can carry distinct IDs")
    n_frames = cfg.n_frames
    if n_frames < 1:
        raise InvalidInputError("duration and fps must give at least one frame")

    rng_ids = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
    marker_ids = rng_ids.choice(MAX_ID + 1, size=cfg.n_bees, replace=False)

    # raw per-bee observations: bee -> list of (frame, x, y, orientation, bits)
    obs_per_bee: list[list[tuple]] = []
    for bee in range(cfg.n_bees):
        rng = _bee_rng(cfg.seed, bee)
        true_bits = np.array(bits_of_id(int(marker_ids[bee])))
        x = rng.uniform(0.0, cfg.width_px)
        y = rng.uniform(0.0, cfg.height_px)
        heading = rng.uniform(-math.pi, math.pi)
        absent_left = 0
        observations: list[tuple] = []
        for frame in range(n_frames):
            if absent_left > 0:
                absent_left -= 1
                present = False
            elif cfg.long_gap_rate > 0 and rng.random() < cfg.long_gap_rate:
                absent_left = int(rng.geometric(1.0 / cfg.absence_mean_frames)) - 1
                present = False
            else:
                present = True

            if present and rng.random() < cfg.detect_prob:
                bits = corrupt_bits(true_bits, cfg.bit_flip_prob, cfg.bit_noise_sd, rng)
                orient = wrap_angle(heading + rng.normal(0.0, ORIENTATION_NOISE_SD))
                observations.append((frame, x, y, orient, tuple(bits)))

            heading = wrap_angle(heading + rng.normal(0.0, cfg.motion.turn_sd_rad))
            step = rng.gamma(2.0, cfg.motion.speed_mean_px / 2.0)
            x += math.cos(heading) * step
            y += math.sin(heading) * step
            while not (0.0 <= x <= cfg.width_px):
                x = -x if x < 0 else 2.0 * cfg.width_px - x
                heading = wrap_angle(math.pi - heading)
            while not (0.0 <= y <= cfg.height_px):
                y = -y if y < 0 else 2.0 * cfg.height_px - y
                heading = wrap_angle(-heading)
        obs_per_bee.append(observations)

    real_per_frame = np.zeros(n_frames, dtype=np.int64)
    for observations in obs_per_bee:
        for obs in observations:
            real_per_frame[obs[0]] += 1

    rng_fp = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2,)))
    fp_per_frame: list[list[tuple]] = [[] for _ in range(n_frames)]
    if cfg.false_positive_rate > 0:
        boost = cfg.false_positive_rate / (1.0 - cfg.false_positive_rate)
        for frame in range(n_frames):
            k = int(rng_fp.poisson(boost * real_per_frame[frame]))
            for _ in range(k):
                fp_per_frame[frame].append(
                    (
                        frame,
                        rng_fp.uniform(0.0, cfg.width_px),
                        rng_fp.uniform(0.0, cfg.height_px),
                        rng_fp.uniform(-math.pi, math.pi),
                        tuple(rng_fp.uniform(0.0, 1.0, N_BITS)),
                    )
                )

    # detection ids in (frame, bee, then false positives) order
    keyed: list[tuple[tuple, tuple, int]] = []
    for bee, observations in enumerate(obs_per_bee):
        for obs in observations:
            keyed.append(((obs[0], 0, bee), obs, bee))
    for frame, group in enumerate(fp_per_frame):
        for fi, obs in enumerate(group):
            keyed.append(((frame, 1, fi), obs, -1))
    keyed.sort(key=lambda item: item[0])

    detections: list[Detection] = []
    bee_dets: dict[int, list[Detection]] = {}
    for det_id, (_, obs, bee) in enumerate(keyed):
        frame, x, y, orient, bits = obs
        det = Detection(
            detection_id=det_id,
            frame_index=frame,
            timestamp=frame / cfg.fps,
            cam_id=0,
            x_px=x,
            y_px=y,
            orientation_rad=orient,
            bits=bits,
        )
        detections.append(det)
        if bee >= 0:
            bee_dets.setdefault(bee, []).append(det)

    truth: list[GroundTruthTrack] = []
    for bee in range(cfg.n_bees):
        dets = bee_dets.get(bee)
        if not dets:
            continue
        runs: list[list[Detection]] = [[dets[0]]]
        for d in dets[1:]:
            if d.frame_index - runs[-1][-1].frame_index - 1 > DEFAULT_MAX_GAP_FRAMES:
                runs.append([d])
            else:
                runs[-1].append(d)
        for run in runs:
            truth.append(
                GroundTruthTrack(true_id=int(marker_ids[bee]), detections=tuple(run))
            )
    return truth, detections
