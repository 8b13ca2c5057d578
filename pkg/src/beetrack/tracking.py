"""The two-step tracker and the decoded-ID baseline.

Step 1 walks the data frame by frame and links detections one frame apart
into gap-free tracklets; step 2 sweeps tracklet start frames and merges
tracklets into tracks across gaps of bounded length. Both steps score
candidate pairs with a trained model and commit links through the same
thresholded optimal assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .assignment import solve_assignment
from .core import (
    TWO_PI,
    Detection,
    Track,
    Tracklet,
    angular_difference,
    assign_track_id,
    binarize_bits,
    bitwise_median,
)
from .errors import InvalidInputError
from .features import (
    DEFAULT_GATE_RADIUS_PX,
    DEFAULT_MAX_GAP_FRAMES,
    bit_confidence,
    extrapolation_error,
    motion_step,
)
from .scoring import ForestModel, LinearModel, predict_forest_many, predict_linear_many


@dataclass(frozen=True, slots=True)
class TrackerConfig:
    gate_radius_px: float = DEFAULT_GATE_RADIUS_PX
    accept_threshold: float = 0.5
    max_gap_frames: int = DEFAULT_MAX_GAP_FRAMES

    def __post_init__(self):
        if self.gate_radius_px <= 0:
            raise InvalidInputError(f"gate_radius_px must be > 0, got {self.gate_radius_px}")
        if not (0.0 <= self.accept_threshold <= 1.0):
            raise InvalidInputError(
                f"accept_threshold must be in [0, 1], got {self.accept_threshold}"
            )
        if self.max_gap_frames < 0:
            raise InvalidInputError(f"max_gap_frames must be >= 0, got {self.max_gap_frames}")


def _angle_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a[:, None] - b[None, :]) % TWO_PI
    return np.minimum(d, TWO_PI - d)


class LinearDetectionScorer:
    """Scores previous-frame detections against next-frame candidates."""

    def __init__(self, model: LinearModel):
        if model.n_features != 3:
            raise InvalidInputError(
                f"step-1 model must have 3 features, has {model.n_features}"
            )
        self.model = model

    def matrix(self, tails: Sequence[Detection], cands: Sequence[Detection], dist_px: np.ndarray):
        ang = _angle_matrix(
            np.array([d.orientation_rad for d in tails]),
            np.array([d.orientation_rad for d in cands]),
        )
        bits_a = np.array([d.bits for d in tails])
        bits_b = np.array([d.bits for d in cands])
        man = np.abs(bits_a[:, None, :] - bits_b[None, :, :]).sum(axis=-1)
        feats = np.stack([dist_px, ang, man], axis=-1).reshape(-1, 3)
        return predict_linear_many(self.model, feats).reshape(dist_px.shape)


class ForestMergeScorer:
    """Scores open-track tail tracklets against candidate tracklets.

    Per-tracklet summaries (median bits, confidence, boundary motion) are
    cached by tracklet id, so a tail is summarized once however many frames
    it stays open.
    """

    def __init__(self, model: ForestModel, max_gap_frames: int = DEFAULT_MAX_GAP_FRAMES):
        if model.n_features != 6:
            raise InvalidInputError(
                f"step-2 model must have 6 features, has {model.n_features}"
            )
        self.model = model
        self.max_gap = max_gap_frames
        self._cache: dict[int, tuple] = {}

    def _summary(self, t: Tracklet):
        cached = self._cache.get(t.tracklet_id)
        if cached is None:
            med = bitwise_median(t.detections)
            first = t.detections[0]
            if len(t.detections) >= 2:
                nxt = t.detections[1]
                df = nxt.frame_index - first.frame_index
                head_vel = ((nxt.x_px - first.x_px) / df, (nxt.y_px - first.y_px) / df)
            else:
                head_vel = (0.0, 0.0)
            cached = (med, bit_confidence(med), motion_step(t.detections), head_vel)
            self._cache[t.tracklet_id] = cached
        return cached

    def matrix(self, tails: Sequence[Tracklet], cands: Sequence[Tracklet], dist_px=None):
        rows = []
        for t1 in tails:
            med1, conf1, tail_vel, _ = self._summary(t1)
            last1 = t1.detections[-1]
            for t2 in cands:
                med2, conf2, _, head_vel = self._summary(t2)
                first2 = t2.detections[0]
                gap = first2.frame_index - last1.frame_index - 1
                if gap < 0 or gap > self.max_gap:
                    # overlapping or out-of-reach pair: cannot correspond
                    rows.append(None)
                    continue
                steps = gap + 1
                rows.append(
                    (
                        float(np.abs(med1 - med2).sum()),
                        math.hypot(first2.x_px - last1.x_px, first2.y_px - last1.y_px),
                        extrapolation_error(last1.xy, tail_vel, steps, first2.xy),
                        extrapolation_error(
                            first2.xy, (-head_vel[0], -head_vel[1]), steps, last1.xy
                        ),
                        angular_difference(last1.orientation_rad, first2.orientation_rad),
                        abs(conf1 - conf2),
                    )
                )
        probs = np.zeros(len(rows))
        valid = [i for i, r in enumerate(rows) if r is not None]
        if valid:
            feats = np.array([rows[i] for i in valid])
            probs[valid] = predict_forest_many(self.model, feats)
        return probs.reshape(len(tails), len(cands))


def _as_step1_scorer(model):
    return model if hasattr(model, "matrix") else LinearDetectionScorer(model)


def _as_step2_scorer(model, max_gap_frames: int):
    return model if hasattr(model, "matrix") else ForestMergeScorer(model, max_gap_frames)


def _grouped_by_frame(detections: Iterable[Detection]):
    seen = set()
    frames: dict[int, list[Detection]] = {}
    for d in detections:
        if d.detection_id in seen:
            raise InvalidInputError(f"duplicate detection_id {d.detection_id}")
        seen.add(d.detection_id)
        frames.setdefault(d.frame_index, []).append(d)
    for group in frames.values():
        group.sort(key=lambda d: d.detection_id)
    return frames


def track_step1(detections: Iterable[Detection], model, cfg: TrackerConfig | None = None):
    """Link consecutive-frame detections into gap-free tracklets.

    Every detection ends up in exactly one tracklet. A link is only possible
    between detections one frame apart, within the gate radius, and with an
    assigned probability at or above the accept threshold; everything else
    starts (or remains) its own tracklet.
    """
    cfg = cfg or TrackerConfig()
    scorer = _as_step1_scorer(model)
    frames = _grouped_by_frame(detections)

    accumulators: list[list[Detection]] = []
    acc_by_tail: dict[int, list[Detection]] = {}
    prev_frame = None
    prev_dets: list[Detection] = []

    for frame in sorted(frames):
        cands = frames[frame]
        pairs = []
        if prev_frame is not None and frame == prev_frame + 1 and prev_dets:
            ax = np.array([d.x_px for d in prev_dets])
            ay = np.array([d.y_px for d in prev_dets])
            bx = np.array([d.x_px for d in cands])
            by = np.array([d.y_px for d in cands])
            dist = np.hypot(ax[:, None] - bx[None, :], ay[:, None] - by[None, :])
            probs = scorer.matrix(prev_dets, cands, dist)
            probs = np.where(dist <= cfg.gate_radius_px, probs, 0.0)
            pairs = solve_assignment(probs, cfg.accept_threshold)

        matched_cols = set()
        for r, c in pairs:
            acc = acc_by_tail.pop(prev_dets[r].detection_id)
            acc.append(cands[c])
            acc_by_tail[cands[c].detection_id] = acc
            matched_cols.add(c)
        for i, cand in enumerate(cands):
            if i not in matched_cols:
                acc = [cand]
                accumulators.append(acc)
                acc_by_tail[cand.detection_id] = acc
        prev_frame, prev_dets = frame, cands

    accumulators.sort(key=lambda acc: (acc[0].frame_index, acc[0].detection_id))
    return [Tracklet(tracklet_id=i, detections=tuple(acc)) for i, acc in enumerate(accumulators)]


class _OpenTrack:
    __slots__ = ("tracklets", "last_frame")

    def __init__(self, first: Tracklet):
        self.tracklets = [first]
        self.last_frame = first.end_frame

    def extend(self, t: Tracklet):
        self.tracklets.append(t)
        self.last_frame = t.end_frame


def track_step2(tracklets: Sequence[Tracklet], model, cfg: TrackerConfig | None = None):
    """Merge tracklets into gap-tolerant tracks.

    Sweeps start frames in increasing order; at frame t the candidates are
    the tracklets starting at t and the open set is every track whose last
    frame f satisfies 0 <= t - f - 1 <= max_gap_frames. A candidate is scored
    against the open track's final tracklet. Unmerged candidates become new
    tracks, so every input tracklet lands in exactly one output track.
    """
    cfg = cfg or TrackerConfig()
    scorer = _as_step2_scorer(model, cfg.max_gap_frames)

    ordered = sorted(tracklets, key=lambda t: (t.start_frame, t.detections[0].detection_id))
    by_start: dict[int, list[Tracklet]] = {}
    for t in ordered:
        by_start.setdefault(t.start_frame, []).append(t)

    all_tracks: list[_OpenTrack] = []
    active: list[_OpenTrack] = []
    for start in sorted(by_start):
        cands = by_start[start]
        active = [a for a in active if a.last_frame >= start - 1 - cfg.max_gap_frames]
        eligible = [a for a in active if a.last_frame <= start - 1]
        pairs = []
        if eligible:
            probs = scorer.matrix([a.tracklets[-1] for a in eligible], cands)
            pairs = solve_assignment(probs, cfg.accept_threshold)
        matched_cols = set()
        for r, c in pairs:
            eligible[r].extend(cands[c])
            matched_cols.add(c)
        for i, cand in enumerate(cands):
            if i not in matched_cols:
                tr = _OpenTrack(cand)
                all_tracks.append(tr)
                active.append(tr)

    all_tracks.sort(
        key=lambda a: (a.tracklets[0].start_frame, a.tracklets[0].detections[0].detection_id)
    )
    return [
        Track(track_id=i, tracklets=tuple(a.tracklets)) for i, a in enumerate(all_tracks)
    ]


def track_baseline(detections: Iterable[Detection], cfg: TrackerConfig | None = None):
    """Chain detections purely by their hard-decoded IDs.

    Within one decoded ID, detections are chained in time order as long as
    gaps stay within max_gap_frames; when several detections of one frame
    decode to the same ID, the one nearest the chain's last position extends
    it and the others start new chains.
    """
    cfg = cfg or TrackerConfig()
    frames = _grouped_by_frame(detections)

    chains_by_id: dict[int, list[list[Detection]]] = {}
    finished: list[list[Detection]] = []

    for frame in sorted(frames):
        by_id: dict[int, list[Detection]] = {}
        for d in frames[frame]:
            by_id.setdefault(binarize_bits(d.bits), []).append(d)
        for decoded, cands in by_id.items():
            chains = chains_by_id.setdefault(decoded, [])
            open_idx = [
                i
                for i, ch in enumerate(chains)
                if frame - 1 - cfg.max_gap_frames <= ch[-1].frame_index <= frame - 1
            ]
            options = []
            for oi, i in enumerate(open_idx):
                tail = chains[i][-1]
                for j, cand in enumerate(cands):
                    options.append(
                        (math.hypot(cand.x_px - tail.x_px, cand.y_px - tail.y_px), oi, j, i)
                    )
            options.sort()
            used_chain, used_cand = set(), set()
            for _, oi, j, i in options:
                if oi in used_chain or j in used_cand:
                    continue
                chains[i].append(cands[j])
                used_chain.add(oi)
                used_cand.add(j)
            for j, cand in enumerate(cands):
                if j not in used_cand:
                    chains.append([cand])

    for chains in chains_by_id.values():
        finished.extend(chains)
    finished.sort(key=lambda ch: (ch[0].frame_index, ch[0].detection_id))

    tracks = []
    tracklet_id = 0
    for i, chain in enumerate(finished):
        runs: list[list[Detection]] = [[chain[0]]]
        for d in chain[1:]:
            if d.frame_index == runs[-1][-1].frame_index + 1:
                runs[-1].append(d)
            else:
                runs.append([d])
        parts = []
        for run in runs:
            parts.append(Tracklet(tracklet_id=tracklet_id, detections=tuple(run)))
            tracklet_id += 1
        tracks.append(Track(track_id=i, tracklets=tuple(parts)))
    return tracks


def tracklets_as_tracks(tracklets: Sequence[Tracklet]) -> list[Track]:
    """Wrap step-1 output as single-tracklet tracks (for step-1-only evaluation)."""
    ordered = sorted(tracklets, key=lambda t: (t.start_frame, t.detections[0].detection_id))
    return [Track(track_id=i, tracklets=(t,)) for i, t in enumerate(ordered)]


def with_assigned_ids(tracks: Sequence[Track]) -> list[Track]:
    """Return tracks with their median-vote ID filled in."""
    return [replace(t, assigned_id=assign_track_id(t)) for t in tracks]
