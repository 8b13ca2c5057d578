"""Ground-truth comparison metrics and training-sample generation.

A predicted partition of the detections is matched against labeled tracks by
plurality overlap; the report mirrors the usual tracking error taxonomy:
deletions (labeled detections missing from their track), insertions (foreign
detections introduced into a matched track), mismatches (a wrong detection
present where the right one existed), complete tracks, and the share of
detections and tracks that end up with a wrong decoded ID.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    Detection,
    GroundTruthTrack,
    Track,
    angular_difference,
    bitwise_median,
)
from .errors import InvalidInputError
from .features import (
    DEFAULT_GATE_RADIUS_PX,
    DEFAULT_MAX_GAP_FRAMES,
    bit_confidence,
    euclidean_px,
    extrapolation_error,
    manhattan_bits,
    step1_features,
)
from .scoring import LabeledSample

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class EvalReport:
    pct_incorrect_detection_ids: float
    pct_incorrect_track_ids: float
    pct_complete_tracks: float
    pct_detections_deleted: float
    pct_tracks_with_deletion: float
    n_insertions: int
    n_mismatches: int
    track_length_histogram: dict[int, int]
    gap_histogram: dict[int, int]

    def to_json_dict(self) -> dict:
        return {
            "pct_incorrect_detection_ids": self.pct_incorrect_detection_ids,
            "pct_incorrect_track_ids": self.pct_incorrect_track_ids,
            "pct_complete_tracks": self.pct_complete_tracks,
            "pct_detections_deleted": self.pct_detections_deleted,
            "pct_tracks_with_deletion": self.pct_tracks_with_deletion,
            "n_insertions": self.n_insertions,
            "n_mismatches": self.n_mismatches,
            "track_length_histogram": {str(k): v for k, v in sorted(self.track_length_histogram.items())},
            "gap_histogram": {str(k): v for k, v in sorted(self.gap_histogram.items())},
        }


def render_report(report: EvalReport) -> str:
    """Aligned text table of the headline metrics."""
    rows = [
        ("incorrect detection IDs", f"{report.pct_incorrect_detection_ids:.2f}%"),
        ("incorrect track IDs", f"{report.pct_incorrect_track_ids:.2f}%"),
        ("complete tracks", f"{report.pct_complete_tracks:.2f}%"),
        ("detections missing from their track (deletions)", f"{report.pct_detections_deleted:.2f}%"),
        ("tracks with at least one deletion", f"{report.pct_tracks_with_deletion:.2f}%"),
        ("insertions", str(report.n_insertions)),
        ("mismatches", str(report.n_mismatches)),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value:>8}" for name, value in rows)


def _detection_owner(truth: Sequence[GroundTruthTrack]) -> dict[int, int]:
    owner: dict[int, int] = {}
    for i, t in enumerate(truth):
        for d in t.detections:
            if d.detection_id in owner:
                raise InvalidInputError(
                    f"detection {d.detection_id} appears in more than one ground-truth track"
                )
            owner[d.detection_id] = i
    return owner


def _detection_container(predicted: Sequence[Track]) -> dict[int, int]:
    container: dict[int, int] = {}
    for i, t in enumerate(predicted):
        for d in t.detections:
            if d.detection_id in container:
                raise InvalidInputError(
                    f"detection {d.detection_id} appears in more than one predicted track"
                )
            container[d.detection_id] = i
    return container


def match_tracks(predicted: Sequence[Track], truth: Sequence[GroundTruthTrack]):
    """Map each ground-truth track to the predicted track holding most of it.

    Ties go to the predicted track with the earliest start frame, then the
    lowest track_id. Several truth tracks may map to one prediction.
    """
    container = _detection_container(predicted)
    mapping: dict[GroundTruthTrack, Track] = {}
    for t in truth:
        counts: dict[int, int] = {}
        for d in t.detections:
            p = container.get(d.detection_id)
            if p is not None:
                counts[p] = counts.get(p, 0) + 1
        if not counts:
            continue
        best = min(
            counts,
            key=lambda p: (-counts[p], predicted[p].start_frame, predicted[p].track_id),
        )
        mapping[t] = predicted[best]
    return mapping


def evaluate(predicted: Sequence[Track], truth: Sequence[GroundTruthTrack]) -> EvalReport:
    """Score a predicted track set against labeled ground truth.

    Predicted tracks must carry assigned IDs. Detections absent from every
    ground-truth track (false positives) only enter the report as insertions
    when they land inside a matched track.
    """
    if not truth:
        raise InvalidInputError("ground truth is empty")
    for t in predicted:
        if t.assigned_id is None:
            raise InvalidInputError(f"predicted track {t.track_id} has no assigned ID")

    owner = _detection_owner(truth)
    container = _detection_container(predicted)
    pred_index = {id(t): i for i, t in enumerate(predicted)}
    mapping = match_tracks(predicted, truth)

    matched_truths_of_pred: dict[int, set[int]] = {}
    for ti, t in enumerate(truth):
        p = mapping.get(t)
        if p is not None:
            matched_truths_of_pred.setdefault(pred_index[id(p)], set()).add(ti)

    n_truth_dets = sum(len(t.detections) for t in truth)
    deletions = 0
    tracks_with_deletion = 0
    complete = 0
    mismatches = 0
    for t in truth:
        p = mapping.get(t)
        if p is None:
            deletions += len(t.detections)
            tracks_with_deletion += 1
            continue
        pred_ids = {d.detection_id for d in p.detections}
        truth_ids = {d.detection_id for d in t.detections}
        missing = truth_ids - pred_ids
        deletions += len(missing)
        if missing:
            tracks_with_deletion += 1
        if pred_ids == truth_ids:
            complete += 1
        if missing:
            frame_of_pred = {d.frame_index: d.detection_id for d in p.detections}
            for d in t.detections:
                if d.detection_id in missing:
                    present = frame_of_pred.get(d.frame_index)
                    if present is not None and present != d.detection_id:
                        mismatches += 1

    insertions = 0
    for pi, truth_set in matched_truths_of_pred.items():
        for d in predicted[pi].detections:
            ti = owner.get(d.detection_id)
            if ti is None or ti not in truth_set:
                insertions += 1

    wrong_det_ids = 0
    for ti, t in enumerate(truth):
        for d in t.detections:
            pi = container.get(d.detection_id)
            if pi is None or predicted[pi].assigned_id != t.true_id:
                wrong_det_ids += 1

    # track-ID correctness is judged per predicted track against the labeled
    # track contributing most of its detections; pure false-positive tracks
    # have no reference ID and are left out of the percentage
    wrong_track_ids = 0
    id_scored_tracks = 0
    for pi, p in enumerate(predicted):
        counts: dict[int, int] = {}
        for d in p.detections:
            ti = owner.get(d.detection_id)
            if ti is not None:
                counts[ti] = counts.get(ti, 0) + 1
        if not counts:
            continue
        id_scored_tracks += 1
        ref = min(counts, key=lambda ti: (-counts[ti], truth[ti].start_frame, truth[ti].true_id))
        if p.assigned_id != truth[ref].true_id:
            wrong_track_ids += 1

    length_hist: dict[int, int] = {}
    for p in predicted:
        length = p.end_frame - p.start_frame + 1
        length_hist[length] = length_hist.get(length, 0) + 1

    gap_hist: dict[int, int] = {}
    for t in truth:
        for g in t.gaps():
            gap_hist[g] = gap_hist.get(g, 0) + 1

    def pct(num, den):
        return 100.0 * num / den if den else 0.0

    return EvalReport(
        pct_incorrect_detection_ids=pct(wrong_det_ids, n_truth_dets),
        pct_incorrect_track_ids=pct(wrong_track_ids, id_scored_tracks),
        pct_complete_tracks=pct(complete, len(truth)),
        pct_detections_deleted=pct(deletions, n_truth_dets),
        pct_tracks_with_deletion=pct(tracks_with_deletion, len(truth)),
        n_insertions=insertions,
        n_mismatches=mismatches,
        track_length_histogram=length_hist,
        gap_histogram=gap_hist,
    )


def track_length_stats(tracks: Sequence[Track]) -> dict:
    """Length histogram plus plain and detection-weighted mean durations."""
    hist: dict[int, int] = {}
    total = 0
    weighted = 0
    n_dets = 0
    for t in tracks:
        length = t.end_frame - t.start_frame + 1
        hist[length] = hist.get(length, 0) + 1
        total += length
        k = len(t.detections)
        weighted += length * k
        n_dets += k
    return {
        "n_tracks": len(tracks),
        "track_length_histogram": hist,
        "mean_track_length_frames": total / len(tracks) if tracks else 0.0,
        "detection_weighted_mean_track_length_frames": weighted / n_dets if n_dets else 0.0,
    }


def tracks_gap_histogram(tracks: Sequence[Track]) -> dict[int, int]:
    """Distribution of gaps between consecutive detections inside tracks."""
    hist: dict[int, int] = {}
    for t in tracks:
        dets = t.detections
        for a, b in zip(dets, dets[1:]):
            g = b.frame_index - a.frame_index - 1
            hist[g] = hist.get(g, 0) + 1
    return hist


def make_step1_samples(
    truth: Sequence[GroundTruthTrack], radius_px: float = DEFAULT_GATE_RADIUS_PX
) -> list[LabeledSample]:
    """All gated consecutive-frame detection pairs, labeled same-track or not."""
    owner = _detection_owner(truth)
    by_frame: dict[int, list[Detection]] = {}
    for t in truth:
        for d in t.detections:
            by_frame.setdefault(d.frame_index, []).append(d)
    for group in by_frame.values():
        group.sort(key=lambda d: d.detection_id)

    samples: list[LabeledSample] = []
    for f in sorted(by_frame):
        nxt = by_frame.get(f + 1)
        if not nxt:
            continue
        for a in by_frame[f]:
            for b in nxt:
                if euclidean_px(a, b) <= radius_px:
                    samples.append(
                        LabeledSample(
                            features=step1_features(a, b).as_tuple(),
                            label=owner[a.detection_id] == owner[b.detection_id],
                        )
                    )
    return samples


class _TrackTables:
    """Per-index summaries of a labeled track's prefixes and suffixes."""

    def __init__(self, track: GroundTruthTrack):
        dets = track.detections
        self.dets = dets
        self.frames = np.array([d.frame_index for d in dets])
        bits = np.array([d.bits for d in dets], dtype=np.float64)
        n = len(dets)
        self.prefix_median = np.array([np.median(bits[: i + 1], axis=0) for i in range(n)])
        self.suffix_median = np.array([np.median(bits[j:], axis=0) for j in range(n)])
        self.prefix_conf = np.abs(self.prefix_median - 0.5).min(axis=1)
        self.suffix_conf = np.abs(self.suffix_median - 0.5).min(axis=1)

    def tail_velocity(self, i: int) -> tuple[float, float]:
        if i == 0:
            return (0.0, 0.0)
        a, b = self.dets[i - 1], self.dets[i]
        df = b.frame_index - a.frame_index
        return ((b.x_px - a.x_px) / df, (b.y_px - a.y_px) / df)

    def head_velocity(self, j: int) -> tuple[float, float]:
        if j + 1 >= len(self.dets):
            return (0.0, 0.0)
        a, b = self.dets[j], self.dets[j + 1]
        df = b.frame_index - a.frame_index
        return ((b.x_px - a.x_px) / df, (b.y_px - a.y_px) / df)


def _pair_features(ta: _TrackTables, i: int, tb: _TrackTables, j: int) -> tuple:
    """Step-2 features of (prefix of A up to i, suffix of B from j).

    Matches step2_features on the same detection sequences bit for bit.
    """
    last1 = ta.dets[i]
    first2 = tb.dets[j]
    gap = first2.frame_index - last1.frame_index - 1
    steps = gap + 1
    head = tb.head_velocity(j)
    return (
        manhattan_bits(ta.prefix_median[i], tb.suffix_median[j]),
        euclidean_px(last1, first2),
        extrapolation_error(last1.xy, ta.tail_velocity(i), steps, first2.xy),
        extrapolation_error(first2.xy, (-head[0], -head[1]), steps, last1.xy),
        angular_difference(last1.orientation_rad, first2.orientation_rad),
        abs(float(ta.prefix_conf[i]) - float(tb.suffix_conf[j])),
    )


def _window_features(dets: Sequence[Detection], split: int) -> tuple:
    """Step-2 features of a short window split into dets[:split+1] / dets[split+1:]."""
    d1 = dets[: split + 1]
    d2 = dets[split + 1 :]
    last1, first2 = d1[-1], d2[0]
    gap = first2.frame_index - last1.frame_index - 1
    steps = gap + 1
    med1 = bitwise_median(d1)
    med2 = bitwise_median(d2)
    if len(d2) >= 2:
        a, b = d2[0], d2[1]
        df = b.frame_index - a.frame_index
        head = ((b.x_px - a.x_px) / df, (b.y_px - a.y_px) / df)
    else:
        head = (0.0, 0.0)
    if len(d1) >= 2:
        a, b = d1[-2], d1[-1]
        df = b.frame_index - a.frame_index
        tail = ((b.x_px - a.x_px) / df, (b.y_px - a.y_px) / df)
    else:
        tail = (0.0, 0.0)
    return (
        manhattan_bits(med1, med2),
        euclidean_px(last1, first2),
        extrapolation_error(last1.xy, tail, steps, first2.xy),
        extrapolation_error(first2.xy, (-head[0], -head[1]), steps, last1.xy),
        angular_difference(last1.orientation_rad, first2.orientation_rad),
        abs(bit_confidence(med1) - bit_confidence(med2)),
    )


def make_step2_samples(
    truth: Sequence[GroundTruthTrack], max_gap: int = DEFAULT_MAX_GAP_FRAMES
) -> list[LabeledSample]:
    """Tracklet-pair training samples from labeled tracks.

    Positives: each track split between every pair of consecutive detections
    (skipping splits whose gap exceeds ``max_gap``), plus every contiguous
    sub-track of up to three detections split at all its internal positions.
    Negatives: every ordered pair of different-ID tracks cut at every time
    step where the cut yields a prefix of one and a suffix of the other with
    a gap in [0, max_gap].
    """
    ordered = sorted(
        truth, key=lambda t: (t.start_frame, t.true_id, t.detections[0].detection_id)
    )
    _detection_owner(ordered)  # uniqueness check
    tables = [_TrackTables(t) for t in ordered]

    samples: list[LabeledSample] = []
    for ta in tables:
        n = len(ta.dets)
        for i in range(n - 1):
            gap = ta.frames[i + 1] - ta.frames[i] - 1
            if 0 <= gap <= max_gap:
                samples.append(LabeledSample(_pair_features(ta, i, ta, i + 1), True))
        # short sub-tracks keep small fragments represented in training
        for size in (2, 3):
            for s in range(0, n - size + 1):
                window = ta.dets[s : s + size]
                for split in range(size - 1):
                    gap = window[split + 1].frame_index - window[split].frame_index - 1
                    if 0 <= gap <= max_gap:
                        samples.append(LabeledSample(_window_features(window, split), True))

    n_pos = len(samples)
    for ai, ta in enumerate(tables):
        fa = ta.frames
        na = len(fa)
        for bi, tb in enumerate(tables):
            if ai == bi or ordered[ai].true_id == ordered[bi].true_id:
                continue
            fb = tb.frames
            for i in range(na):
                lo = int(np.searchsorted(fb, fa[i] + 1, side="left"))
                hi = int(np.searchsorted(fb, fa[i] + 1 + max_gap, side="right"))
                next_a = fa[i + 1] if i + 1 < na else None
                for j in range(lo, hi):
                    prev_b = fb[j - 1] if j > 0 else None
                    # a single cut time t must produce both parts:
                    # fa[i] <= t < next_a  and  prev_b <= t < fb[j]
                    t_lo = fa[i] if prev_b is None else max(fa[i], prev_b)
                    t_hi = fb[j] if next_a is None else min(next_a, fb[j])
                    if t_lo < t_hi:
                        samples.append(LabeledSample(_pair_features(ta, i, tb, j), False))

    if samples:
        log.info(
            "step-2 samples: %d total, %.2f%% positive",
            len(samples),
            100.0 * n_pos / len(samples),
        )
    return samples
