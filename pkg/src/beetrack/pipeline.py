"""File formats and hour-chunked orchestration.

All on-disk artifacts are UTF-8 JSON Lines:

  detections:  {"detection_id": int, "frame": int, "ts": float, "cam": int,
                "x": float, "y": float, "theta": float, "bits": [12 floats]}
  ground truth: {"true_id": int, "detection_ids": [int, ...]}
  tracks:       {"track_id": int, "assigned_id": int, "detection_ids": [...],
                 "start_frame": int, "end_frame": int}

Tracking runs independently per frame chunk (default one hour at 3 fps) and
chunk results are merged purely by assigned ID at adjacent chunk boundaries,
so chunks parallelize with no shared state and the output is identical for
any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .core import Detection, GroundTruthTrack, Track, Tracklet, assign_track_id
from .errors import DataFormatError, InvalidInputError
from .scoring import ForestModel, LinearModel
from .tracking import TrackerConfig, track_step1, track_step2, with_assigned_ids

DEFAULT_CHUNK_FRAMES = 10800  # one hour at 3 fps


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def write_detections(path, detections: Iterable[Detection]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in detections:
            fh.write(
                _dump_line(
                    {
                        "detection_id": d.detection_id,
                        "frame": d.frame_index,
                        "ts": d.timestamp,
                        "cam": d.cam_id,
                        "x": d.x_px,
                        "y": d.y_px,
                        "theta": d.orientation_rad,
                        "bits": list(d.bits),
                    }
                )
            )


def _read_jsonl(path):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def read_detections(path) -> list[Detection]:
    out = []
    seen = set()
    for lineno, obj in _read_jsonl(path):
        try:
            det = Detection(
                detection_id=int(obj["detection_id"]),
                frame_index=int(obj["frame"]),
                timestamp=float(obj["ts"]),
                cam_id=int(obj["cam"]),
                x_px=float(obj["x"]),
                y_px=float(obj["y"]),
                orientation_rad=float(obj["theta"]),
                bits=obj["bits"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{lineno}: bad detection: {exc}") from exc
        if det.detection_id in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate detection_id {det.detection_id}")
        seen.add(det.detection_id)
        out.append(det)
    return out


def write_truth(path, truth: Iterable[GroundTruthTrack]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in truth:
            fh.write(
                _dump_line(
                    {
                        "true_id": t.true_id,
                        "detection_ids": [d.detection_id for d in t.detections],
                    }
                )
            )


def _detection_lookup(detections: Sequence[Detection]) -> dict[int, Detection]:
    return {d.detection_id: d for d in detections}


def read_truth(path, detections: Sequence[Detection]) -> list[GroundTruthTrack]:
    lookup = _detection_lookup(detections)
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            ids = [int(i) for i in obj["detection_ids"]]
            dets = sorted((lookup[i] for i in ids), key=lambda d: d.frame_index)
            out.append(GroundTruthTrack(true_id=int(obj["true_id"]), detections=tuple(dets)))
        except KeyError as exc:
            raise DataFormatError(
                f"{path}:{lineno}: references unknown detection {exc}"
            ) from exc
        except (TypeError, ValueError, InvalidInputError) as exc:
            raise DataFormatError(f"{path}:{lineno}: bad ground-truth track: {exc}") from exc
    return out


def write_tracks(path, tracks: Iterable[Track]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tracks:
            fh.write(
                _dump_line(
                    {
                        "track_id": t.track_id,
                        "assigned_id": t.assigned_id,
                        "detection_ids": [d.detection_id for d in t.detections],
                        "start_frame": t.start_frame,
                        "end_frame": t.end_frame,
                    }
                )
            )


def detections_to_tracklets(dets: Sequence[Detection], first_tracklet_id: int = 0):
    """Split a time-ordered detection sequence into gap-free tracklets."""
    runs: list[list[Detection]] = [[dets[0]]]
    for d in dets[1:]:
        if d.frame_index == runs[-1][-1].frame_index + 1:
            runs[-1].append(d)
        else:
            runs.append([d])
    return [
        Tracklet(tracklet_id=first_tracklet_id + i, detections=tuple(run))
        for i, run in enumerate(runs)
    ]


def read_tracks(path, detections: Sequence[Detection]) -> list[Track]:
    lookup = _detection_lookup(detections)
    out = []
    next_tracklet = 0
    for lineno, obj in _read_jsonl(path):
        try:
            ids = [int(i) for i in obj["detection_ids"]]
            dets = sorted((lookup[i] for i in ids), key=lambda d: d.frame_index)
            parts = detections_to_tracklets(dets, next_tracklet)
            next_tracklet += len(parts)
            assigned = obj["assigned_id"]
            out.append(
                Track(
                    track_id=int(obj["track_id"]),
                    tracklets=tuple(parts),
                    assigned_id=None if assigned is None else int(assigned),
                )
            )
        except KeyError as exc:
            raise DataFormatError(
                f"{path}:{lineno}: references unknown detection {exc}"
            ) from exc
        except (TypeError, ValueError, InvalidInputError, IndexError) as exc:
            raise DataFormatError(f"{path}:{lineno}: bad track: {exc}") from exc
    return out


@dataclass(frozen=True, slots=True)
class ChunkPlan:
    """Contiguous half-open frame intervals covering the input span."""

    chunk_length_frames: int
    chunks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.chunk_length_frames < 1:
            raise InvalidInputError("chunk_length_frames must be >= 1")
        if not self.chunks:
            raise InvalidInputError("chunk plan must contain at least one interval")
        for (s, e) in self.chunks:
            if e <= s:
                raise InvalidInputError(f"empty chunk interval [{s}, {e})")
        for (_, e), (s2, _) in zip(self.chunks, self.chunks[1:]):
            if s2 != e:
                raise InvalidInputError("chunk intervals must be contiguous")

    @classmethod
    def cover(cls, start_frame: int, end_frame: int, chunk_length_frames: int = DEFAULT_CHUNK_FRAMES):
        """Plan covering frames start..end (inclusive) in fixed-length chunks."""
        if end_frame < start_frame:
            raise InvalidInputError("end_frame before start_frame")
        chunks = []
        s = start_frame
        while s <= end_frame:
            chunks.append((s, s + chunk_length_frames))
            s += chunk_length_frames
        return cls(chunk_length_frames=chunk_length_frames, chunks=tuple(chunks))


def track_chunk(
    detections: Sequence[Detection],
    model_step1: LinearModel,
    model_step2: ForestModel,
    cfg: TrackerConfig,
) -> list[Track]:
    """Run both tracking steps plus ID assignment on one chunk of detections."""
    tracklets = track_step1(detections, model_step1, cfg)
    tracks = track_step2(tracklets, model_step2, cfg)
    return with_assigned_ids(tracks)


def _chunk_job(payload):
    dets, model1, model2, cfg = payload
    return track_chunk(dets, model1, model2, cfg)


def merge_chunks(
    per_chunk_tracks: Sequence[Sequence[Track]],
    plan: ChunkPlan | None = None,
    merge_gap_frames: int | None = None,
) -> list[Track]:
    """Concatenate tracks across adjacent chunk boundaries by assigned ID.

    At each boundary, a track ending in chunk k and a track starting in chunk
    k+1 merge when their assigned IDs match (and, if configured, their gap is
    at most ``merge_gap_frames``). When several same-ID candidates meet at one
    boundary, only the temporally nearest pair merges; the rest stay separate.
    Merged tracks get their ID recomputed from the combined detections.
    """
    if plan is not None and len(plan.chunks) != len(per_chunk_tracks):
        raise InvalidInputError("chunk plan does not match the number of chunk results")
    acc: list[Track] = list(per_chunk_tracks[0]) if per_chunk_tracks else []
    for t in acc:
        if t.assigned_id is None:
            raise InvalidInputError("chunk tracks must carry assigned IDs before merging")

    for k in range(1, len(per_chunk_tracks)):
        right = list(per_chunk_tracks[k])
        for t in right:
            if t.assigned_id is None:
                raise InvalidInputError("chunk tracks must carry assigned IDs before merging")
        if plan is not None:
            lo, hi = plan.chunks[k - 1]
            left_ok = lambda t: lo <= t.end_frame < hi
        else:
            left_ok = lambda t: True

        by_id_left: dict[int, list[int]] = {}
        for i, t in enumerate(acc):
            if left_ok(t):
                by_id_left.setdefault(t.assigned_id, []).append(i)
        by_id_right: dict[int, list[int]] = {}
        for j, t in enumerate(right):
            by_id_right.setdefault(t.assigned_id, []).append(j)

        consumed_right = set()
        for marker_id, left_idx in sorted(by_id_left.items()):
            right_idx = by_id_right.get(marker_id)
            if not right_idx:
                continue
            candidates = []
            for i in left_idx:
                for j in right_idx:
                    gap = right[j].start_frame - acc[i].end_frame - 1
                    if gap < 0:
                        continue
                    if merge_gap_frames is not None and gap > merge_gap_frames:
                        continue
                    candidates.append((gap, right[j].start_frame, acc[i].end_frame, i, j))
            if not candidates:
                continue
            _, _, _, i, j = min(candidates)
            merged = Track(
                track_id=acc[i].track_id,
                tracklets=acc[i].tracklets + right[j].tracklets,
            )
            acc[i] = replace(merged, assigned_id=assign_track_id(merged))
            consumed_right.add(j)
        acc.extend(t for j, t in enumerate(right) if j not in consumed_right)
    return acc


def _renumber(tracks: Sequence[Track]) -> list[Track]:
    ordered = sorted(
        tracks, key=lambda t: (t.start_frame, t.detections[0].detection_id)
    )
    out = []
    next_tracklet = 0
    for i, t in enumerate(ordered):
        parts = tuple(
            Tracklet(tracklet_id=next_tracklet + k, detections=p.detections)
            for k, p in enumerate(t.tracklets)
        )
        next_tracklet += len(parts)
        out.append(Track(track_id=i, tracklets=parts, assigned_id=t.assigned_id))
    return out


def run_chunked(
    detections: Sequence[Detection],
    model_step1: LinearModel,
    model_step2: ForestModel,
    cfg: TrackerConfig | None = None,
    plan: ChunkPlan | None = None,
    workers: int = 1,
    merge_gap_frames: int | None = None,
) -> list[Track]:
    """Chunked two-step tracking with ID-based boundary merging, in memory.

    The result is independent of ``workers``; chunks share nothing but the
    immutable models and configuration.
    """
    cfg = cfg or TrackerConfig()
    if not detections:
        return []
    if plan is None:
        frames = [d.frame_index for d in detections]
        plan = ChunkPlan.cover(min(frames), max(frames), DEFAULT_CHUNK_FRAMES)

    buckets: list[list[Detection]] = [[] for _ in plan.chunks]
    lo = plan.chunks[0][0]
    hi = plan.chunks[-1][1]
    length = plan.chunk_length_frames
    for d in detections:
        if not (lo <= d.frame_index < hi):
            raise InvalidInputError(
                f"detection {d.detection_id} at frame {d.frame_index} outside chunk plan"
            )
        buckets[(d.frame_index - lo) // length].append(d)

    jobs = [(bucket, model_step1, model_step2, cfg) for bucket in buckets]
    if workers <= 1 or len(jobs) <= 1:
        per_chunk = [_chunk_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(_chunk_job, jobs))

    merged = merge_chunks(per_chunk, plan=plan, merge_gap_frames=merge_gap_frames)
    return _renumber(merged)


def run_pipeline(
    detections_path,
    model_step1: LinearModel,
    model_step2: ForestModel,
    cfg: TrackerConfig | None = None,
    out_path=None,
    chunk_length_frames: int = DEFAULT_CHUNK_FRAMES,
    workers: int = 1,
    merge_gap_frames: int | None = None,
) -> list[Track]:
    """File-to-file tracking: read detections, track per chunk, merge, write."""
    detections = read_detections(detections_path)
    if not detections:
        raise DataFormatError(f"{detections_path}: no detections")
    frames = [d.frame_index for d in detections]
    plan = ChunkPlan.cover(min(frames), max(frames), chunk_length_frames)
    tracks = run_chunked(
        detections,
        model_step1,
        model_step2,
        cfg,
        plan=plan,
        workers=workers,
        merge_gap_frames=merge_gap_frames,
    )
    if out_path is not None:
        write_tracks(out_path, tracks)
    return tracks
