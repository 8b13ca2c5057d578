"""Command-line client for the tracking service.

Each subcommand reads/writes local JSONL files and calls the HTTP service
for the actual computation. By default an in-process service instance is
used, so no server needs to be running; ``--server URL`` points the same
commands at a remote instance. ``serve`` starts the service.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import BeetrackError, InternalError
from .pipeline import read_detections, read_tracks, read_truth, write_detections, write_tracks
from .scoring import load_model, model_to_doc
from .service.schemas import DetectionIO, TrackIO, TruthTrackIO


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default of 2 is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Exit(1, message)


def _detection_payload(path):
    return [DetectionIO.from_core(d).model_dump() for d in read_detections(path)]


def _truth_payload(path, detections):
    truth = read_truth(path, detections)
    return [TruthTrackIO.from_core(t).model_dump() for t in truth]


def _tracks_payload(path, detections):
    tracks = read_tracks(path, detections)
    return [TrackIO.from_core(t).model_dump() for t in tracks]


def _write_model_doc(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path is None:
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")


def _sorted_hist(hist: dict) -> dict:
    return {str(k): hist[k] for k in sorted(hist, key=int)}


class _Client:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            code = 3 if resp.status_code >= 500 else 2
            raise _Exit(code, f"{path}: {detail}")
        return resp.json()


def _cmd_synth(args, client: _Client):
    payload = {
        "config": {
            "n_bees": args.n_bees,
            "width_px": args.width_px,
            "height_px": args.height_px,
            "fps": args.fps,
            "duration_s": args.duration_s,
            "detect_prob": args.detect_prob,
            "long_gap_rate": args.long_gap_rate,
            "absence_mean_frames": args.absence_mean_frames,
            "bit_flip_prob": args.bit_flip_prob,
            "bit_noise_sd": args.bit_noise_sd,
            "false_positive_rate": args.false_positive_rate,
            "motion": {"speed_mean_px": args.speed_mean_px, "turn_sd_rad": args.turn_sd_rad},
            "seed": args.seed,
        }
    }
    out = client.post("/synth", payload)
    detections = [DetectionIO(**d).to_core() for d in out["detections"]]
    write_detections(args.out_detections, detections)
    lookup = {d.detection_id: d for d in detections}
    truth = [TruthTrackIO(**t).to_core(lookup) for t in out["truth"]]
    from .pipeline import write_truth

    write_truth(args.out_truth, truth)
    print(f"wrote {len(detections)} detections and {len(truth)} truth tracks")


def _cmd_train_step1(args, client: _Client):
    detections = read_detections(args.detections)
    payload = {
        "detections": [DetectionIO.from_core(d).model_dump() for d in detections],
        "truth": _truth_payload(args.truth, detections),
        "radius_px": args.radius_px,
        "l2": args.l2,
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "class_weight": args.class_weight,
    }
    out = client.post("/train/step1", payload)
    _write_model_doc(args.out, out["model"])
    print(
        f"trained step-1 model on {out['n_samples']} samples "
        f"({100 * out['positive_fraction']:.1f}% positive) -> {args.out}"
    )


def _cmd_train_step2(args, client: _Client):
    detections = read_detections(args.detections)
    payload = {
        "detections": [DetectionIO.from_core(d).model_dump() for d in detections],
        "truth": _truth_payload(args.truth, detections),
        "max_gap": args.max_gap,
        "n_trees": args.n_trees,
        "max_depth": args.max_depth,
        "min_leaf": args.min_leaf,
        "seed": args.seed,
        "class_weight": args.class_weight,
        "max_samples": args.max_samples,
        "sample_seed": args.sample_seed,
    }
    out = client.post("/train/step2", payload)
    _write_model_doc(args.out, out["model"])
    print(
        f"trained step-2 model on {out['n_samples']} samples "
        f"({100 * out['positive_fraction']:.1f}% positive) -> {args.out}"
    )


def _tracks_from_response(out, detections):
    lookup = {d.detection_id: d for d in detections}
    return [TrackIO(**t).to_core(lookup) for t in out["tracks"]]


def _cmd_track(args, client: _Client):
    detections = read_detections(args.detections)
    payload = {
        "detections": [DetectionIO.from_core(d).model_dump() for d in detections],
        "model_step1": model_to_doc(load_model(args.model_step1)),
        "model_step2": model_to_doc(load_model(args.model_step2)),
        "settings": {
            "gate_radius_px": args.gate_radius_px,
            "accept_threshold": args.accept_threshold,
            "max_gap_frames": args.max_gap_frames,
        },
        "chunk_length_frames": args.chunk_frames,
        "workers": args.workers,
        "merge_gap_frames": args.merge_gap_frames,
        "stop_after_step1": args.step1_only,
    }
    out = client.post("/track", payload)
    tracks = _tracks_from_response(out, detections)
    write_tracks(args.out, tracks)
    print(f"wrote {len(tracks)} tracks -> {args.out}")


def _cmd_baseline(args, client: _Client):
    detections = read_detections(args.detections)
    payload = {
        "detections": [DetectionIO.from_core(d).model_dump() for d in detections],
        "max_gap_frames": args.max_gap_frames,
    }
    out = client.post("/baseline", payload)
    tracks = _tracks_from_response(out, detections)
    write_tracks(args.out, tracks)
    print(f"wrote {len(tracks)} baseline tracks -> {args.out}")


def _cmd_eval(args, client: _Client):
    detections = read_detections(args.detections)
    det_payload = [DetectionIO.from_core(d).model_dump() for d in detections]
    payload = {
        "tracks": _tracks_payload(args.tracks, detections),
        "truth": _truth_payload(args.truth, detections),
        "detections": det_payload,
    }
    out = client.post("/eval", payload)
    from .evaluation import EvalReport, render_report

    report = EvalReport(
        pct_incorrect_detection_ids=out["pct_incorrect_detection_ids"],
        pct_incorrect_track_ids=out["pct_incorrect_track_ids"],
        pct_complete_tracks=out["pct_complete_tracks"],
        pct_detections_deleted=out["pct_detections_deleted"],
        pct_tracks_with_deletion=out["pct_tracks_with_deletion"],
        n_insertions=out["n_insertions"],
        n_mismatches=out["n_mismatches"],
        track_length_histogram={int(k): v for k, v in out["track_length_histogram"].items()},
        gap_histogram={int(k): v for k, v in out["gap_histogram"].items()},
    )
    print(render_report(report))
    if args.out:
        _write_json(args.out, report.to_json_dict())


def _cmd_stats(args, client: _Client):
    detections = read_detections(args.detections)
    payload = {
        "tracks": _tracks_payload(args.tracks, detections),
        "detections": [DetectionIO.from_core(d).model_dump() for d in detections],
    }
    out = client.post("/stats", payload)
    doc = {
        "n_tracks": out["n_tracks"],
        "mean_track_length_frames": out["mean_track_length_frames"],
        "detection_weighted_mean_track_length_frames": out[
            "detection_weighted_mean_track_length_frames"
        ],
        "track_length_histogram": _sorted_hist(out["track_length_histogram"]),
        "gap_histogram": _sorted_hist(out["gap_histogram"]),
    }
    print(
        f"{doc['n_tracks']} tracks, mean length {doc['mean_track_length_frames']:.1f} frames "
        f"(detection-weighted {doc['detection_weighted_mean_track_length_frames']:.1f})"
    )
    if args.out:
        _write_json(args.out, doc)


def _cmd_serve(args, _client=None):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)


def _build_parser() -> _Parser:
    parser = _Parser(prog="beetrack", description=__doc__)
    parser.add_argument("--server", default=None, help="service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic detections + ground-truth dataset")
    p.add_argument("--n-bees", type=int, default=50)
    p.add_argument("--width-px", type=float, default=3000.0)
    p.add_argument("--height-px", type=float, default=3000.0)
    p.add_argument("--fps", type=float, default=3.0)
    p.add_argument("--duration-s", type=float, default=120.0)
    p.add_argument("--detect-prob", type=float, default=0.97)
    p.add_argument("--long-gap-rate", type=float, default=0.006)
    p.add_argument("--absence-mean-frames", type=float, default=90.0)
    p.add_argument("--bit-flip-prob", type=float, default=0.002)
    p.add_argument("--bit-noise-sd", type=float, default=0.215)
    p.add_argument("--false-positive-rate", type=float, default=0.005)
    p.add_argument("--speed-mean-px", type=float, default=20.0)
    p.add_argument("--turn-sd-rad", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-detections", required=True)
    p.add_argument("--out-truth", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-step1", help="train the detection-link scorer")
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--radius-px", type=float, default=200.0)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-weight", choices=["balanced"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_step1)

    p = sub.add_parser("train-step2", help="train the tracklet-merge scorer")
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--max-gap", type=int, default=14)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-weight", choices=["balanced"], default=None)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_step2)

    p = sub.add_parser("track", help="run the two-step tracker over a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--model-step1", required=True)
    p.add_argument("--model-step2", required=True)
    p.add_argument("--gate-radius-px", type=float, default=200.0)
    p.add_argument("--accept-threshold", type=float, default=0.5)
    p.add_argument("--max-gap-frames", type=int, default=14)
    p.add_argument("--chunk-frames", type=int, default=10800)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--merge-gap-frames", type=int, default=None)
    p.add_argument("--step1-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("baseline", help="chain detections by their hard-decoded IDs")
    p.add_argument("--detections", required=True)
    p.add_argument("--max-gap-frames", type=int, default=14)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("eval", help="score tracks against ground truth")
    p.add_argument("--tracks", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", default=None, help="also write the report as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="gap and track-length distributions of a tracks file")
    p.add_argument("--tracks", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is _cmd_serve:
            _cmd_serve(args)
            return 0
        client = _Client(args.server)
        args.func(args, client)
        return 0
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except BeetrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
