"""HTTP service wrapping the tracking library.

The service is stateless: models travel inside requests as their JSON
documents and every endpoint is a pure function of its payload, so multiple
clients can share one instance and results stay reproducible.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import BeetrackError, InternalError
from ..evaluation import (
    evaluate,
    make_step1_samples,
    make_step2_samples,
    track_length_stats,
    tracks_gap_histogram,
)
from ..pipeline import run_chunked, ChunkPlan
from ..scoring import (
    ForestTrainConfig,
    LinearTrainConfig,
    model_from_doc,
    model_to_doc,
    stratified_subsample,
    train_forest,
    train_linear,
)
from ..synthgen import generate
from ..tracking import (
    TrackerConfig,
    track_baseline,
    track_step1,
    tracklets_as_tracks,
    with_assigned_ids,
)
from .schemas import (
    BaselineRequest,
    DetectionIO,
    EvalReportIO,
    EvalRequest,
    HealthResponse,
    ModelResponse,
    StatsRequest,
    StatsResponse,
    SynthRequest,
    SynthResponse,
    TrackIO,
    TrackRequest,
    TracksResponse,
    TrainStep1Request,
    TrainStep2Request,
    TruthTrackIO,
)


def _lookup(detections):
    out = {}
    for d in detections:
        out[d.detection_id] = d
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="beetrack", version=__version__)

    @app.exception_handler(BeetrackError)
    def _domain_error(request: Request, exc: BeetrackError):
        status = 500 if isinstance(exc, InternalError) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        truth, detections = generate(req.config.to_core())
        return SynthResponse(
            detections=[DetectionIO.from_core(d) for d in detections],
            truth=[TruthTrackIO.from_core(t) for t in truth],
        )

    @app.post("/train/step1", response_model=ModelResponse)
    def train_step1(req: TrainStep1Request):
        lookup = _lookup(d.to_core() for d in req.detections)
        truth = [t.to_core(lookup) for t in req.truth]
        samples = make_step1_samples(truth, radius_px=req.radius_px)
        model = train_linear(
            samples,
            LinearTrainConfig(
                l2=req.l2, epochs=req.epochs, lr=req.lr, seed=req.seed,
                class_weight=req.class_weight,
            ),
        )
        n_pos = sum(1 for s in samples if s.label)
        return ModelResponse(
            model=model_to_doc(model),
            n_samples=len(samples),
            positive_fraction=n_pos / len(samples) if samples else 0.0,
        )

    @app.post("/train/step2", response_model=ModelResponse)
    def train_step2(req: TrainStep2Request):
        lookup = _lookup(d.to_core() for d in req.detections)
        truth = [t.to_core(lookup) for t in req.truth]
        samples = make_step2_samples(truth, max_gap=req.max_gap)
        n_pos = sum(1 for s in samples if s.label)
        training = stratified_subsample(samples, req.max_samples, req.sample_seed)
        model = train_forest(
            training,
            ForestTrainConfig(
                n_trees=req.n_trees,
                max_depth=req.max_depth,
                min_leaf=req.min_leaf,
                seed=req.seed,
                class_weight=req.class_weight,
            ),
        )
        return ModelResponse(
            model=model_to_doc(model),
            n_samples=len(samples),
            positive_fraction=n_pos / len(samples) if samples else 0.0,
        )

    @app.post("/track", response_model=TracksResponse)
    def track(req: TrackRequest):
        detections = [d.to_core() for d in req.detections]
        cfg = req.settings.to_core()
        model1 = model_from_doc(req.model_step1)
        if req.stop_after_step1:
            tracks = with_assigned_ids(
                tracklets_as_tracks(track_step1(detections, model1, cfg))
            )
        else:
            model2 = model_from_doc(req.model_step2)
            tracks = run_chunked(
                detections,
                model1,
                model2,
                cfg,
                workers=req.workers,
                merge_gap_frames=req.merge_gap_frames,
                plan=_plan_for(detections, req.chunk_length_frames),
            )
        return TracksResponse(tracks=[TrackIO.from_core(t) for t in tracks])

    @app.post("/baseline", response_model=TracksResponse)
    def baseline(req: BaselineRequest):
        detections = [d.to_core() for d in req.detections]
        cfg = TrackerConfig(max_gap_frames=req.max_gap_frames)
        tracks = with_assigned_ids(track_baseline(detections, cfg))
        return TracksResponse(tracks=[TrackIO.from_core(t) for t in tracks])

    @app.post("/eval", response_model=EvalReportIO)
    def eval_tracks(req: EvalRequest):
        lookup = _lookup(d.to_core() for d in req.detections)
        predicted = [t.to_core(lookup) for t in req.tracks]
        truth = [t.to_core(lookup) for t in req.truth]
        report = evaluate(predicted, truth)
        return EvalReportIO(
            pct_incorrect_detection_ids=report.pct_incorrect_detection_ids,
            pct_incorrect_track_ids=report.pct_incorrect_track_ids,
            pct_complete_tracks=report.pct_complete_tracks,
            pct_detections_deleted=report.pct_detections_deleted,
            pct_tracks_with_deletion=report.pct_tracks_with_deletion,
            n_insertions=report.n_insertions,
            n_mismatches=report.n_mismatches,
            track_length_histogram=report.track_length_histogram,
            gap_histogram=report.gap_histogram,
        )

    @app.post("/stats", response_model=StatsResponse)
    def stats(req: StatsRequest):
        lookup = _lookup(d.to_core() for d in req.detections)
        tracks = [t.to_core(lookup) for t in req.tracks]
        info = track_length_stats(tracks)
        return StatsResponse(
            n_tracks=info["n_tracks"],
            track_length_histogram=info["track_length_histogram"],
            gap_histogram=tracks_gap_histogram(tracks),
            mean_track_length_frames=info["mean_track_length_frames"],
            detection_weighted_mean_track_length_frames=info[
                "detection_weighted_mean_track_length_frames"
            ],
        )

    return app


def _plan_for(detections, chunk_length_frames):
    if not detections:
        return None
    frames = [d.frame_index for d in detections]
    return ChunkPlan.cover(min(frames), max(frames), chunk_length_frames)
