"""Acceptance suite: one test per shipping criterion, tolerances pinned.

Each test prints a single PASS line (run with ``pytest -s`` to see them all).
The end-to-end criteria use seeded synthetic datasets, so every number here
is reproducible bit for bit.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from beetrack.assignment import solve_assignment
from beetrack.core import (
    Track,
    Tracklet,
    angular_difference,
    assign_track_id,
    binarize_bits,
    bits_of_id,
    bitwise_median,
    manhattan_bits,
)
from beetrack.cli import main as cli_main
from beetrack.evaluation import evaluate, make_step1_samples, make_step2_samples
from beetrack.features import gate_candidates, step1_features, step2_features
from beetrack.pipeline import read_tracks, run_pipeline, write_detections
from beetrack.scoring import (
    ForestTrainConfig,
    LinearTrainConfig,
    logistic_gradient,
    logistic_loss,
    stratified_subsample,
    train_forest,
    train_linear,
)
from beetrack.synthgen import SynthConfig, corrupt_bits, generate
from beetrack.tracking import (
    TrackerConfig,
    track_baseline,
    track_step1,
    track_step2,
    tracklets_as_tracks,
    with_assigned_ids,
)

from conftest import make_detection, make_tracklet, make_truth
from test_evaluation import brute_force_step2_samples, track_of


def report(n, name, detail=""):
    print(f"ACCEPTANCE {n} ({name}): PASS {detail}")


# --- criterion 1: assignment vs brute force -------------------------------


def test_01_assignment_oracle():
    started = time.time()
    rng = np.random.default_rng(2024)
    perms_cache = {
        n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 8)
    }
    checked = 0
    for n in range(1, 8):
        perms = perms_cache[n]
        rows = np.arange(n)
        for _ in range(1000):
            probs = rng.random((n, n))
            totals = probs[rows, perms].sum(axis=1)
            best = totals.max()
            tied = perms[totals >= best - 1e-12]
            vec = min(map(tuple, tied))
            for threshold in (0.0, 0.5):
                keep = [(r, vec[r]) for r in range(n) if probs[r, vec[r]] >= threshold]
                want_total = sum(probs[r, c] for r, c in keep)
                got = solve_assignment(probs, threshold)
                got_total = sum(probs[r, c] for r, c in got)
                assert abs(got_total - want_total) <= 1e-9
                checked += 1
    elapsed = time.time() - started
    assert elapsed < 60.0
    report(1, "assignment oracle", f"({checked} matchings, {elapsed:.1f}s)")


# --- criterion 2: worked feature and bit-utility examples ------------------


def test_02_feature_oracles():
    # bit utilities
    assert binarize_bits([0.0] * 12) == 0
    assert binarize_bits([1.0] * 12) == 4095
    assert binarize_bits([1.0] + [0.0] * 11) == 2048
    d = [make_detection(i, bits=(v,) + (0.5,) * 11) for i, v in enumerate((0.9, 0.8, 0.1))]
    assert abs(bitwise_median(d)[0] - 0.8) <= 1e-9
    d = [make_detection(i, bits=(v,) + (0.5,) * 11) for i, v in enumerate((0.2, 0.6))]
    assert abs(bitwise_median(d)[0] - 0.4) <= 1e-9
    one = Track(0, (make_tracklet([make_detection(0, bits=(1.0,) * 12)]),))
    assert assign_track_id(one) == 4095
    vote = Track(
        0,
        (
            make_tracklet(
                [
                    make_detection(i, bits=(v,) + (0.0,) * 11, det_id=900 + i)
                    for i, v in enumerate((1.0, 1.0, 0.0))
                ]
            ),
        ),
    )
    assert assign_track_id(vote) == 2048

    # angular / manhattan closed forms
    assert abs(angular_difference(0.3, 0.3)) <= 1e-9
    assert abs(angular_difference(0.0, math.pi) - math.pi) <= 1e-9
    assert abs(angular_difference(-3.0, 3.0) - (2 * math.pi - 6.0)) <= 1e-9
    assert abs(manhattan_bits([1.0] * 12, [0.0] * 12) - 12.0) <= 1e-9
    a = (0.9, 0.1) + (0.5,) * 10
    b = (0.1, 0.9) + (0.5,) * 10
    assert abs(manhattan_bits(a, b) - 1.6) <= 1e-9

    # step-1 features
    s = step1_features(
        make_detection(0, 1.0, 2.0, 0.4, bits=(0.3,) * 12),
        make_detection(1, 1.0, 2.0, 0.4, bits=(0.3,) * 12),
    )
    assert s.as_tuple() == (0.0, 0.0, 0.0)
    s = step1_features(make_detection(0, 0.0, 0.0), make_detection(1, 3.0, 4.0))
    assert abs(s.euclidean_px - 5.0) <= 1e-9
    s = step1_features(
        make_detection(0, bits=(1.0,) * 12), make_detection(1, bits=(0.0,) * 12)
    )
    assert abs(s.id_manhattan - 12.0) <= 1e-9

    # gating boundaries
    center = make_detection(0, 0.0, 0.0)
    assert gate_candidates(center, [], 200.0) == []
    inside = make_detection(1, 199.9, 0.0)
    outside = make_detection(1, 200.1, 0.0)
    assert gate_candidates(center, [inside, outside], 200.0) == [inside]

    # step-2 features
    t1 = make_tracklet(
        [make_detection(0, 0.0, 0.0, det_id=910), make_detection(1, 1.0, 0.0, det_id=911)]
    )
    gap0 = make_tracklet([make_detection(2, 2.0, 0.0, det_id=912)], 1)
    assert abs(step2_features(t1, gap0).forward_error_px) <= 1e-9
    gap2 = make_tracklet([make_detection(4, 2.0, 0.0, det_id=913)], 1)
    assert abs(step2_features(t1, gap2).forward_error_px - 2.0) <= 1e-9
    c1 = make_tracklet([make_detection(0, bits=(0.9,) * 12, det_id=914)])
    c2 = make_tracklet([make_detection(1, bits=(0.9,) * 12, det_id=915)], 1)
    assert abs(step2_features(c1, c2).confidence_diff) <= 1e-9

    # per-bit median-vote error: exact binomial sum for 11 voters at p=0.15
    p = Fraction(15, 100)
    per_bit = sum(
        Fraction(math.comb(11, k)) * p**k * (1 - p) ** (11 - k) for k in range(6, 12)
    )
    assert abs(float(per_bit) - 0.0026568635802539063) <= 1e-15
    report(2, "feature oracles")


# --- criterion 3: median-ID voting vs binomial prediction ------------------


def test_03_median_vote_error_rate():
    started = time.time()
    p = Fraction(15, 100)
    per_bit = sum(
        Fraction(math.comb(11, k)) * p**k * (1 - p) ** (11 - k) for k in range(6, 12)
    )
    predicted = 1.0 - (1.0 - float(per_bit)) ** 12

    rng = np.random.default_rng(77)
    n_tracks = 10_000
    wrong = 0
    for i in range(n_tracks):
        marker = int(rng.integers(0, 4096))
        true_bits = np.array(bits_of_id(marker))
        dets = [
            make_detection(
                f, bits=tuple(corrupt_bits(true_bits, 0.15, 0.0, rng)), det_id=i * 16 + f
            )
            for f in range(11)
        ]
        track = Track(0, (Tracklet(0, tuple(dets)),))
        if assign_track_id(track) != marker:
            wrong += 1
    measured = wrong / n_tracks
    assert abs(measured - predicted) <= 0.5 * predicted
    elapsed = time.time() - started
    assert elapsed < 60.0
    report(
        3,
        "median-ID voting",
        f"(measured {100 * measured:.2f}% vs predicted {100 * predicted:.2f}%, {elapsed:.1f}s)",
    )


# --- criterion 4: perfect-scorer reconstruction ----------------------------


def test_04_perfect_scorer_reconstruction():
    cfg = SynthConfig(
        n_bees=50,
        duration_s=120.0,
        detect_prob=0.98,
        long_gap_rate=0.0,
        false_positive_rate=0.0,
        seed=404,
    )
    truth, dets = generate(cfg)
    assert all(g <= 14 for t in truth for g in t.gaps())
    owner = {d.detection_id: i for i, t in enumerate(truth) for d in t.detections}

    class OracleStep1:
        def matrix(self, tails, cands, dist):
            return np.array(
                [
                    [float(owner[a.detection_id] == owner[b.detection_id]) for b in cands]
                    for a in tails
                ]
            )

    class OracleStep2:
        def matrix(self, tails, cands, dist=None):
            return np.array(
                [
                    [
                        float(
                            owner[a.detections[0].detection_id]
                            == owner[b.detections[0].detection_id]
                        )
                        for b in cands
                    ]
                    for a in tails
                ]
            )

    tracker_cfg = TrackerConfig()
    tracklets = track_step1(dets, OracleStep1(), tracker_cfg)
    tracks = with_assigned_ids(track_step2(tracklets, OracleStep2(), tracker_cfg))
    got = sorted(tuple(sorted(d.detection_id for d in t.detections)) for t in tracks)
    want = sorted(tuple(sorted(d.detection_id for d in t.detections)) for t in truth)
    assert got == want
    r = evaluate(tracks, truth)
    assert r.pct_complete_tracks == 100.0
    report(4, "perfect-scorer reconstruction", f"({len(truth)} tracks)")


# --- criterion 5: end-to-end metric ordering -------------------------------

E2E_GEOMETRY = dict(detect_prob=0.93, width_px=3600.0, height_px=3600.0)
E2E_TRAIN = SynthConfig(n_bees=40, duration_s=90.0, seed=101, **E2E_GEOMETRY)
E2E_EVAL = SynthConfig(n_bees=100, duration_s=120.0, seed=202, **E2E_GEOMETRY)


def test_05_end_to_end_ordering():
    started = time.time()
    truth_train, _ = generate(E2E_TRAIN)
    model1 = train_linear(make_step1_samples(truth_train), LinearTrainConfig())
    step2_samples = stratified_subsample(make_step2_samples(truth_train), 120_000, 0)
    model2 = train_forest(
        step2_samples, ForestTrainConfig(n_trees=40, max_depth=14, min_leaf=4, seed=7)
    )

    truth, dets = generate(E2E_EVAL)
    hard_err = np.mean(
        [binarize_bits(d.bits) != t.true_id for t in truth for d in t.detections]
    )
    assert 0.11 <= hard_err <= 0.16  # calibrated decode-error band

    cfg = TrackerConfig()
    baseline = with_assigned_ids(track_baseline(dets, cfg))
    tracklets = track_step1(dets, model1, cfg)
    step1_tracks = with_assigned_ids(tracklets_as_tracks(tracklets))
    step2_tracks = with_assigned_ids(track_step2(tracklets, model2, cfg))

    r_base = evaluate(baseline, truth)
    r_s1 = evaluate(step1_tracks, truth)
    r_s2 = evaluate(step2_tracks, truth)

    assert (
        r_base.pct_incorrect_detection_ids
        > r_s1.pct_incorrect_detection_ids
        > r_s2.pct_incorrect_detection_ids
    )
    assert r_s2.pct_incorrect_detection_ids <= 6.0
    assert (
        r_base.pct_complete_tracks < r_s1.pct_complete_tracks < r_s2.pct_complete_tracks
    )

    # completion among tracks whose gaps are all within the merge horizon
    trackable = [t for t in truth if all(g <= cfg.max_gap_frames for g in t.gaps())]
    pred_sets = {frozenset(d.detection_id for d in t.detections) for t in step2_tracks}
    complete = sum(
        1 for t in trackable if frozenset(d.detection_id for d in t.detections) in pred_sets
    )
    assert complete / len(trackable) >= 0.60

    elapsed = time.time() - started
    assert elapsed < 600.0
    report(
        5,
        "end-to-end ordering",
        f"(det-ID err {r_base.pct_incorrect_detection_ids:.1f}% > "
        f"{r_s1.pct_incorrect_detection_ids:.2f}% > {r_s2.pct_incorrect_detection_ids:.3f}%; "
        f"complete {r_base.pct_complete_tracks:.1f}% < {r_s1.pct_complete_tracks:.1f}% < "
        f"{r_s2.pct_complete_tracks:.1f}%; {elapsed:.0f}s)",
    )


# --- criterion 6: sample-generation oracle ---------------------------------


def test_06_sample_generation_oracle():
    rng = np.random.default_rng(606)
    truth = []
    for i in range(8):
        frames = sorted(rng.choice(30, size=int(rng.integers(2, 18)), replace=False))
        dets = [
            make_detection(
                f,
                rng.uniform(0, 350),
                rng.uniform(0, 350),
                rng.uniform(-3, 3),
                bits=tuple(rng.random(12)),
            )
            for f in frames
        ]
        truth.append(make_truth(i + 1, dets))

    got1 = make_step1_samples(truth, radius_px=180.0)
    owner = {d.detection_id: i for i, t in enumerate(truth) for d in t.detections}
    flat = [d for t in truth for d in t.detections]
    want1 = sorted(
        (step1_features(a, b).as_tuple(), owner[a.detection_id] == owner[b.detection_id])
        for a in flat
        for b in flat
        if b.frame_index == a.frame_index + 1
        and math.hypot(b.x_px - a.x_px, b.y_px - a.y_px) <= 180.0
    )
    assert sorted((s.features, s.label) for s in got1) == want1

    got2 = make_step2_samples(truth)
    want2 = brute_force_step2_samples(truth)
    assert len(got2) == len(want2)
    assert sorted((s.features, s.label) for s in got2) == sorted(want2)
    got_frac = sum(s.label for s in got2) / len(got2)
    want_frac = sum(l for _, l in want2) / len(want2)
    assert got_frac == pytest.approx(want_frac, abs=1e-12)
    report(
        6,
        "sample-generation oracle",
        f"({len(got1)} step-1, {len(got2)} step-2 samples, {100 * got_frac:.1f}% positive)",
    )


# --- criterion 7: evaluation fixtures --------------------------------------


def test_07_evaluation_fixtures():
    def bee(marker, frames, x0=0.0):
        return [
            make_detection(f, x0 + 10.0 * f, 0.0, bits=bits_of_id(marker)) for f in frames
        ]

    # 10-detection truth with one deletion
    dets = bee(3, range(10))
    truth = [make_truth(3, dets)]
    r = evaluate([track_of(dets[:5] + dets[6:], 0, assigned_id=3)], truth)
    assert r.pct_detections_deleted == pytest.approx(10.0, abs=1e-9)
    assert r.pct_complete_tracks == 0.0
    assert r.pct_tracks_with_deletion == 100.0

    # perfect prediction
    r = evaluate([track_of(dets, 0, assigned_id=3)], truth)
    assert r.pct_complete_tracks == 100.0
    assert r.pct_detections_deleted == 0.0
    assert (r.n_insertions, r.n_mismatches) == (0, 0)

    # composite fixture with hand-counted errors:
    #   bee 3: frames 0..9, its frame-5 detection replaced by bee 9's and
    #          left behind as a singleton fragment
    #   bee 9: frames 5..7, remainder predicted separately
    a = bee(3, range(10))
    b = bee(9, (5, 6, 7), x0=999.0)
    truth = [make_truth(3, a), make_truth(9, b)]
    pred = [
        track_of(a[:5] + [b[0]] + a[6:], 0, assigned_id=3),
        track_of(b[1:], 1, assigned_id=9),
        track_of([a[5]], 2, assigned_id=3),
    ]
    r = evaluate(pred, truth)
    assert r.n_mismatches == 1  # bee 3 frame 5: wrong detection present
    assert r.n_insertions == 1  # bee 9's detection inside bee 3's track
    assert r.pct_detections_deleted == pytest.approx(100.0 * 2 / 13, abs=1e-9)
    assert r.pct_tracks_with_deletion == pytest.approx(100.0, abs=1e-9)
    assert r.pct_complete_tracks == 0.0
    # bee 9's stolen detection sits in a track assigned ID 3
    assert r.pct_incorrect_detection_ids == pytest.approx(100.0 * 1 / 13, abs=1e-9)
    report(7, "evaluation fixtures")


# --- criterion 8: CLI determinism and parallel safety -----------------------


def test_08_cli_determinism(tmp_path):
    def run(args):
        assert cli_main([str(a) for a in args]) == 0

    synth_flags = [
        "--n-bees", 15, "--width-px", 1500, "--height-px", 1500,
        "--duration-s", 60, "--seed", 808,
    ]
    d1, t1 = tmp_path / "d1.jsonl", tmp_path / "t1.jsonl"
    d2, t2 = tmp_path / "d2.jsonl", tmp_path / "t2.jsonl"
    run(["synth", *synth_flags, "--out-detections", d1, "--out-truth", t1])
    run(["synth", *synth_flags, "--out-detections", d2, "--out-truth", t2])
    assert d1.read_bytes() == d2.read_bytes()
    assert t1.read_bytes() == t2.read_bytes()

    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    run(["train-step1", "--detections", d1, "--truth", t1, "--out", m1])
    run(
        [
            "train-step2", "--detections", d1, "--truth", t1,
            "--n-trees", 12, "--max-depth", 10, "--min-leaf", 4, "--out", m2,
        ]
    )

    track_flags = [
        "track", "--detections", d1, "--model-step1", m1, "--model-step2", m2,
        "--chunk-frames", 60,
    ]
    w1a, w1b, w8 = tmp_path / "w1a.jsonl", tmp_path / "w1b.jsonl", tmp_path / "w8.jsonl"
    run(track_flags + ["--workers", 1, "--out", w1a])
    run(track_flags + ["--workers", 1, "--out", w1b])
    run(track_flags + ["--workers", 8, "--out", w8])
    assert w1a.read_bytes() == w1b.read_bytes()
    assert w1a.read_bytes() == w8.read_bytes()

    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    run(["eval", "--tracks", w1a, "--truth", t1, "--detections", d1, "--out", r1])
    run(["eval", "--tracks", w8, "--truth", t1, "--detections", d1, "--out", r2])
    assert r1.read_bytes() == r2.read_bytes()
    report(8, "determinism and parallel safety")


# --- criterion 9: gradient check --------------------------------------------


def test_09_gradient_check():
    rng = np.random.default_rng(909)
    X = rng.normal(size=(100, 6))
    y = (rng.random(100) > 0.5).astype(float)
    w = rng.normal(size=6)
    b = float(rng.normal())
    gw, gb = logistic_gradient(w, b, X, y, l2=0.01)
    h = 1e-6
    worst = 0.0
    for i in range(6):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wm[i] -= h
        fd = (logistic_loss(wp, b, X, y, 0.01) - logistic_loss(wm, b, X, y, 0.01)) / (2 * h)
        rel = abs(fd - gw[i]) / max(1.0, abs(fd))
        worst = max(worst, rel)
        assert rel <= 1e-5
    fd_b = (logistic_loss(w, b + h, X, y, 0.01) - logistic_loss(w, b - h, X, y, 0.01)) / (2 * h)
    assert abs(fd_b - gb) / max(1.0, abs(fd_b)) <= 1e-5
    report(9, "gradient check", f"(worst rel err {worst:.1e})")


# --- criterion 10: hourly chunk merge ---------------------------------------


def test_10_chunk_merge(tmp_path):
    started = time.time()
    train_cfg = SynthConfig(
        n_bees=16, duration_s=60.0, width_px=1500.0, height_px=1500.0, seed=303
    )
    truth_train, _ = generate(train_cfg)
    model1 = train_linear(make_step1_samples(truth_train), LinearTrainConfig())
    model2 = train_forest(
        make_step2_samples(truth_train),
        ForestTrainConfig(n_trees=15, max_depth=10, min_leaf=4, seed=5),
    )

    cfg = SynthConfig(
        n_bees=6,
        duration_s=7200.0,  # two hours at 3 fps
        detect_prob=0.99,
        long_gap_rate=0.0,
        false_positive_rate=0.0,
        bit_flip_prob=0.001,
        bit_noise_sd=0.1,
        seed=1010,
    )
    truth, dets = generate(cfg)
    assert len(truth) == 6  # every bee continuously present
    boundary = 10800

    det_path = tmp_path / "twohours.jsonl"
    write_detections(det_path, dets)
    tracks = run_pipeline(
        det_path,
        model1,
        model2,
        TrackerConfig(),
        out_path=tmp_path / "tracks.jsonl",
        chunk_length_frames=10800,
        workers=2,
    )
    again = read_tracks(tmp_path / "tracks.jsonl", dets)
    assert [t.track_id for t in again] == [t.track_id for t in tracks]

    for t in truth:
        ids = {d.detection_id for d in t.detections}
        holders = [tr for tr in tracks if ids & {d.detection_id for d in tr.detections}]
        spanning = [tr for tr in holders if tr.start_frame < boundary <= tr.end_frame]
        assert len(spanning) == 1
        assert spanning[0].assigned_id == t.true_id
    elapsed = time.time() - started
    report(10, "hourly chunk merge", f"({len(tracks)} tracks, {elapsed:.0f}s)")
