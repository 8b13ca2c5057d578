import numpy as np
import pytest

from beetrack.core import Detection, GroundTruthTrack, Tracklet
from beetrack.scoring import DecisionTree, ForestModel, LinearModel

HALF_BITS = tuple([0.5] * 12)

_next_id = [0]


def make_detection(
    frame,
    x=0.0,
    y=0.0,
    theta=0.0,
    bits=HALF_BITS,
    det_id=None,
    ts=None,
    cam=0,
):
    if det_id is None:
        _next_id[0] += 1
        det_id = 1_000_000 + _next_id[0]
    return Detection(
        detection_id=det_id,
        frame_index=frame,
        timestamp=frame / 3.0 if ts is None else ts,
        cam_id=cam,
        x_px=float(x),
        y_px=float(y),
        orientation_rad=float(theta),
        bits=bits,
    )


def make_tracklet(dets, tracklet_id=0):
    return Tracklet(tracklet_id=tracklet_id, detections=tuple(dets))


def make_truth(true_id, dets):
    return GroundTruthTrack(true_id=true_id, detections=tuple(dets))


@pytest.fixture
def D():
    return make_detection


@pytest.fixture
def geom_linear_model():
    """Hand-built step-1 scorer: probability falls with distance only.

    p = sigmoid(5 - 0.1 * euclidean); 0.993 at distance 0, 0.5 at 50 px,
    effectively 0 beyond 150 px.
    """
    return LinearModel(
        weights=np.array([-0.1, 0.0, 0.0]),
        bias=5.0,
        feature_means=np.array([0.0, 0.0, 0.0]),
        feature_stds=np.array([1.0, 1.0, 1.0]),
    )


@pytest.fixture
def always_merge_forest():
    """Single-leaf forest answering probability 1.0 for every valid pair."""
    leaf = DecisionTree([-1], [0.0], [-1], [-1], [1.0])
    return ForestModel(trees=(leaf,), n_features=6, seed=0)


@pytest.fixture
def distance_forest():
    """Single-split forest: merge when the boundary distance is <= 150 px."""
    tree = DecisionTree(
        feature=[1, -1, -1],
        threshold=[150.0, 0.0, 0.0],
        left=[1, -1, -1],
        right=[2, -1, -1],
        value=[0.0, 1.0, 0.0],
    )
    return ForestModel(trees=(tree,), n_features=6, seed=0)
