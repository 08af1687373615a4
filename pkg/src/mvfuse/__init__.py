"""Multi-camera annotation fusion.

Lifts human-annotated 2D bounding boxes and pose keypoints from calibrated
cameras into 3D tracks — position, velocity, ellipsoid extent, and skeleton
keypoints per object — and scores tracks against ground truth.
"""

__version__ = "0.1.0"

from .errors import (
    CholeskyFailure,
    DegenerateConic,
    DegenerateHomography,
    DimensionMismatch,
    EmptyGroundTruth,
    FilterError,
    GeometryError,
    InvalidDt,
    InvalidSpec,
    MvfuseError,
    NonPositiveDepth,
    NoObservation,
    ParseError,
    PointAtInfinity,
    SigmaPointProjectionFailure,
    SingularInnovation,
    TrackingError,
    ValidationError,
)
from .filter import (
    GaussianBelief,
    MotionModel,
    SigmaSet,
    kalman_predict,
    make_motion_model,
    sigma_points,
    ukf_update,
    unscented_transform,
)
from .geometry import (
    BBox,
    CameraModel,
    Ellipsoid,
    backproject_ground,
    feet_point,
    ground_homography,
    project_ellipsoid_to_bbox,
    project_point,
)
from .io import (
    RunConfig,
    SceneBundle,
    load_annotations,
    load_calibration,
    load_config,
    load_scene,
    load_skeleton,
    load_tracks,
    save_annotations,
    save_calibration,
    save_config,
    save_tracks,
)
from .metrics import (
    ClearMotResult,
    MetricReport,
    PoseMetrics,
    TrackSet,
    clear_mot,
    evaluate_tracks,
    idf1,
    ospa2,
    pose_metrics,
)
from .pose import (
    CanonicalPose,
    KeypointState,
    canonical_pose,
    init_keypoints,
    keypoint_positions,
    scaled_offsets,
    track_keypoints,
)
from .synth import Occlusion, SceneSpec, generate
from .tracker import (
    AnnotationFrame,
    Diagnostic,
    ObjectState,
    Track,
    TrackEntry,
    bbox_measurement,
    extract_estimates,
    init_target,
    run_all,
    state_to_ellipsoid,
    track_object,
)

__all__ = [name for name in dir() if not name.startswith("_")]
