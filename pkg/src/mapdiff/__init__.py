"""Map update pipeline: find newly built and removed roads and buildings
by comparing old and new satellite imagery against the existing base map.
"""

from .buildings import (
    SegRaster,
    building_mask,
    compare_segmentation,
    extract_polygons,
    rasterize_rings,
    ring_area,
)
from .core import (
    CHANNEL_WIDTH,
    N_CHANNELS,
    ConfidenceTensor,
    GeoTransform,
    Proposal,
    RasterImage,
    RoadGraph,
    RoadGraphBuilder,
    angle_center,
    angular_distance,
    bbox_of_points,
    bboxes_intersect,
    channel_of_angle,
    empty_graph,
    pad_bbox,
)
from .evaluation import GroundTruthSet, PRPoint, apls, match_proposals, pr_curve
from .filtering import (
    FilterConfig,
    MockScorer,
    PairExample,
    Scorer,
    SubprocessScorer,
    example_from_tensor,
    export_dataset,
    filter_proposals,
    make_scorer,
    mask_from_subgraph,
    sample_training_pair,
    score_proposal,
)
from .formats import (
    decode_ctns,
    decode_error_frame,
    encode_ctns,
    encode_error_frame,
    graph_from_geojson,
    graph_to_geojson,
    proposals_from_geojson,
    proposals_to_geojson,
    read_ctns,
    read_frame,
    write_ctns,
    write_frame,
)
from .graphops import (
    SubgraphSelection,
    bfs_subgraph,
    connected_components_of_difference,
    densify,
    edge_angles_at,
    point_segment_distance,
    points_segment_distance,
    prune_near_map,
)
from .pipeline import (
    PipelineConfig,
    config_from_ini,
    config_hash,
    run_eval,
    run_sample_pairs,
    run_update,
    trace_tiled,
)
from .synth import Scene, SceneParams, generate_scene, load_scene, scene_ground_truth, write_scene
from .tracing import (
    Decision,
    TraceResult,
    TracingConfig,
    sample_all_channels,
    sample_confidence,
    trace_changes,
    write_decision_log,
)

__version__ = "0.1.0"
