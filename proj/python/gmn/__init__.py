"""Count repeated objects in an image from a single exemplar box."""

from ._gmn import (
    DEFAULT_THRESHOLD,
    DENSITY_SCALE,
    GmnError,
    InvalidArgument,
    Model,
    NotFound,
    ParseError,
    count_from_map,
    crowd_class,
    exemplar_scale,
    match_detections,
    render_density,
    select_threshold,
    synthetic_scene,
)

__all__ = [
    "DEFAULT_THRESHOLD",
    "DENSITY_SCALE",
    "GmnError",
    "InvalidArgument",
    "Model",
    "NotFound",
    "ParseError",
    "count_from_map",
    "crowd_class",
    "exemplar_scale",
    "match_detections",
    "render_density",
    "select_threshold",
    "synthetic_scene",
]
