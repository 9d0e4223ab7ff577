"""Encodings from raw task annotations into dense maps and back."""

from .keypoints import AffineMap, decode_keypoints, encode_keypoints
from .counting import count_from_density, make_exemplar_guide
from .clicks import make_click_guide, render_gaussian_mixture, sample_click_centers
from .pose import PoseProblem, solve_pnp, solve_pnp_points, texture_from_pose
from .flow import FlowLabel, decode_flow, flow_labels, instance_center
from .video import video_support

__all__ = [
    "AffineMap",
    "encode_keypoints",
    "decode_keypoints",
    "count_from_density",
    "make_exemplar_guide",
    "sample_click_centers",
    "render_gaussian_mixture",
    "make_click_guide",
    "PoseProblem",
    "texture_from_pose",
    "solve_pnp",
    "solve_pnp_points",
    "FlowLabel",
    "flow_labels",
    "decode_flow",
    "instance_center",
    "video_support",
]
