"""Grapevine inflorescence segmentation and flower counting."""
from .flowers import Circle, DetectorParams, detect_flowers, select_circles
from .metrics import build_report, eoa_stats, fit_linear, iou, match_flowers, precision_recall_f1
from .network import Network, build_network, fcn_spec, propagate_shapes, random_weights, segment_patch
from .tiler import plan_tiles, render_heatmap, segment_full_image
from .weights import read_weights, write_weights

__all__ = [
    "Circle", "DetectorParams", "detect_flowers", "select_circles",
    "build_report", "eoa_stats", "fit_linear", "iou", "match_flowers", "precision_recall_f1",
    "Network", "build_network", "fcn_spec", "propagate_shapes", "random_weights", "segment_patch",
    "plan_tiles", "render_heatmap", "segment_full_image",
    "read_weights", "write_weights",
]
