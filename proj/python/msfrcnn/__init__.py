"""Multi-scale Faster R-CNN face detector: toy data, detection and evaluation."""

from ._core import Detector, evaluate, gradcheck, iou, nms, run_cli, toy_dataset

__all__ = ["Detector", "evaluate", "gradcheck", "iou", "nms", "run_cli", "toy_dataset"]
