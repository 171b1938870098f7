"""Confidence calibration of object detectors before and after box suppression."""

__version__ = "0.1.0"

from .calibration import HistogramCalibrator
from .dataset_io import Detection, GroundTruthObject, ImageInfo, load_detections, load_ground_truth
from .experiment import ExperimentConfig, calibrate_then_nms, run_experiment, split
from .geometry import BoundingBox, iou, normalize
from .matching import MatchConfig, match
from .metrics import BinningScheme, compute_d_ece, detection_calibration_error, position_heatmap, reliability_data
from .postprocess import ConfidenceThreshold, Nms, PipelineConfig, TopK, nms, run_pipeline, top_k
from .samples import FeatureSubset, MatchedSample, SampleSet

__all__ = [
    "BinningScheme", "BoundingBox", "ConfidenceThreshold", "Detection", "ExperimentConfig",
    "FeatureSubset", "GroundTruthObject", "HistogramCalibrator", "ImageInfo", "MatchConfig",
    "MatchedSample", "Nms", "PipelineConfig", "SampleSet", "TopK", "calibrate_then_nms",
    "compute_d_ece", "detection_calibration_error", "iou", "load_detections", "load_ground_truth",
    "match", "nms", "normalize", "position_heatmap", "reliability_data", "run_experiment",
    "run_pipeline", "split", "top_k",
]
