"""Resolution-agnostic LiDAR-camera BEV proposal toolkit.

The deterministic pipeline: KITTI ingestion, column-voxel Gaussian encoding
with camera sampling coordinates, resolution-degradation augmentation,
anchor-free target maps, reference losses, proposal decoding and BEV average
precision.
"""

from .geometry import (Calibration, ConfigurationError, ContractViolation,
                       GridSpec, bev_index, default_input_grid,
                       default_output_grid, project_to_image, voxel_center)
from .kitti import (CAR, CYCLIST, PEDESTRIAN, GroundTruthObject, PointCloud,
                    estimate_layers, map_nuscenes_class, read_calibration,
                    read_labels, read_velodyne)
from .voxels import EncodedSample, VoxelFeature, encode_sample, main_point, ndt_encode, voxelize
from .targets import TargetMaps, encode_targets, gaussian_radius
from .losses import LossBreakdown, focal_loss, reg_loss, smooth_l1, total_loss
from .decode import Proposal, decode_maps, decode_proposals, find_peaks
from .evaluate import EvalResult, average_precision, evaluate_detections, iou_aabb, match_detections
from .exchange import SampleManifest, TensorRecord, read_tensor, write_tensor
from .config import PipelineConfig

__version__ = "0.1.0"
