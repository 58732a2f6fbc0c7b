"""Same-die detection and clustering of coins from 3D point clouds.

Clouds are millimetre-scale scans.  The pipeline registers every pair of
coins, summarizes each aligned pair by a histogram of nearest-neighbor
distances, turns that into a same-die probability with a logistic model,
and groups coins by die as connected components of the thresholded
probability graph.
"""
from .geometry import PointCloud, RigidTransform, SpatialIndex, estimate_normals, exclude_border, voxel_downsample
from .icp import IcpConfig, RegistrationResult, icp, kabsch_solve
from .globalreg import GlobalConfig, global_register
from .metric import DistanceHistogram, LogisticModel, distance_map, histogram, predict, train
from .clustering import ProbabilityMatrix, adjusted_rand_index, cluster_pipeline, threshold_graph
from .io import PipelineConfig, load_cloud, save_cloud

__version__ = "0.1.0"
