"""Tangency-aware surface reconstruction from signed-distance samples."""

from .baseline import GridField, extract_baseline, marching_cubes, marching_squares
from .driver import (
    ReconstructionAborted,
    RunReport,
    converged,
    reconstruct,
    reconstruct_with_resampling,
)
from .fileio import (
    normalize_mesh,
    read_obj,
    read_samples,
    write_obj,
    write_samples,
)
from .flow import (
    Correspondences,
    FlowSystem,
    apply_variant_mask,
    compute_correspondences,
    compute_mass_matrix,
    flow_step,
    sdf_energy,
    select_batch,
    step_size,
)
from .mesh import (
    ReconstructionConfig,
    SdfSampleSet,
    SurfaceMesh,
    ValidityReport,
    make_circle,
    make_icosphere,
    validate,
)
from .metrics import MetricReport, chamfer, evaluate, hausdorff
from .remesh import ActiveRegion, compute_active_region, full_region, remesh
from .sampling import (
    GridSpec,
    add_noise,
    clamp_samples,
    propose_new_samples,
    sample_grid,
    sample_pointcloud,
)
from .spatial import (
    Bvh,
    ClosestPointBatch,
    ClosestPointResult,
    batch_closest_points,
    batch_signed_distance,
    batch_signed_distance_arrays,
    brute_force_closest,
    build_bvh,
    closest_point,
    signed_distance,
    winding_numbers,
)

__version__ = "0.1.0"
