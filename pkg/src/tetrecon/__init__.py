"""Multi-view 3D reconstruction with collections of tetrahedral spheres.

The pipeline: carve a visual hull from silhouettes, place spheres by
solving a coverage problem, then deform every sphere's tet mesh under a
differentiable rendering loss regularized by a biharmonic term on the
deformation-gradient field and a non-inversion penalty.
"""

__version__ = "0.1.0"

from .deformation import (
    biharmonic_energy,
    build_laplacian,
    count_inverted,
    deformation_gradients,
    geometric_energy_gradient,
    inversion_penalty,
    rest_inverses,
)
from .initialization import (
    CoverageProblem,
    VoxelGrid,
    build_coverage_problem,
    carve_visual_hull,
    distance_transform,
    initialize_spheres,
    load_init_json,
    solve_set_cover_exact,
    solve_set_cover_greedy,
    write_init_json,
)
from .metrics import (
    MetricReport,
    area_length_ratio,
    cc_diff,
    chamfer,
    connected_components,
    edge_chamfer,
    edge_f_score,
    f_score,
    icp_align,
    manifoldness_check,
    normal_consistency,
    sample_surface_points,
    sharp_edge_points,
    volume_iou,
)
from .optimizer import (
    OptimState,
    ReconstructionConfig,
    adam_step,
    cosine_weight_schedule,
    load_config,
    reconstruct,
)
from .renderer import (
    Camera,
    LossWeights,
    RenderConfig,
    View,
    load_cameras,
    load_views,
    look_at_camera,
    project,
    render_depth,
    render_loss_and_grad,
    render_normal,
    render_silhouette_soft,
    save_camera_file,
)
from .tet_mesh import (
    MeshError,
    SurfaceMesh,
    TetMesh,
    TetSphereSet,
    boundary_faces,
    boundary_vertex_indices,
    generate_unit_tetsphere,
    instantiate_spheres,
    load_obj,
    load_tetmesh,
    save_obj,
    save_tetmesh,
    signed_volumes,
    topology_fingerprint,
    union_surfaces,
    union_vertex_owners,
)
