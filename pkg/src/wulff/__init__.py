"""Simulation laboratory for the near-critical planar Ising droplet and
its random-cluster representation."""

from .lattice import (
    BlockGrid,
    DualEdge,
    Lattice,
    blockify,
    build_box,
    dual_edge,
    linf_components,
    linf_diameter,
    linf_neighborhood,
)
from .model import (
    BETA_C,
    FREE,
    P_C,
    WIRED,
    BoundaryCondition,
    ClusterSet,
    CriticalConstants,
    EdgeConfig,
    FKSampler,
    OracleSizeError,
    SpinConfig,
    beta_of_p,
    couple_fk_to_spin,
    couple_spin_to_fk,
    dual_beta,
    dual_p,
    enumerate_exact,
    exact_tension,
    fk_weight,
    hamiltonian,
    ising_prob,
    label_clusters,
    load_config,
    onsager_mstar,
    p_of_beta,
    sample_fk,
    save_config,
    theta_of_p,
    two_point_estimate,
)
from .blocks import (
    BlockEventParams,
    BlockField,
    SubBox,
    bad_component_stats,
    block_decay_estimate,
    block_field,
    block_stats_csv,
    cramer_rate,
    estimate_mixing,
    evaluate_block_event,
    theoretical_bound,
)
from .interface import (
    CutHeights,
    FilledCluster,
    InterfaceError,
    InterfaceResult,
    SeparatedInterface,
    SepGeometry,
    build_sep_geometry,
    count_big_dual_clusters,
    dual_corridor_connected,
    crossing_clusters,
    extract_interface,
    fill_cluster,
    select_cut_heights,
    sep_check,
    sep_search,
    separate_interface,
    wall_check,
    wall_rate_estimate,
)
from .droplet import (
    DiscreteRegion,
    RateEstimate,
    SignedMeasure,
    StarvationError,
    barycenter,
    calibrate_tilt,
    circularity,
    conditioned_sample,
    deficit_log_prob,
    dictionary,
    disc_region,
    droplet_extract,
    estimate_rates,
    perimeter,
    perimeter_poly,
    rate_function,
    rate_prediction,
    region_from_cells,
    rough_measure,
    sigma_measure,
    target_w,
    weak_distance,
)
from .rng import RngStream

__version__ = "0.1.0"
