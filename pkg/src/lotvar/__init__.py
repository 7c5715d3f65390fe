"""Linear optimal transport embeddings and Frechet variance decompositions."""

__version__ = "0.1.0"

from .measures import (
    Coupling,
    CouplingClass,
    CouplingKind,
    EmpiricalMeasure,
    MeasureNetwork,
    classify_coupling,
    prune_measure,
    uniform_measure,
    validate_coupling,
    validate_measure,
    validate_network,
)
from .exact_ot import TransportResult, cost_matrix, solve_w2, solve_w2_oracle
from .gw_fgw import (
    FgwParams,
    GwResult,
    diam2,
    solve_fgw,
    solve_gw,
    solve_gw_oracle,
    transport_cost_fgw,
    transport_cost_gw,
    transport_cost_w,
)
from .lot import (
    DecompositionReport,
    ProjectionResult,
    barycentric_map,
    decompose_fgw,
    decompose_gw,
    decompose_w2,
    project_fgw,
    project_gw,
    project_w,
    pushforward_coupling,
    vectorize_embedding,
)
from .barycenter import (
    BarycenterConfig,
    BarycenterInit,
    BarycenterResult,
    frechet_variance,
    free_support_barycenter,
    free_support_fgw_barycenter,
)
from .stats import (
    FTestResult,
    VarianceDecomposition,
    f_statistic,
    permutation_test,
    variance_curve,
    variance_decomposition,
)
from .features import (
    SpdFeature,
    compute_lambda_star,
    embed_spd,
    embed_spd_dataset,
    kernel_reconstruct,
    project_spd,
)
from .datasets import (
    DatasetManifest,
    ManifestElement,
    ParsedDataset,
    emit_dataset,
    load_dataset,
    parse_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
