"""Entrywise low-rank approximation of latent variable model matrices.

The package generates matrices X[i, j] = f(alpha_i, beta_j) from smooth
(or piecewise smooth, or symmetric) latent variable models, builds
explicit factored approximations of them (series expansion, Gaussian
random projection, and their composition), and measures epsilon-rank
upper bounds through truncated-SVD scans.
"""

from .errors import (
    CapabilityError,
    CapacityError,
    EpsrankError,
    LatentDomainError,
    MatrixFormatError,
    NumericalError,
    PartitionError,
    RetriesExhaustedError,
    SpecFormatError,
)
from .jl import (
    CompressedApprox,
    JlCheckReport,
    JlMap,
    PiecewiseFactorization,
    factorize_piecewise,
    jl_target_dim,
    sample_jl_map,
    save_compressed,
    theorem0_compress,
    theorem2_compress,
    theorem3_compress,
    theorem4_compress,
    verify_inner_product_preservation,
)
from .lvm import (
    LatentSample,
    LvmSpec,
    NicenessReport,
    Piece,
    PiecewiseLvmSpec,
    SpecFile,
    custom_spec,
    evaluate_entry,
    generate_matrix,
    generate_piecewise_matrix,
    generate_symmetric_matrix,
    inner_product_spec,
    load_spec_file,
    parse_spec_text,
    piece_of,
    polynomial_spec,
    rbf_spec,
    sample_latents,
    spec_hash,
    spec_to_text,
    verify_niceness,
)
from .matcore import (
    RankBoundResult,
    SvdResult,
    as_matrix,
    export_csv,
    max_abs_norm,
    mu_curve,
    mu_r,
    rank_eps_upper_bound,
    read_matrix,
    spectral_norm,
    svd,
    truncate_svd,
    write_matrix,
)
from .taylor import (
    MultiIndexSet,
    TaylorFactorization,
    compute_cu,
    compute_cu_log,
    compute_cv,
    compute_cv_log,
    enumerate_multi_indices,
    save_factorization,
    select_truncation_order,
    taylor_factorize,
    taylor_factorize_at_order,
)

__version__ = "0.1.0"
