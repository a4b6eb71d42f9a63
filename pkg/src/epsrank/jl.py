"""Gaussian random projections and the factored compression pipelines.

A Gaussian map Q with r rows and i.i.d. N(0, 1/r) entries approximately
preserves inner products between any fixed point set whp once
r >= 8 ln(points + 1) / eps_jl^2 (natural log throughout).  Success is
never assumed: every pipeline measures the max-entry error of its
output against the reference matrix and resamples the map (seed,
seed + 1, ...) until the target holds or retries run out.

When the target dimension reaches the factor width, projecting cannot
reduce the inner dimension any further (an isometry reproduces the
factors exactly), so the stage-one factors are returned unprojected and
the theorem-level rank budget is recorded alongside.  Budgets derived
from the series constants can exceed float range; their natural logs
are therefore carried everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import ROLE_JL, stream
from .errors import NumericalError, RetriesExhaustedError
from .lvm import (
    LatentSample,
    LvmSpec,
    PiecewiseLvmSpec,
    alpha_piece_indices,
    beta_piece_indices,
    generate_matrix,
    generate_piecewise_matrix,
    generate_symmetric_matrix,
)
from .matcore import as_matrix, svd, write_matrix
from .taylor import (
    TaylorFactorization,
    compute_cu_log,
    compute_cv_log,
    select_truncation_order,
    taylor_factorize,
    _factor_width_guard,
    _u_coefficients,
    _v_coefficients,
)

DEFAULT_MAX_RETRIES = 20


def jl_target_dim(n_points: int, eps_jl: float) -> int:
    """ceil(8 ln(n_points + 1) / eps_jl^2), the inner-product-preserving size."""
    if n_points < 1:
        raise ValueError(f"need n_points >= 1, got {n_points}")
    if not 0 < eps_jl < 1:
        raise ValueError(f"eps_jl must lie in (0, 1), got {eps_jl}")
    return math.ceil(8.0 * math.log(n_points + 1) / (eps_jl * eps_jl))


@dataclass(frozen=True)
class JlMap:
    """A realized Gaussian projection with N(0, 1/r) entries."""

    q: np.ndarray
    target_eps_jl: float | None
    seed: int
    family: str = "gaussian"

    @property
    def r(self) -> int:
        return self.q.shape[0]

    @property
    def input_dim(self) -> int:
        return self.q.shape[1]


def sample_jl_map(input_dim: int, r: int, seed: int,
                  target_eps_jl: float | None = None) -> JlMap:
    """Draw a Gaussian map, deterministic per seed."""
    if r < 1 or input_dim < 1:
        raise ValueError(f"need r, input_dim >= 1, got r={r}, input_dim={input_dim}")
    q = stream(seed, ROLE_JL).standard_normal((r, input_dim)) / math.sqrt(r)
    return JlMap(q=q, target_eps_jl=target_eps_jl, seed=seed)


@dataclass(frozen=True)
class JlCheckReport:
    """Pairwise inner-product preservation check result."""

    passed: bool
    worst_ratio: float
    worst_pair: tuple
    eps_jl: float


def verify_inner_product_preservation(q: JlMap, points, eps_jl: float) -> JlCheckReport:
    """Check |x_i.x_j - (Qx_i).(Qx_j)| <= eps_jl (|x_i|^2 + |x_j|^2 - x_i.x_j)
    for every pair, reporting the worst error-to-bound ratio."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[1] != q.input_dim:
        raise ValueError(
            f"points have dimension {x.shape[1]}, map expects {q.input_dim}"
        )
    gram = x @ x.T
    proj = x @ q.q.T
    gram_hat = proj @ proj.T
    sq = np.diag(gram)
    bound = eps_jl * (sq[:, None] + sq[None, :] - gram)
    err = np.abs(gram - gram_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(err == 0, 0.0, err / bound)
    ratio = np.where((bound <= 0) & (err > 0), np.inf, ratio)
    worst = np.unravel_index(np.argmax(ratio), ratio.shape)
    worst_ratio = float(ratio[worst])
    return JlCheckReport(
        passed=worst_ratio <= 1.0,
        worst_ratio=worst_ratio,
        worst_pair=(int(worst[0]), int(worst[1])),
        eps_jl=eps_jl,
    )


@dataclass(frozen=True)
class CompressedApprox:
    """Factored approximation left @ right with a measured error.

    ``rank_budget`` is the theorem-level target dimension (inf when the
    series constants overflow float64; ``rank_budget_log`` is always
    finite).  The materialized inner dimension is ``inner_dim`` and never
    exceeds the budget.  ``nontrivial`` is False when the budget reaches
    min(m, n), i.e. the rank guarantee is vacuous for this size.
    """

    left: np.ndarray
    right: np.ndarray
    rank_budget: float
    rank_budget_log: float
    achieved_max_error: float
    retries_used: int
    nontrivial: bool
    epsilon: float
    seed: int
    method: str

    @property
    def inner_dim(self) -> int:
        return self.left.shape[1]


def _project_with_retries(left_tall, right_tall, reference, target, r,
                          seed, max_retries):
    """Core engine: project both factors through one shared Gaussian map.

    Returns (left, right, achieved_error, retries_used).  ``r`` is the
    target dimension, or None when it exceeds float range; a budget at
    or above the factor width cannot reduce the inner dimension, so the
    factors pass through unprojected in that case.  The reported error on
    failure is the minimum over all sampled maps.
    """
    width = left_tall.shape[1]
    if r is None or r >= width:
        err = float(np.abs(reference - left_tall @ right_tall).max())
        if err > target:
            raise NumericalError(
                "internal consistency failure: unprojected factors miss the "
                f"target ({err} > {target})"
            )
        return left_tall, right_tall, err, 0
    best_err = math.inf
    for attempt in range(max_retries):
        q = sample_jl_map(width, r, seed + attempt).q
        left = left_tall @ q.T
        right = q @ right_tall
        err = float(np.abs(reference - left @ right).max())
        if err < best_err:
            best_err = err
        if err <= target:
            return left, right, err, attempt
    raise RetriesExhaustedError(
        f"no projection met the target {target} within {max_retries} maps "
        f"(best achieved {best_err})",
        best_error=best_err,
        tries=max_retries,
    )


def theorem0_compress(x, epsilon: float, seed: int,
                      max_retries: int = DEFAULT_MAX_RETRIES) -> CompressedApprox:
    """Compress any matrix to ceil(72 ln(m+n+1) / eps^2) rank at entrywise
    error eps * spectral_norm.

    The SVD factors are balanced as U sqrt(S) and sqrt(S) V^T, whose row
    norms are bounded by the spectral norm, then projected through one
    shared Gaussian map sized with eps_jl = eps / 3.  For square inputs
    the budget is the classic ceil(72 log(2n+1) / eps^2).
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    a = as_matrix(x)
    m, n = a.shape
    s = svd(a)
    roots = np.sqrt(s.singular_values)
    left_tall = s.u * roots[None, :]
    right_tall = roots[:, None] * s.vt
    r = math.ceil(72.0 * math.log(m + n + 1) / (epsilon * epsilon))
    target = epsilon * float(s.singular_values[0])
    left, right, err, retries = _project_with_retries(
        left_tall, right_tall, a, target, r, seed, max_retries
    )
    return CompressedApprox(
        left=left,
        right=right,
        rank_budget=float(r),
        rank_budget_log=math.log(r),
        achieved_max_error=err,
        retries_used=retries,
        nontrivial=r < min(m, n),
        epsilon=epsilon,
        seed=seed,
        method="theorem0",
    )


def _log_eps_jl(epsilon: float, log_c_u: float, log_c_v: float) -> float:
    """log of eps_jl = (eps/2) / (C_u + C_v + 1 + eps/2), via log-sum-exp."""
    log_den = np.logaddexp(
        np.logaddexp(log_c_u, log_c_v), math.log(1.0 + epsilon / 2.0)
    )
    return math.log(epsilon / 2.0) - float(log_den)


def _budget(m: int, n: int, epsilon: float, log_c_u: float, log_c_v: float):
    """Target dimension ceil(8 ln(m+n+1) / eps_jl^2).

    Returns (value, log, int_or_None); the integer is None when eps_jl
    underflows and the budget exceeds float range.
    """
    log_eps_jl = _log_eps_jl(epsilon, log_c_u, log_c_v)
    eps_jl = math.exp(log_eps_jl)
    if eps_jl > 0.0:
        r = jl_target_dim(m + n, eps_jl)
        return float(r), math.log(r), r
    budget_log = math.log(8.0 * math.log(m + n + 1)) - 2.0 * log_eps_jl
    return math.inf, budget_log, None


def _compress_factorization(u, v, reference, sup_norm, epsilon, log_c_u, log_c_v,
                            seed, max_retries, method) -> CompressedApprox:
    m, n = reference.shape
    budget, budget_log, r = _budget(m, n, epsilon, log_c_u, log_c_v)
    target = epsilon * sup_norm
    left, right, err, retries = _project_with_retries(
        u, v, reference, target, r, seed, max_retries
    )
    return CompressedApprox(
        left=left,
        right=right,
        rank_budget=budget,
        rank_budget_log=budget_log,
        achieved_max_error=err,
        retries_used=retries,
        nontrivial=budget_log < math.log(min(m, n)),
        epsilon=epsilon,
        seed=seed,
        method=method,
    )


def theorem2_compress(fact: TaylorFactorization, epsilon: float, seed: int,
                      max_retries: int = DEFAULT_MAX_RETRIES) -> CompressedApprox:
    """Compress a series factorization to the log(m+n+1)-scale rank budget
    at entrywise error eps * sup_norm.

    Requires the factorization stage to hold half the budget:
    fact.error_bound <= (eps/2) * sup_norm.  The projection is sized by
    eps_jl = (eps/2) / (C_u + C_v + 1 + eps/2) and verified by direct
    measurement against the exact matrix.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if fact.error_bound > (epsilon / 2.0) * fact.sup_norm:
        raise ValueError(
            f"factorization error {fact.error_bound} exceeds half the budget "
            f"{(epsilon / 2.0) * fact.sup_norm}; rebuild it with a series "
            f"epsilon of at most {epsilon / 2.0}"
        )
    reference = generate_matrix(fact.spec, fact.sample)
    return _compress_factorization(
        fact.u_matrix,
        fact.v_matrix,
        reference,
        fact.sup_norm,
        epsilon,
        fact.log_c_u,
        fact.log_c_v,
        seed,
        max_retries,
        method="theorem2",
    )


# ---------------------------------------------------------------------------
# Piecewise models: block-concatenated factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseFactorization:
    """Concatenated per-piece factors with block-sparse rows/columns.

    Row i holds piece l's coefficients exactly in block l when alpha_i
    lies in that piece's alpha cell (likewise for columns and betas), so
    every inner product collapses to the unique claiming piece's value.
    ``log_c_u`` / ``log_c_v`` are the worst per-latent sums of the piece
    constants.
    """

    u_matrix: np.ndarray
    v_matrix: np.ndarray
    block_slices: tuple
    orders: tuple
    error_bound: float
    sup_norm: float
    log_c_u: float
    log_c_v: float
    pspec: PiecewiseLvmSpec
    sample: LatentSample
    target_epsilon: float


def factorize_piecewise(pspec: PiecewiseLvmSpec, sample: LatentSample,
                        epsilon: float) -> PiecewiseFactorization:
    """Factorize each piece to epsilon * sup accuracy on its own cell and
    assemble the block-concatenated factors."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    reference = generate_piecewise_matrix(pspec, sample)
    m, n = reference.shape
    u_blocks, v_blocks, slices, orders = [], [], [], []
    amasks, bmasks = [], []
    piece_cu_logs, piece_cv_logs = [], []
    offset = 0
    for l, piece in enumerate(pspec.pieces):
        spec = piece.spec
        K = select_truncation_order(spec, epsilon)
        degree = spec.beta_degree
        if degree is not None:
            K = min(K, degree)
        midx = _factor_width_guard(spec, K)
        u = _u_coefficients(spec, sample.alphas, midx)
        v = _v_coefficients(spec, sample.betas, midx)
        amask = np.array(
            [l in alpha_piece_indices(pspec, a) for a in sample.alphas]
        )
        bmask = np.array([l in beta_piece_indices(pspec, b) for b in sample.betas])
        claim = amask[:, None] & bmask[None, :]
        if claim.any():
            piece_err = float(np.abs((reference - u @ v)[claim]).max())
            if piece_err > epsilon * spec.sup_norm:
                raise NumericalError(
                    f"internal consistency failure: piece {l} reached "
                    f"{piece_err}, above the guaranteed {epsilon * spec.sup_norm}"
                )
        u = np.where(amask[:, None], u, 0.0)
        v = np.where(bmask[None, :], v, 0.0)
        u_blocks.append(u)
        v_blocks.append(v)
        slices.append(slice(offset, offset + midx.count))
        orders.append(K)
        offset += midx.count
        amasks.append(amask)
        bmasks.append(bmask)
        piece_cu_logs.append(compute_cu_log(spec))
        piece_cv_logs.append(compute_cv_log(spec))

    u_big = np.hstack(u_blocks)
    v_big = np.vstack(v_blocks)

    # The concatenated product must collapse to the claiming piece's value.
    assembled = np.zeros((m, n))
    for l in range(len(pspec.pieces)):
        claim = amasks[l][:, None] & bmasks[l][None, :]
        assembled = np.where(claim, u_blocks[l] @ v_blocks[l], assembled)
    blocks_gap = float(np.abs(u_big @ v_big - assembled).max())
    if blocks_gap > 1e-12 * max(1.0, pspec.sup_norm):
        raise NumericalError(
            "internal consistency failure: concatenated factors disagree with "
            f"per-piece evaluation by {blocks_gap}"
        )

    error_bound = float(np.abs(reference - u_big @ v_big).max())
    # Worst-case per-latent sums of the piece constants, in log space.
    log_c_u = max(
        float(np.logaddexp.reduce([piece_cu_logs[l] for l in range(len(pspec.pieces))
                                   if amasks[l][i]]))
        for i in range(m)
    )
    log_c_v = max(
        float(np.logaddexp.reduce([piece_cv_logs[l] for l in range(len(pspec.pieces))
                                   if bmasks[l][j]]))
        for j in range(n)
    )
    return PiecewiseFactorization(
        u_matrix=u_big,
        v_matrix=v_big,
        block_slices=tuple(slices),
        orders=tuple(orders),
        error_bound=error_bound,
        sup_norm=pspec.sup_norm,
        log_c_u=log_c_u,
        log_c_v=log_c_v,
        pspec=pspec,
        sample=sample,
        target_epsilon=epsilon,
    )


def theorem3_compress(pfact: PiecewiseFactorization, epsilon: float, seed: int,
                      max_retries: int = DEFAULT_MAX_RETRIES) -> CompressedApprox:
    """Compress the block-concatenated piecewise factors, with the series
    constants replaced by their worst per-latent sums."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if pfact.error_bound > (epsilon / 2.0) * pfact.sup_norm:
        raise ValueError(
            f"piecewise factorization error {pfact.error_bound} exceeds half "
            f"the budget; rebuild it with a series epsilon of at most "
            f"{epsilon / 2.0}"
        )
    reference = generate_piecewise_matrix(pfact.pspec, pfact.sample)
    return _compress_factorization(
        pfact.u_matrix,
        pfact.v_matrix,
        reference,
        pfact.sup_norm,
        epsilon,
        pfact.log_c_u,
        pfact.log_c_v,
        seed,
        max_retries,
        method="theorem3",
    )


def theorem4_compress(spec: LvmSpec, alphas, epsilon: float, seed: int,
                      max_retries: int = DEFAULT_MAX_RETRIES) -> CompressedApprox:
    """Compress a symmetric model matrix X[i, j] = f(alpha_i, alpha_j).

    Identical pipeline with betas := alphas; the point count 2n sizes the
    budget with ln(2n + 1).
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    a = np.ascontiguousarray(np.asarray(alphas, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("alphas must be a nonempty 2-D array of latent rows")
    sample = LatentSample(alphas=a, betas=a, seed=seed)
    fact = taylor_factorize(spec, sample, epsilon / 2.0)
    reference = generate_symmetric_matrix(spec, a)
    return _compress_factorization(
        fact.u_matrix,
        fact.v_matrix,
        reference,
        fact.sup_norm,
        epsilon,
        fact.log_c_u,
        fact.log_c_v,
        seed,
        max_retries,
        method="theorem4",
    )


def save_compressed(approx: CompressedApprox, prefix: str) -> None:
    """Write left/right factor files plus a key = value metadata sidecar."""
    write_matrix(approx.left, f"{prefix}.left.epsr")
    write_matrix(approx.right, f"{prefix}.right.epsr")
    lines = [
        f"method = {approx.method}",
        f"rank_budget = {approx.rank_budget!r}",
        f"rank_budget_log = {approx.rank_budget_log!r}",
        f"inner_dim = {approx.inner_dim}",
        f"epsilon = {approx.epsilon!r}",
        f"seed = {approx.seed}",
        f"retries_used = {approx.retries_used}",
        f"achieved_max_error = {approx.achieved_max_error!r}",
        f"nontrivial = {approx.nontrivial}",
    ]
    with open(f"{prefix}.meta", "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
