"""Bounded-rank factorization of model matrices by series expansion.

Expanding f(alpha, beta) in beta about 0 and truncating at total degree
K gives X_hat[i, j] = u_i . v_j with vectors indexed by the multi-indices
|mu| <= K:

    u_i[mu] = D^mu f(alpha_i, 0) / (sqrt(mu!) * sqrt(sup_norm))
    v_j[mu] = sqrt(sup_norm) * beta_j**mu / sqrt(mu!)

The width is the exact count binomial(N + K, K); the looser bound
(K + 1) * N**K is kept only as a tested inequality.  The factor norms
are controlled by two series constants (compute_cu / compute_cv) which
can be astronomically large, so they are accumulated in log space and
reported both ways.  Achieved accuracy is always measured directly
against the generated matrix, never assumed from the remainder bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, NumericalError
from .lvm import (
    LatentSample,
    LvmSpec,
    generate_matrix,
    spec_hash,
)
from .matcore import write_matrix

# Widest factorization we are willing to materialize.
MAX_WIDTH = 10**6

# Relative tail target for the certified series sums.
_TAIL_REL = 1e-13
# Inflation covering log-accumulation round-off, so the certified values
# stay genuine upper bounds of the true sums.
_ROUNDOFF_GUARD = 1e-11


@dataclass(frozen=True)
class MultiIndexSet:
    """All multi-indices mu in N^N with |mu| <= K, graded lexicographic."""

    N: int
    K: int
    indices: np.ndarray  # (count, N) int64

    @property
    def count(self) -> int:
        return self.indices.shape[0]


def _degree_indices(n_dims: int, degree: int):
    if n_dims == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _degree_indices(n_dims - 1, degree - first):
            yield (first,) + rest


def enumerate_multi_indices(N: int, K: int) -> MultiIndexSet:
    """Complete, duplicate-free multi-index set, ordered by degree then lex."""
    if N < 1 or K < 0:
        raise ValueError(f"need N >= 1 and K >= 0, got N={N}, K={K}")
    count = math.comb(N + K, K)
    if count > 2**63 - 1:
        raise CapacityError(
            f"binomial({N + K}, {K}) = {count} multi-indices is not representable"
        )
    rows = []
    for degree in range(K + 1):
        rows.extend(_degree_indices(N, degree))
    indices = np.array(rows, dtype=np.int64).reshape(len(rows), N)
    assert indices.shape[0] == count
    return MultiIndexSet(N=N, K=K, indices=indices)


def select_truncation_order(spec: LvmSpec, epsilon: float) -> int:
    """Truncation order K = max(1, ceil(max(2e N R M, log2(C / eps)))).

    Sufficient for a remainder below eps * sup_norm under the declared
    derivative growth constants.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    growth = 2.0 * math.e * spec.N * spec.R * spec.M
    log_term = math.log2(spec.C / epsilon) if spec.C > 0 else -math.inf
    bound = max(growth, log_term)
    if not math.isfinite(bound):
        raise CapacityError(
            f"truncation order overflows for constants C={spec.C}, M={spec.M}"
        )
    return max(1, math.ceil(bound))


# ---------------------------------------------------------------------------
# Series constants, certified in log space
# ---------------------------------------------------------------------------

def compute_cv_log(spec: LvmSpec) -> float:
    """log of a certified upper bound for sum_s (N+s)^N R^(2s) / s!.

    Terms are accumulated until the (monotone decreasing) step ratio is
    below 1/2 and the geometric tail bound is negligible; the tail bound
    is added, so the result is >= the true sum.
    """
    N, R = spec.N, float(spec.R)  # R > 0 is enforced by LvmSpec
    log_r2 = 2.0 * math.log(R)

    def log_term(s):
        return N * math.log(N + s) + s * log_r2 - math.lgamma(s + 1)

    total = -math.inf
    s = 0
    while True:
        total = np.logaddexp(total, log_term(s))
        # ratio t_{s+1}/t_s, monotone decreasing in s
        rho = math.exp(N * math.log1p(1.0 / (N + s))) * R * R / (s + 1)
        if rho < 0.5:
            log_tail = log_term(s + 1) - math.log1p(-rho)
            if log_tail <= total + math.log(_TAIL_REL):
                return float(np.logaddexp(total, log_tail)) + _ROUNDOFF_GUARD
        s += 1
        if s > 10**6:
            raise NumericalError("series for the v-norm constant did not converge")


def compute_cu_log(spec: LvmSpec) -> float:
    """log of a certified upper bound for sum_s (N+s)^N C^2 M^(2s) / floor(s/N)!.

    The per-term ratio oscillates (the factorial only advances every N
    steps), so certification works on blocks of N terms whose sum ratio
    is eventually monotone decreasing.
    """
    N, C, M = spec.N, float(spec.C), float(spec.M)
    if C == 0.0:
        return -math.inf
    log_c2 = 2.0 * math.log(C)
    if M == 0.0:
        return N * math.log(N) + log_c2 + _ROUNDOFF_GUARD
    log_m2 = 2.0 * math.log(M)

    def log_block(b):
        ss = np.arange(b * N, (b + 1) * N, dtype=np.float64)
        terms = N * np.log(N + ss) + ss * log_m2 + log_c2 - math.lgamma(b + 1)
        peak = terms.max()
        return peak + math.log(np.exp(terms - peak).sum())

    total = -math.inf
    b = 0
    while True:
        block = log_block(b)
        total = np.logaddexp(total, block)
        # bound on blocksum_{b+1}/blocksum_b, monotone decreasing in b
        rho = math.exp(N * math.log1p(1.0 / (b + 1)) + N * log_m2) / (b + 2)
        if rho < 0.5:
            log_tail = block + math.log(rho) - math.log1p(-rho)
            if log_tail <= total + math.log(_TAIL_REL):
                return float(np.logaddexp(total, log_tail)) + _ROUNDOFF_GUARD
        b += 1
        if (b + 1) * N > 10**7:
            raise NumericalError("series for the u-norm constant did not converge")


def compute_cv(spec: LvmSpec) -> float:
    """Certified upper bound for the v-norm series constant (may overflow to inf)."""
    log_value = compute_cv_log(spec)
    return math.exp(log_value) if log_value < 709.0 else math.inf


def compute_cu(spec: LvmSpec) -> float:
    """Certified upper bound for the u-norm series constant (may overflow to inf)."""
    log_value = compute_cu_log(spec)
    if log_value == -math.inf:
        return 0.0
    return math.exp(log_value) if log_value < 709.0 else math.inf


# ---------------------------------------------------------------------------
# Coefficient matrices
# ---------------------------------------------------------------------------

def _gather_product(tables: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """rows x count products of per-coordinate tables at the given exponents."""
    rows = tables.shape[0]
    count = indices.shape[0]
    acc = np.ones((rows, count))
    for d in range(indices.shape[1]):
        acc *= tables[:, d, indices[:, d]]
    return acc


def _v_coefficients(spec: LvmSpec, betas: np.ndarray, midx: MultiIndexSet) -> np.ndarray:
    """V with columns v_j[mu] = sqrt(sup_norm) * beta_j**mu / sqrt(mu!)."""
    n, N = betas.shape
    K = midx.K
    # vtab[j, d, k] = beta[j, d]^k / sqrt(k!), built by a stable recurrence
    vtab = np.empty((n, N, K + 1))
    vtab[:, :, 0] = 1.0
    for k in range(1, K + 1):
        vtab[:, :, k] = vtab[:, :, k - 1] * betas / math.sqrt(k)
    return (math.sqrt(spec.sup_norm) * _gather_product(vtab, midx.indices)).T


def _degree_one_columns(midx: MultiIndexSet) -> list:
    """Column position of each unit multi-index e_d, d = 0..N-1.

    With graded ordering these occupy the N slots right after the zero
    index.
    """
    head = midx.indices[: 1 + midx.N]
    lookup = {tuple(int(e) for e in mu): col for col, mu in enumerate(head)}
    return [
        lookup[tuple(1 if i == d else 0 for i in range(midx.N))]
        for d in range(midx.N)
    ]


def _column_of(midx: MultiIndexSet, mu: tuple) -> int:
    matches = np.flatnonzero((midx.indices == np.array(mu, dtype=np.int64)).all(axis=1))
    if matches.size != 1:
        raise ValueError(f"multi-index {mu} not in the enumerated set")
    return int(matches[0])


def _sqrt_factorial(mu) -> float:
    return math.sqrt(math.prod(math.factorial(int(e)) for e in mu))


def _u_coefficients(spec: LvmSpec, alphas: np.ndarray, midx: MultiIndexSet) -> np.ndarray:
    """U with rows u_i[mu] = D^mu f(alpha_i, 0) / (sqrt(mu!) sqrt(sup_norm))."""
    m, N = alphas.shape
    K = midx.K
    root_sup = math.sqrt(spec.sup_norm)
    if spec.family == "inner_product":
        u = np.zeros((m, midx.count))
        if K >= 1:
            for d, col in enumerate(_degree_one_columns(midx)):
                u[:, col] = alphas[:, d] / root_sup
        return u
    if spec.family == "rbf":
        # wtab[i, d, k] = H_k(alpha[i, d]) / sqrt(k!) via the Hermite recurrence;
        # u_i[mu] = exp(-|alpha_i|^2) * prod_d wtab[i, d, mu_d]
        wtab = np.empty((m, N, K + 1))
        wtab[:, :, 0] = 1.0
        if K >= 1:
            wtab[:, :, 1] = 2.0 * alphas
        for k in range(1, K):
            wtab[:, :, k + 1] = (
                2.0 * alphas * wtab[:, :, k] / math.sqrt(k + 1)
                - 2.0 * math.sqrt(k / (k + 1.0)) * wtab[:, :, k - 1]
            )
        damp = np.exp(-(alphas * alphas).sum(axis=1)) / root_sup
        return damp[:, None] * _gather_product(wtab, midx.indices)
    if spec.family == "polynomial":
        row = np.zeros(midx.count)
        for c, mu in spec.terms:
            if sum(mu) <= K:
                row[_column_of(midx, mu)] += c * _sqrt_factorial(mu) / root_sup
        return np.repeat(row[None, :], m, axis=0)
    # custom: D^mu f(alpha, 0) = sum over terms with beta exponent mu
    u = np.zeros((m, midx.count))
    for c, nu, mu in spec.terms:
        if sum(mu) <= K:
            col = _column_of(midx, mu)
            scale = c * _sqrt_factorial(mu) / root_sup
            u[:, col] += scale * (alphas ** np.array(nu)).prod(axis=1)
    return u


# ---------------------------------------------------------------------------
# Factorization driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaylorFactorization:
    """Rank-bounded factorization X_hat = u_matrix @ v_matrix.

    ``error_bound`` is the measured max-entry deviation from the exact
    matrix.  ``c_u`` / ``c_v`` are the certified series constants
    bounding the squared factor-row norms; they can overflow float64, so
    their natural logs are carried alongside.
    """

    u_matrix: np.ndarray
    v_matrix: np.ndarray
    K: int
    n_tilde: int
    error_bound: float
    c_u: float
    c_v: float
    log_c_u: float
    log_c_v: float
    sup_norm: float
    spec: LvmSpec
    sample: LatentSample
    target_epsilon: float | None


def _factor_width_guard(spec: LvmSpec, K: int) -> MultiIndexSet:
    count = math.comb(spec.N + K, K)
    if count > MAX_WIDTH:
        raise CapacityError(
            f"factorization width binomial({spec.N + K}, {K}) = {count} "
            f"exceeds the limit {MAX_WIDTH}"
        )
    return enumerate_multi_indices(spec.N, K)


def _factorize(spec: LvmSpec, sample: LatentSample, K: int,
               target_epsilon: float | None) -> TaylorFactorization:
    midx = _factor_width_guard(spec, K)
    u = _u_coefficients(spec, sample.alphas, midx)
    v = _v_coefficients(spec, sample.betas, midx)
    x = generate_matrix(spec, sample)
    achieved = float(np.abs(x - u @ v).max())
    return TaylorFactorization(
        u_matrix=u,
        v_matrix=v,
        K=K,
        n_tilde=midx.count,
        error_bound=achieved,
        c_u=compute_cu(spec),
        c_v=compute_cv(spec),
        log_c_u=compute_cu_log(spec),
        log_c_v=compute_cv_log(spec),
        sup_norm=spec.sup_norm,
        spec=spec,
        sample=sample,
        target_epsilon=target_epsilon,
    )


def taylor_factorize_at_order(spec: LvmSpec, sample: LatentSample,
                              K: int) -> TaylorFactorization:
    """Factorize at an explicit truncation order; accuracy is measured only."""
    if K < 0:
        raise ValueError(f"order must be >= 0, got {K}")
    return _factorize(spec, sample, K, target_epsilon=None)


def taylor_factorize(spec: LvmSpec, sample: LatentSample,
                     epsilon: float) -> TaylorFactorization:
    """Factorize to a measured accuracy of epsilon * sup_norm.

    The order comes from select_truncation_order, capped at the series
    degree for families whose expansion terminates (the truncation is
    then exact).  A measured error above the target indicates a defect
    in the coefficient formulas and aborts.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    K = select_truncation_order(spec, epsilon)
    degree = spec.beta_degree
    if degree is not None:
        K = min(K, degree)
    fact = _factorize(spec, sample, K, target_epsilon=epsilon)
    target = epsilon * spec.sup_norm
    if fact.error_bound > target:
        raise NumericalError(
            "internal consistency failure: series factorization reached "
            f"{fact.error_bound}, above the guaranteed {target}"
        )
    return fact


def save_factorization(fact: TaylorFactorization, prefix: str) -> None:
    """Write u/v matrix files plus a key = value metadata sidecar."""
    write_matrix(fact.u_matrix, f"{prefix}.u.epsr")
    write_matrix(fact.v_matrix, f"{prefix}.v.epsr")
    lines = [
        f"K = {fact.K}",
        f"n_tilde = {fact.n_tilde}",
        f"error_bound = {fact.error_bound!r}",
        f"c_u = {fact.c_u!r}",
        f"c_v = {fact.c_v!r}",
        f"log_c_u = {fact.log_c_u!r}",
        f"log_c_v = {fact.log_c_v!r}",
        f"sup_norm = {fact.sup_norm!r}",
        f"spec_hash = {spec_hash(fact.spec)}",
    ]
    with open(f"{prefix}.meta", "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
