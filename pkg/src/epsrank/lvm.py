"""Latent variable models: specification, sampling, and matrix generation.

A model is a function family plus a latent distribution supported on the
closed ball of radius R in R^N, together with smoothness constants
(C, M) bounding the partial derivatives in the second argument:
|D^mu f| <= C * M**|mu| * sup_norm for every multi-index mu (checked on
a grid by verify_niceness, not proven).

Families:

``inner_product``  f(a, b) = a . b
``rbf``            f(a, b) = exp(-||a - b||^2)
``polynomial``     f(a, b) = sum_t c_t * b**mu_t       (depends on b only)
``custom``         f(a, b) = sum_t c_t * a**nu_t * b**mu_t

Generation is deterministic and order-independent: every latent vector
comes from its own counter-based stream, and all entry evaluation is
elementwise (no BLAS reductions), so outputs are bitwise reproducible
regardless of thread count or evaluation order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import ROLE_ALPHA, ROLE_BETA, ROLE_GRID, stream
from .errors import (
    CapabilityError,
    LatentDomainError,
    PartitionError,
    SpecFormatError,
)

FAMILIES = ("inner_product", "polynomial", "rbf", "custom")
DISTRIBUTIONS = ("ball", "sphere", "interval")

# Relative slack for "inside the ball" checks; sphere samples can sit one
# rounding error past R after normalization.
_DOMAIN_SLACK = 1e-9

# Row-chunk budget for pairwise evaluation temporaries (~32 MiB of float64).
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class LvmSpec:
    """A latent variable model: family, latent geometry, niceness constants.

    ``terms`` holds the coefficient list for the polynomial and custom
    families: tuples ``(coeff, beta_exponents)`` respectively
    ``(coeff, alpha_exponents, beta_exponents)``.
    """

    family: str
    N: int
    R: float
    distribution: str
    C: float
    M: float
    sup_norm: float
    terms: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.N < 1:
            raise ValueError(f"latent dimension must be >= 1, got {self.N}")
        if not self.R > 0:
            raise ValueError(f"radius must be positive, got {self.R}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "interval" and self.N != 1:
            raise ValueError("interval distribution requires N = 1")
        if self.C < 0 or self.M < 0:
            raise ValueError("niceness constants C, M must be nonnegative")
        if not self.sup_norm > 0:
            raise ValueError(f"sup_norm must be positive, got {self.sup_norm}")
        if self.family in ("polynomial", "custom"):
            if not self.terms:
                raise ValueError(f"family {self.family!r} requires terms")
            object.__setattr__(self, "terms", _normalize_terms(self))
        elif self.terms is not None:
            raise ValueError(f"family {self.family!r} takes no terms")

    @property
    def beta_degree(self) -> int | None:
        """Total degree in the second argument; None when the series is infinite."""
        if self.family == "inner_product":
            return 1
        if self.family == "polynomial":
            return max(sum(mu) for _, mu in self.terms)
        if self.family == "custom":
            return max(sum(mu) for _, _, mu in self.terms)
        return None


def _normalize_terms(spec: LvmSpec) -> tuple:
    out = []
    for t in spec.terms:
        if spec.family == "polynomial":
            coeff, mu = t
            nu = None
        else:
            coeff, nu, mu = t
        for exps in (nu, mu):
            if exps is None:
                continue
            if len(exps) != spec.N:
                raise ValueError(
                    f"exponent tuple {exps} has length {len(exps)}, expected N={spec.N}"
                )
            if any(e < 0 or e != int(e) for e in exps):
                raise ValueError(f"exponents must be nonnegative integers: {exps}")
        if spec.family == "polynomial":
            out.append((float(coeff), tuple(int(e) for e in mu)))
        else:
            out.append(
                (
                    float(coeff),
                    tuple(int(e) for e in nu),
                    tuple(int(e) for e in mu),
                )
            )
    return tuple(out)


def inner_product_spec(N, R=1.0, distribution="ball", C=None, M=None) -> LvmSpec:
    # sup over the ball of |a . b| is R^2; derivative growth constants 1, 1
    return LvmSpec(
        family="inner_product",
        N=N,
        R=R,
        distribution=distribution,
        C=1.0 if C is None else C,
        M=1.0 if M is None else M,
        sup_norm=R * R,
    )


def rbf_spec(N, R=1.0, distribution="ball", C=None, M=None) -> LvmSpec:
    # sup is 1 (attained at a == b); growth constants N*(4R)^N and 4R.
    # The default C overflows float64 around N ~ 500; series expansion is
    # infeasible there anyway and rejects non-finite constants.
    if C is None:
        try:
            C = N * (4.0 * R) ** N
        except OverflowError:
            C = math.inf
    return LvmSpec(
        family="rbf",
        N=N,
        R=R,
        distribution=distribution,
        C=C,
        M=4.0 * R if M is None else M,
        sup_norm=1.0,
    )


def polynomial_spec(terms, N, R=1.0, distribution="ball", C=None, M=None,
                    sup_norm=None) -> LvmSpec:
    """Polynomial in the second argument with constant coefficients.

    Defaults: sup_norm is the no-cancellation bound sum |c| R^|mu|, and
    with that bound C = 1, M = degree / R satisfy the derivative growth
    condition termwise.
    """
    terms = tuple((float(c), tuple(int(e) for e in mu)) for c, mu in terms)
    degree = max(sum(mu) for _, mu in terms)
    if sup_norm is None:
        sup_norm = sum(abs(c) * R ** sum(mu) for c, mu in terms)
    return LvmSpec(
        family="polynomial",
        N=N,
        R=R,
        distribution=distribution,
        C=1.0 if C is None else C,
        M=(degree / R if degree > 0 else 0.0) if M is None else M,
        sup_norm=sup_norm,
        terms=terms,
    )


def custom_spec(terms, N, R, distribution, C, M, sup_norm,
                check_points=512) -> LvmSpec:
    """Separable polynomial in both arguments with declared constants.

    The declared sup_norm is checked against the observed sup on a
    sampled grid; declarations below the observed sup are rejected.
    """
    spec = LvmSpec(
        family="custom",
        N=N,
        R=R,
        distribution=distribution,
        C=C,
        M=M,
        sup_norm=sup_norm,
        terms=tuple(terms),
    )
    if check_points > 0:
        alphas = _draw_latents(spec, ROLE_GRID, check_points, seed=0)
        betas = _draw_latents(spec, ROLE_GRID, check_points, seed=1)
        observed = float(np.abs(_evaluate_family(spec, alphas, betas)).max())
        if observed > sup_norm * (1 + 1e-12):
            raise ValueError(
                f"declared sup_norm {sup_norm} is below observed sup {observed}"
            )
    return spec


@dataclass(frozen=True)
class LatentSample:
    """Realized latent vectors: m rows of alphas, n rows of betas."""

    alphas: np.ndarray
    betas: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("alphas", "betas"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if a.ndim != 2:
                raise ValueError(f"{name} must be a 2-D array of latent rows")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def m(self) -> int:
        return self.alphas.shape[0]

    @property
    def n(self) -> int:
        return self.betas.shape[0]


def _latent_vector(spec: LvmSpec, seed: int, role: int, index: int) -> np.ndarray:
    g = stream(seed, role, index)
    if spec.distribution == "interval":
        return spec.R * (2.0 * g.random(1) - 1.0)
    v = g.standard_normal(spec.N)
    nrm = float(np.linalg.norm(v))
    while nrm == 0.0:  # keeps the map total; probability ~ 0
        v = g.standard_normal(spec.N)
        nrm = float(np.linalg.norm(v))
    v *= spec.R / nrm
    if spec.distribution == "ball":
        v *= g.random() ** (1.0 / spec.N)
    return v


def _draw_latents(spec: LvmSpec, role: int, count: int, seed: int) -> np.ndarray:
    out = np.empty((count, spec.N))
    for i in range(count):
        out[i] = _latent_vector(spec, seed, role, i)
    return out


def sample_latents(spec: LvmSpec, m: int, n: int, seed: int) -> LatentSample:
    """Draw m alphas and n betas, deterministically per (seed, role, index)."""
    if m < 1 or n < 1:
        raise ValueError(f"need m, n >= 1, got m={m}, n={n}")
    return LatentSample(
        alphas=_draw_latents(spec, ROLE_ALPHA, m, seed),
        betas=_draw_latents(spec, ROLE_BETA, n, seed),
        seed=seed,
    )


def _check_latent(spec: LvmSpec, x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.size != spec.N:
        raise ValueError(f"latent has dimension {a.size}, expected {spec.N}")
    nrm = float(np.linalg.norm(a))
    if nrm > spec.R * (1 + _DOMAIN_SLACK):
        raise LatentDomainError(
            f"latent with norm {nrm} lies outside the ball of radius {spec.R}"
        )
    return a


def _check_support(spec: LvmSpec, rows: np.ndarray, name: str) -> None:
    if rows.shape[1] != spec.N:
        raise ValueError(
            f"{name} have dimension {rows.shape[1]}, expected N={spec.N}"
        )
    norms = np.sqrt((rows * rows).sum(axis=1))
    worst = float(norms.max(initial=0.0))
    if worst > spec.R * (1 + _DOMAIN_SLACK):
        raise LatentDomainError(
            f"{name} contain a vector of norm {worst} outside radius {spec.R}"
        )


def evaluate_entry(spec: LvmSpec, alpha, beta) -> float:
    """Evaluate f(alpha, beta) for a single pair of latent vectors."""
    a = _check_latent(spec, alpha)
    b = _check_latent(spec, beta)
    if spec.family == "inner_product":
        return float((a * b).sum())
    if spec.family == "rbf":
        d = a - b
        return float(np.exp(-(d * d).sum()))
    if spec.family == "polynomial":
        acc = 0.0
        for c, mu in spec.terms:
            acc += c * float((b ** np.array(mu)).prod())
        return acc
    acc = 0.0
    for c, nu, mu in spec.terms:
        acc += (c * float((a ** np.array(nu)).prod())) * float(
            (b ** np.array(mu)).prod()
        )
    return acc


def _poly_beta_values(spec: LvmSpec, B: np.ndarray) -> np.ndarray:
    acc = np.zeros(B.shape[0])
    for c, mu in spec.terms:
        acc += c * (B ** np.array(mu)).prod(axis=1)
    return acc


def _evaluate_family(spec: LvmSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Entrywise X[i, j] = f(A[i], B[j]) without BLAS reductions."""
    m, n = A.shape[0], B.shape[0]
    if spec.family == "polynomial":
        row = _poly_beta_values(spec, B)
        return np.repeat(row[None, :], m, axis=0)
    if spec.family == "custom":
        x = np.zeros((m, n))
        for c, nu, mu in spec.terms:
            acol = c * (A ** np.array(nu)).prod(axis=1)
            brow = (B ** np.array(mu)).prod(axis=1)
            x += acol[:, None] * brow[None, :]
        return x
    x = np.empty((m, n))
    step = max(1, _CHUNK_ELEMS // max(1, n * spec.N))
    for i0 in range(0, m, step):
        chunk = A[i0 : i0 + step, None, :]
        if spec.family == "inner_product":
            x[i0 : i0 + step] = (chunk * B[None, :, :]).sum(axis=2)
        else:  # rbf
            d = chunk - B[None, :, :]
            x[i0 : i0 + step] = np.exp(-(d * d).sum(axis=2))
    return x


def generate_matrix(spec: LvmSpec, sample: LatentSample) -> np.ndarray:
    """X[i, j] = f(alpha_i, beta_j) for all pairs in the sample."""
    _check_support(spec, sample.alphas, "alphas")
    _check_support(spec, sample.betas, "betas")
    return _evaluate_family(spec, sample.alphas, sample.betas)


def family_is_symmetric(spec: LvmSpec) -> bool:
    """True when f(a, b) == f(b, a) for every pair, by construction."""
    if spec.family in ("inner_product", "rbf"):
        return True
    if spec.family == "custom":
        term_set = {(c, nu, mu) for c, nu, mu in spec.terms}
        return all((c, mu, nu) in term_set for c, nu, mu in spec.terms)
    return False


def generate_symmetric_matrix(spec: LvmSpec, alphas) -> np.ndarray:
    """X[i, j] = f(alpha_i, alpha_j) from a single latent sequence.

    For symmetric families the lower triangle is mirrored from the upper
    one, so the output is bitwise symmetric.
    """
    A = np.ascontiguousarray(np.asarray(alphas, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError("alphas must be a nonempty 2-D array of latent rows")
    _check_support(spec, A, "alphas")
    x = _evaluate_family(spec, A, A)
    if family_is_symmetric(spec):
        il = np.tril_indices(x.shape[0], -1)
        x[il] = x.T[il]
    return x


@dataclass(frozen=True)
class Piece:
    """One piece of a piecewise model: a nice model restricted to a cell.

    Cells are axis-aligned boxes over the latent coordinates, half-open
    ``[lo, hi)`` per axis; the topmost cell along each axis is closed so
    the boxes exactly partition the product domain.
    """

    spec: LvmSpec
    alpha_lo: tuple
    alpha_hi: tuple
    beta_lo: tuple
    beta_hi: tuple

    def __post_init__(self):
        n = self.spec.N
        for name in ("alpha_lo", "alpha_hi", "beta_lo", "beta_hi"):
            v = tuple(float(t) for t in getattr(self, name))
            if len(v) != n:
                raise ValueError(f"{name} must have length N={n}")
            object.__setattr__(self, name, v)
        for lo, hi in ((self.alpha_lo, self.alpha_hi), (self.beta_lo, self.beta_hi)):
            if any(l >= h for l, h in zip(lo, hi)):
                raise ValueError(f"cell has empty extent: lo={lo}, hi={hi}")


@dataclass(frozen=True)
class PiecewiseLvmSpec:
    """Finitely many nice models glued over a partition of the domain.

    Sampling uses the shared top-level distribution; the pieces only
    decide which function evaluates each entry.
    """

    N: int
    R: float
    distribution: str
    pieces: tuple

    _alpha_top: tuple = field(init=False, repr=False, compare=False)
    _beta_top: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("piecewise model needs at least one piece")
        object.__setattr__(self, "pieces", tuple(self.pieces))
        for p in self.pieces:
            if p.spec.N != self.N or p.spec.R != self.R:
                raise ValueError("piece dimensions must match the top-level N, R")
        object.__setattr__(
            self,
            "_alpha_top",
            tuple(
                max(p.alpha_hi[d] for p in self.pieces) for d in range(self.N)
            ),
        )
        object.__setattr__(
            self,
            "_beta_top",
            tuple(max(p.beta_hi[d] for p in self.pieces) for d in range(self.N)),
        )

    @property
    def sup_norm(self) -> float:
        return max(p.spec.sup_norm for p in self.pieces)

    def sampling_spec(self) -> LvmSpec:
        """A stand-in spec carrying only the latent geometry, for sampling."""
        return inner_product_spec(self.N, self.R, self.distribution)


def _box_contains(lo, hi, top, point) -> bool:
    return all(
        l <= x < h or (x == h and h == t)
        for l, h, t, x in zip(lo, hi, top, point)
    )


def alpha_piece_indices(pspec: PiecewiseLvmSpec, alpha) -> tuple:
    a = np.asarray(alpha, dtype=np.float64).reshape(-1)
    return tuple(
        i
        for i, p in enumerate(pspec.pieces)
        if _box_contains(p.alpha_lo, p.alpha_hi, pspec._alpha_top, a)
    )


def beta_piece_indices(pspec: PiecewiseLvmSpec, beta) -> tuple:
    b = np.asarray(beta, dtype=np.float64).reshape(-1)
    return tuple(
        i
        for i, p in enumerate(pspec.pieces)
        if _box_contains(p.beta_lo, p.beta_hi, pspec._beta_top, b)
    )


def piece_of(pspec: PiecewiseLvmSpec, alpha, beta) -> int:
    """Index of the unique piece whose cell contains (alpha, beta)."""
    hits = [
        i
        for i in alpha_piece_indices(pspec, alpha)
        if i in beta_piece_indices(pspec, beta)
    ]
    if len(hits) != 1:
        raise PartitionError(
            f"point (alpha={np.asarray(alpha).tolist()}, "
            f"beta={np.asarray(beta).tolist()}) is claimed by {len(hits)} pieces"
        )
    return hits[0]


def _membership_masks(pspec: PiecewiseLvmSpec, sample: LatentSample):
    """Boolean masks (m x P) and (n x P) of cell membership."""
    P = len(pspec.pieces)
    amask = np.zeros((sample.m, P), dtype=bool)
    bmask = np.zeros((sample.n, P), dtype=bool)
    for l, p in enumerate(pspec.pieces):
        for i in range(sample.m):
            amask[i, l] = _box_contains(
                p.alpha_lo, p.alpha_hi, pspec._alpha_top, sample.alphas[i]
            )
        for j in range(sample.n):
            bmask[j, l] = _box_contains(
                p.beta_lo, p.beta_hi, pspec._beta_top, sample.betas[j]
            )
    return amask, bmask


def generate_piecewise_matrix(pspec: PiecewiseLvmSpec, sample: LatentSample) -> np.ndarray:
    """Each entry evaluated by the unique piece claiming its latent pair."""
    amask, bmask = _membership_masks(pspec, sample)
    claims = amask[:, None, :] & bmask[None, :, :]
    counts = claims.sum(axis=2)
    if (counts != 1).any():
        i, j = np.argwhere(counts != 1)[0]
        raise PartitionError(
            f"point (alpha={sample.alphas[i].tolist()}, "
            f"beta={sample.betas[j].tolist()}) is claimed by {counts[i, j]} pieces"
        )
    x = np.zeros((sample.m, sample.n))
    for l, p in enumerate(pspec.pieces):
        xl = _evaluate_family(p.spec, sample.alphas, sample.betas)
        x = np.where(claims[:, :, l], xl, x)
    return x


# ---------------------------------------------------------------------------
# Derivatives and niceness verification
# ---------------------------------------------------------------------------

def _hermite_values(t: float, max_order: int) -> list:
    """H_0(t) .. H_max(t), physicists' Hermite via the three-term recurrence."""
    vals = [1.0]
    if max_order >= 1:
        vals.append(2.0 * t)
    for k in range(1, max_order):
        vals.append(2.0 * t * vals[k] - 2.0 * k * vals[k - 1])
    return vals


def _falling(n: int, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= n - i
    return out


def derivative_beta(spec: LvmSpec, alpha, beta, mu) -> float:
    """Closed-form partial derivative D^mu (in beta) of f at (alpha, beta)."""
    a = _check_latent(spec, alpha)
    b = _check_latent(spec, beta)
    mu = tuple(int(e) for e in mu)
    if len(mu) != spec.N or any(e < 0 for e in mu):
        raise ValueError(f"bad multi-index {mu}")
    if spec.family == "inner_product":
        order = sum(mu)
        if order == 0:
            return float((a * b).sum())
        if order == 1:
            return float(a[mu.index(1)])
        return 0.0
    if spec.family == "rbf":
        # d^k/db^k exp(-(a-b)^2) = H_k(a-b) exp(-(a-b)^2), per coordinate
        out = 1.0
        for d in range(spec.N):
            t = a[d] - b[d]
            out *= _hermite_values(t, mu[d])[mu[d]] * math.exp(-t * t)
        return out
    if spec.family == "polynomial":
        acc = 0.0
        for c, gamma in spec.terms:
            if any(g < e for g, e in zip(gamma, mu)):
                continue
            term = c
            for g, e, bd in zip(gamma, mu, b):
                term *= _falling(g, e) * bd ** (g - e)
            acc += term
        return acc
    acc = 0.0
    for c, nu, gamma in spec.terms:
        if any(g < e for g, e in zip(gamma, mu)):
            continue
        term = c * float((a ** np.array(nu)).prod())
        for g, e, bd in zip(gamma, mu, b):
            term *= _falling(g, e) * bd ** (g - e)
        acc += term
    return acc


def _fd_derivative_1d(spec: LvmSpec, alpha, beta: float, order: int,
                      h: float = 1e-2) -> float:
    """Central finite-difference D^order in beta, N = 1, order <= 6.

    Diagnostic fallback only; accuracy degrades quickly with order.
    """
    if spec.N != 1:
        raise CapabilityError("finite differences are implemented for N = 1 only")
    if order > 6:
        raise CapabilityError("finite differences support order <= 6 only")
    if order == 0:
        return evaluate_entry(spec, alpha, [beta])
    acc = 0.0
    for i in range(order + 1):
        w = (-1) ** i * math.comb(order, i)
        acc += w * evaluate_entry(spec, alpha, [beta + (order / 2 - i) * h])
    return acc / h**order


@dataclass(frozen=True)
class NicenessReport:
    """Result of checking |D^mu f| <= C M^|mu| sup_norm on a grid."""

    passed: bool
    worst_ratio: float
    worst_mu: tuple
    max_order: int
    points_checked: int


def verify_niceness(spec: LvmSpec, max_order: int, grid_points: int) -> NicenessReport:
    """Check the derivative growth bound for all |mu| <= max_order.

    Evaluation points are drawn from the model's own latent distribution
    with a fixed internal seed, so reports are reproducible.
    """
    if max_order < 0 or grid_points < 1:
        raise ValueError("need max_order >= 0 and grid_points >= 1")
    from .taylor import enumerate_multi_indices  # local import, no cycle at module load

    midx = enumerate_multi_indices(spec.N, max_order)
    alphas = _draw_latents(spec, ROLE_GRID, grid_points, seed=0)
    betas = _draw_latents(spec, ROLE_GRID, grid_points, seed=1)
    worst_ratio = 0.0
    worst_mu = (0,) * spec.N
    for mu in midx.indices:
        mu = tuple(int(e) for e in mu)
        bound = spec.C * spec.M ** sum(mu) * spec.sup_norm
        for a, b in zip(alphas, betas):
            val = abs(derivative_beta(spec, a, b, mu))
            ratio = math.inf if bound == 0 and val > 0 else (
                0.0 if val == 0 else val / bound
            )
            if ratio > worst_ratio:
                worst_ratio = ratio
                worst_mu = mu
    return NicenessReport(
        passed=worst_ratio <= 1 + 1e-9,
        worst_ratio=worst_ratio,
        worst_mu=worst_mu,
        max_order=max_order,
        points_checked=grid_points,
    )


# ---------------------------------------------------------------------------
# Model files: strict flat key = value format
# ---------------------------------------------------------------------------

_SINGLE_KEYS = ("family", "N", "R", "distribution", "C", "M", "sup_norm", "terms")
_SCALAR_REQUIRED = ("family", "N", "R", "distribution")


@dataclass(frozen=True)
class SpecFile:
    """Parsed model file: the model plus an optional default seed."""

    model: object  # LvmSpec | PiecewiseLvmSpec
    seed: int | None


def _parse_terms(value: str, family: str, N: int, line_no: int) -> tuple:
    terms = []
    for raw in value.split("|"):
        parts = [p.strip() for p in raw.split(":")]
        try:
            if family == "polynomial":
                if len(parts) != 2:
                    raise ValueError("expected 'coeff : exponents'")
                coeff = float(parts[0])
                mu = tuple(int(e) for e in parts[1].split())
                terms.append((coeff, mu))
            elif family == "custom":
                if len(parts) != 3:
                    raise ValueError("expected 'coeff : alpha exps : beta exps'")
                coeff = float(parts[0])
                nu = tuple(int(e) for e in parts[1].split())
                mu = tuple(int(e) for e in parts[2].split())
                terms.append((coeff, nu, mu))
            else:
                raise ValueError(f"family {family!r} takes no terms")
        except ValueError as exc:
            raise SpecFormatError(f"bad term {raw.strip()!r}: {exc}", line_no) from exc
    return tuple(terms)


def _parse_cell(value: str, N: int, line_no: int):
    spans = [s.strip() for s in value.split(";")]
    if len(spans) != N:
        raise SpecFormatError(
            f"cell needs {N} 'lo, hi' spans separated by ';', got {len(spans)}",
            line_no,
        )
    lo, hi = [], []
    for span in spans:
        parts = span.split(",")
        if len(parts) != 2:
            raise SpecFormatError(f"bad cell span {span!r}, expected 'lo, hi'", line_no)
        try:
            lo.append(float(parts[0]))
            hi.append(float(parts[1]))
        except ValueError as exc:
            raise SpecFormatError(f"bad cell span {span!r}: {exc}", line_no) from exc
    return tuple(lo), tuple(hi)


def _read_pairs(text: str):
    """key -> (value, line_no), strict: no duplicates, no junk lines."""
    pairs = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecFormatError(f"expected 'key = value', got {line!r}", line_no)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise SpecFormatError("empty key", line_no)
        if key in pairs:
            raise SpecFormatError(f"duplicate key {key!r}", line_no)
        pairs[key] = (value, line_no)
    return pairs


def _build_single(fields: dict, where: str = "") -> LvmSpec:
    def take(key, conv, default=None, required=False):
        if key not in fields:
            if required:
                raise SpecFormatError(f"missing required key {where}{key}")
            return default
        value, line_no = fields.pop(key)
        try:
            return conv(value)
        except ValueError as exc:
            raise SpecFormatError(
                f"bad value for {where}{key}: {value!r}", line_no
            ) from exc

    family = take("family", str, required=True)
    if family not in FAMILIES:
        raise SpecFormatError(f"unknown family {family!r} for {where or 'model'}")
    N = take("N", int, required=True)
    R = take("R", float, required=True)
    distribution = take("distribution", str, required=True)
    C = take("C", float)
    M = take("M", float)
    sup_norm = take("sup_norm", float)
    terms = None
    if "terms" in fields:
        value, line_no = fields.pop("terms")
        terms = _parse_terms(value, family, N, line_no)
    if fields:
        key, (_, line_no) = next(iter(fields.items()))
        raise SpecFormatError(f"unknown key {where}{key}", line_no)
    try:
        if family == "inner_product":
            return inner_product_spec(N, R, distribution, C=C, M=M)
        if family == "rbf":
            return rbf_spec(N, R, distribution, C=C, M=M)
        if family == "polynomial":
            if terms is None:
                raise SpecFormatError(f"family polynomial requires {where}terms")
            return polynomial_spec(terms, N, R, distribution, C=C, M=M,
                                   sup_norm=sup_norm)
        if None in (C, M, sup_norm) or terms is None:
            raise SpecFormatError(
                f"family custom requires {where}C, {where}M, {where}sup_norm, "
                f"and {where}terms"
            )
        return custom_spec(terms, N, R, distribution, C=C, M=M, sup_norm=sup_norm)
    except ValueError as exc:
        raise SpecFormatError(str(exc)) from exc


def parse_spec_text(text: str) -> SpecFile:
    """Parse a model file; unknown keys, duplicates, and junk are errors."""
    pairs = _read_pairs(text)
    seed = None
    if "seed" in pairs:
        value, line_no = pairs.pop("seed")
        try:
            seed = int(value)
        except ValueError as exc:
            raise SpecFormatError(f"bad value for seed: {value!r}", line_no) from exc
    if "pieces" in pairs:
        return SpecFile(model=_parse_piecewise(pairs), seed=seed)
    return SpecFile(model=_build_single(pairs), seed=seed)


def _parse_piecewise(pairs: dict) -> PiecewiseLvmSpec:
    value, line_no = pairs.pop("pieces")
    try:
        count = int(value)
    except ValueError as exc:
        raise SpecFormatError(f"bad value for pieces: {value!r}", line_no) from exc
    if count < 1:
        raise SpecFormatError("pieces must be >= 1", line_no)

    def take_top(key, conv):
        if key not in pairs:
            raise SpecFormatError(f"missing required key {key}")
        v, ln = pairs.pop(key)
        try:
            return conv(v)
        except ValueError as exc:
            raise SpecFormatError(f"bad value for {key}: {v!r}", ln) from exc

    N = take_top("N", int)
    R = take_top("R", float)
    distribution = take_top("distribution", str)

    pieces = []
    for i in range(count):
        prefix = f"piece{i}."
        fields = {
            k[len(prefix):]: v for k, v in pairs.items() if k.startswith(prefix)
        }
        for k in list(pairs):
            if k.startswith(prefix):
                del pairs[k]
        for cell_key in ("alpha_cell", "beta_cell"):
            if cell_key not in fields:
                raise SpecFormatError(f"missing required key {prefix}{cell_key}")
        acell, a_ln = fields.pop("alpha_cell")
        bcell, b_ln = fields.pop("beta_cell")
        alpha_lo, alpha_hi = _parse_cell(acell, N, a_ln)
        beta_lo, beta_hi = _parse_cell(bcell, N, b_ln)
        fields.setdefault("N", (str(N), a_ln))
        fields.setdefault("R", (repr(R), a_ln))
        fields.setdefault("distribution", (distribution, a_ln))
        spec = _build_single(fields, where=prefix)
        pieces.append(
            Piece(
                spec=spec,
                alpha_lo=alpha_lo,
                alpha_hi=alpha_hi,
                beta_lo=beta_lo,
                beta_hi=beta_hi,
            )
        )
    if pairs:
        key, (_, line_no) = next(iter(pairs.items()))
        raise SpecFormatError(f"unknown key {key}", line_no)
    try:
        return PiecewiseLvmSpec(
            N=N, R=R, distribution=distribution, pieces=tuple(pieces)
        )
    except ValueError as exc:
        raise SpecFormatError(str(exc)) from exc


def load_spec_file(path) -> SpecFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec_text(fh.read())


def _terms_to_text(spec: LvmSpec) -> str:
    if spec.family == "polynomial":
        return " | ".join(
            f"{c!r} : {' '.join(str(e) for e in mu)}" for c, mu in spec.terms
        )
    return " | ".join(
        f"{c!r} : {' '.join(str(e) for e in nu)} : {' '.join(str(e) for e in mu)}"
        for c, nu, mu in spec.terms
    )


def spec_to_text(spec: LvmSpec, seed: int | None = None) -> str:
    """Canonical serialization; parsing it back reproduces the model."""
    lines = [
        f"family = {spec.family}",
        f"N = {spec.N}",
        f"R = {spec.R!r}",
        f"distribution = {spec.distribution}",
        f"C = {spec.C!r}",
        f"M = {spec.M!r}",
        f"sup_norm = {spec.sup_norm!r}",
    ]
    if spec.terms is not None:
        lines.append(f"terms = {_terms_to_text(spec)}")
    if seed is not None:
        lines.append(f"seed = {seed}")
    return "\n".join(lines) + "\n"


def spec_hash(spec: LvmSpec) -> str:
    """Stable content hash of a model spec."""
    return hashlib.sha256(spec_to_text(spec).encode("ascii")).hexdigest()
