import math

import numpy as np
import pytest

from epsrank.errors import LatentDomainError, PartitionError, SpecFormatError
from epsrank.lvm import (
    LatentSample,
    Piece,
    PiecewiseLvmSpec,
    _draw_latents,
    _fd_derivative_1d,
    custom_spec,
    derivative_beta,
    evaluate_entry,
    generate_matrix,
    generate_piecewise_matrix,
    generate_symmetric_matrix,
    inner_product_spec,
    parse_spec_text,
    piece_of,
    polynomial_spec,
    rbf_spec,
    sample_latents,
    spec_hash,
    spec_to_text,
    verify_niceness,
)
from epsrank.matcore import svd


def two_piece_model():
    p1 = Piece(
        spec=inner_product_spec(N=1, R=1.0, distribution="interval"),
        alpha_lo=(-1.0,),
        alpha_hi=(0.0,),
        beta_lo=(-1.0,),
        beta_hi=(1.0,),
    )
    p2 = Piece(
        spec=rbf_spec(N=1, R=1.0, distribution="interval"),
        alpha_lo=(0.0,),
        alpha_hi=(1.0,),
        beta_lo=(-1.0,),
        beta_hi=(1.0,),
    )
    return PiecewiseLvmSpec(N=1, R=1.0, distribution="interval", pieces=(p1, p2))


# --- spec construction ---------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        inner_product_spec(N=0)
    with pytest.raises(ValueError):
        rbf_spec(N=2, R=-1.0)
    with pytest.raises(ValueError):
        inner_product_spec(N=2, distribution="interval")
    with pytest.raises(ValueError):
        polynomial_spec([], N=1)
    with pytest.raises(ValueError):
        polynomial_spec([(1.0, (2, 0))], N=1)  # exponent arity mismatch


def test_family_default_constants():
    ip = inner_product_spec(N=4, R=2.0)
    assert (ip.C, ip.M, ip.sup_norm) == (1.0, 1.0, 4.0)
    rb = rbf_spec(N=2, R=1.0)
    assert (rb.C, rb.M, rb.sup_norm) == (2 * 16.0, 4.0, 1.0)
    mono = polynomial_spec([(1.0, (3,))], N=1, R=2.0)
    assert mono.M == pytest.approx(1.5)        # degree / R
    assert mono.sup_norm == pytest.approx(8.0)  # |c| R^3


def test_custom_spec_rejects_understated_sup():
    with pytest.raises(ValueError, match="sup_norm"):
        custom_spec(
            [(5.0, (1,), (1,))],
            N=1,
            R=1.0,
            distribution="interval",
            C=1.0,
            M=2.0,
            sup_norm=0.01,
        )


# --- sampling ------------------------------------------------------------

def test_sphere_samples_have_unit_norm():
    spec = rbf_spec(N=16, R=1.0, distribution="sphere")
    sample = sample_latents(spec, 40, 40, seed=3)
    norms = np.linalg.norm(sample.alphas, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-12


def test_ball_and_interval_support():
    ball = sample_latents(inner_product_spec(N=5, R=2.0), 200, 1, seed=0)
    assert np.linalg.norm(ball.alphas, axis=1).max() <= 2.0 * (1 + 1e-12)
    line = sample_latents(
        rbf_spec(N=1, R=0.5, distribution="interval"), 200, 1, seed=0
    )
    assert np.abs(line.alphas).max() <= 0.5


def test_sampling_determinism_and_seed_sensitivity():
    spec = rbf_spec(N=3, R=1.0)
    a = sample_latents(spec, 10, 12, seed=99)
    b = sample_latents(spec, 10, 12, seed=99)
    assert np.array_equal(a.alphas, b.alphas)
    assert np.array_equal(a.betas, b.betas)
    c = sample_latents(spec, 10, 12, seed=100)
    assert not np.array_equal(a.alphas, c.alphas)


def test_counter_based_prefix_stability():
    # vector i depends only on (seed, role, i), not on how many are drawn
    spec = inner_product_spec(N=4, R=1.0)
    big = sample_latents(spec, 10, 10, seed=5)
    small = sample_latents(spec, 5, 5, seed=5)
    assert np.array_equal(big.alphas[:5], small.alphas)
    assert np.array_equal(big.betas[:5], small.betas)


# --- entry evaluation ----------------------------------------------------

def test_evaluate_entry_examples():
    rb1 = rbf_spec(N=1, R=1.0, distribution="interval")
    assert evaluate_entry(rb1, [0.3], [0.3]) == 1.0
    assert evaluate_entry(rb1, [0.0], [0.5]) == pytest.approx(
        math.exp(-0.25), rel=1e-15
    )
    ip = inner_product_spec(N=2, R=1.0)
    assert evaluate_entry(ip, [1.0, 0.0], [0.0, 1.0]) == 0.0
    with pytest.raises(LatentDomainError):
        evaluate_entry(ip, [2.0, 0.0], [0.0, 0.0])


def test_generate_single_entry_matches_evaluate():
    for spec in (
        rbf_spec(N=3, R=1.0),
        inner_product_spec(N=3, R=1.0),
        polynomial_spec([(2.0, (2,)), (-1.0, (0,))], N=1),
    ):
        sample = sample_latents(spec, 1, 1, seed=8)
        x = generate_matrix(spec, sample)
        assert x[0, 0] == evaluate_entry(spec, sample.alphas[0], sample.betas[0])


def test_generate_matches_pointwise_oracle():
    spec = rbf_spec(N=2, R=1.0)
    sample = sample_latents(spec, 12, 9, seed=4)
    x = generate_matrix(spec, sample)
    for i in range(12):
        for j in range(9):
            assert x[i, j] == pytest.approx(
                evaluate_entry(spec, sample.alphas[i], sample.betas[j]),
                rel=1e-14,
                abs=1e-300,
            )


def test_inner_product_matrices_have_low_rank():
    spec = inner_product_spec(N=4, R=1.0)
    sample = sample_latents(spec, 30, 25, seed=6)
    s = svd(generate_matrix(spec, sample))
    assert s.singular_values[4] <= 1e-10 * s.singular_values[0]


def test_sup_norm_bounds_entries():
    for spec in (
        rbf_spec(N=2, R=1.0),
        inner_product_spec(N=3, R=1.5),
        polynomial_spec([(1.0, (4,)), (0.5, (1,))], N=1),
    ):
        sample = sample_latents(spec, 20, 20, seed=1)
        assert np.abs(generate_matrix(spec, sample)).max() <= spec.sup_norm


def test_generation_bitwise_deterministic():
    spec = rbf_spec(N=2, R=1.0)
    sample = sample_latents(spec, 17, 23, seed=2)
    assert np.array_equal(
        generate_matrix(spec, sample), generate_matrix(spec, sample)
    )


# --- symmetric generation ------------------------------------------------

def test_symmetric_rbf_unit_diagonal_and_exact_symmetry():
    spec = rbf_spec(N=2, R=1.0)
    alphas = _draw_latents(spec, 0, 30, seed=12)
    x = generate_symmetric_matrix(spec, alphas)
    assert np.array_equal(np.diag(x), np.ones(30))
    assert np.array_equal(x, x.T)


def test_symmetric_two_point_example():
    spec = rbf_spec(N=1, R=1.0, distribution="interval")
    x = generate_symmetric_matrix(spec, [[0.0], [0.5]])
    e = math.exp(-0.25)
    assert np.allclose(x, [[1.0, e], [e, 1.0]], rtol=1e-15)
    assert x[0, 1] == x[1, 0]


# --- piecewise -----------------------------------------------------------

def test_piecewise_single_piece_degenerates_to_plain():
    spec = rbf_spec(N=1, R=1.0, distribution="interval")
    pspec = PiecewiseLvmSpec(
        N=1,
        R=1.0,
        distribution="interval",
        pieces=(
            Piece(
                spec=spec,
                alpha_lo=(-1.0,),
                alpha_hi=(1.0,),
                beta_lo=(-1.0,),
                beta_hi=(1.0,),
            ),
        ),
    )
    sample = sample_latents(pspec.sampling_spec(), 14, 14, seed=3)
    assert np.array_equal(
        generate_piecewise_matrix(pspec, sample), generate_matrix(spec, sample)
    )


def test_piecewise_binary_blocks():
    zero = polynomial_spec([(0.0, (0,))], N=1, sup_norm=1.0)
    one = polynomial_spec([(1.0, (0,))], N=1)
    pspec = PiecewiseLvmSpec(
        N=1,
        R=1.0,
        distribution="interval",
        pieces=(
            Piece(zero, (-1.0,), (0.0,), (-1.0,), (1.0,)),
            Piece(one, (0.0,), (1.0,), (-1.0,), (1.0,)),
        ),
    )
    sample = sample_latents(pspec.sampling_spec(), 40, 10, seed=9)
    x = generate_piecewise_matrix(pspec, sample)
    negative = sample.alphas[:, 0] < 0
    assert np.array_equal(x[negative], np.zeros((negative.sum(), 10)))
    assert np.array_equal(x[~negative], np.ones(((~negative).sum(), 10)))


def test_piecewise_matches_per_piece_oracle():
    pspec = two_piece_model()
    sample = sample_latents(pspec.sampling_spec(), 25, 25, seed=13)
    x = generate_piecewise_matrix(pspec, sample)
    for i in range(25):
        for j in range(25):
            piece = pspec.pieces[piece_of(pspec, sample.alphas[i], sample.betas[j])]
            assert x[i, j] == evaluate_entry(
                piece.spec, sample.alphas[i], sample.betas[j]
            )


def test_piecewise_resolver_total_on_random_points():
    pspec = two_piece_model()
    rng = np.random.default_rng(14)
    pts = rng.uniform(-1, 1, size=(10**4, 2))
    for a, b in pts:
        piece_of(pspec, [a], [b])  # raises unless exactly one piece claims


def test_piecewise_gap_raises_partition_error():
    spec = rbf_spec(N=1, R=1.0, distribution="interval")
    pspec = PiecewiseLvmSpec(
        N=1,
        R=1.0,
        distribution="interval",
        pieces=(
            Piece(spec, (-1.0,), (-0.5,), (-1.0,), (1.0,)),  # leaves (-0.5, 1] open
        ),
    )
    with pytest.raises(PartitionError, match="claimed by 0"):
        piece_of(pspec, [0.7], [0.0])
    sample = sample_latents(pspec.sampling_spec(), 50, 5, seed=1)
    with pytest.raises(PartitionError):
        generate_piecewise_matrix(pspec, sample)


# --- niceness ------------------------------------------------------------

def test_niceness_inner_product_passes():
    report = verify_niceness(inner_product_spec(N=2, R=1.0), max_order=4,
                             grid_points=30)
    assert report.passed
    assert report.worst_ratio <= 1.0 + 1e-9


def test_niceness_monomial_passes():
    for d in (2, 5):
        spec = polynomial_spec([(1.0, (d,))], N=1, R=1.0,
                               distribution="interval")
        report = verify_niceness(spec, max_order=6, grid_points=40)
        assert report.passed, (d, report.worst_ratio)


def test_niceness_rbf_small_m_fails():
    spec = rbf_spec(N=1, R=1.0, distribution="interval", M=0.5)
    report = verify_niceness(spec, max_order=6, grid_points=40)
    assert not report.passed
    assert report.worst_ratio > 1.0


def test_closed_form_derivatives_match_finite_differences():
    rb1 = rbf_spec(N=1, R=1.0, distribution="interval")
    poly = polynomial_spec([(1.5, (3,)), (-2.0, (1,))], N=1,
                           distribution="interval")
    for spec in (rb1, poly):
        for order in range(5):
            closed = derivative_beta(spec, [0.4], [0.1], (order,))
            fd = _fd_derivative_1d(spec, [0.4], 0.1, order, h=1e-3)
            assert closed == pytest.approx(fd, rel=5e-4, abs=5e-4)


# --- spec files ----------------------------------------------------------

RBF_TEXT = """\
# kernel model
family = rbf
N = 2
R = 1.0
distribution = ball
seed = 17
"""


def test_parse_round_trip():
    parsed = parse_spec_text(RBF_TEXT)
    assert parsed.seed == 17
    spec = parsed.model
    assert spec.family == "rbf" and spec.N == 2
    again = parse_spec_text(spec_to_text(spec, seed=17))
    assert again.model == spec
    assert spec_hash(again.model) == spec_hash(spec)


def test_parse_polynomial_terms():
    text = (
        "family = polynomial\nN = 2\nR = 1.0\ndistribution = ball\n"
        "terms = 2.0 : 1 0 | -0.5 : 0 2\n"
    )
    spec = parse_spec_text(text).model
    assert spec.terms == ((2.0, (1, 0)), (-0.5, (0, 2)))


def test_parse_strictness():
    with pytest.raises(SpecFormatError, match="unknown key"):
        parse_spec_text(RBF_TEXT + "bogus = 1\n")
    with pytest.raises(SpecFormatError, match="duplicate"):
        parse_spec_text(RBF_TEXT + "N = 3\n")
    with pytest.raises(SpecFormatError, match="missing required"):
        parse_spec_text("family = rbf\nN = 2\nR = 1.0\n")
    with pytest.raises(SpecFormatError, match="key = value"):
        parse_spec_text("family rbf\n")
    with pytest.raises(SpecFormatError, match="family"):
        parse_spec_text("family = exotic\nN = 1\nR = 1\ndistribution = ball\n")


def test_parse_piecewise():
    text = """\
pieces = 2
N = 1
R = 1.0
distribution = interval
piece0.family = inner_product
piece0.alpha_cell = -1.0, 0.0
piece0.beta_cell = -1.0, 1.0
piece1.family = rbf
piece1.alpha_cell = 0.0, 1.0
piece1.beta_cell = -1.0, 1.0
"""
    model = parse_spec_text(text).model
    assert isinstance(model, PiecewiseLvmSpec)
    assert len(model.pieces) == 2
    assert model.pieces[0].spec.family == "inner_product"
    assert piece_of(model, [-0.2], [0.5]) == 0
    assert piece_of(model, [0.0], [0.5]) == 1


def test_latent_sample_arrays_read_only():
    sample = sample_latents(inner_product_spec(N=2), 3, 3, seed=0)
    with pytest.raises(ValueError):
        sample.alphas[0, 0] = 5.0
