import math

import numpy as np
import pytest
from scipy import integrate, stats

from marcuswz import (ConfigError, JumpDistribution, LevyModel,
                      MomentDivergenceError, exp_moment_check, increments,
                      moment_lemma_check, sample_path)
from marcuswz.driver import COMPENSATOR_QUANTUM, INCREMENT_QUANTUM, DrivingPath


def symmetric_unit_atoms(intensity=2.0):
    dist = JumpDistribution.discrete([[1.0], [-1.0]], [0.5, 0.5])
    return LevyModel(intensity=intensity, jump_dist=dist)


# ---------------------------------------------------------------------------
# Jump laws: analytic moments against independent quadrature oracles
# ---------------------------------------------------------------------------

def test_discrete_moments_and_exp_moment():
    dist = JumpDistribution.discrete([[1.0], [-1.0]], [0.5, 0.5])
    assert np.allclose(dist.first_moment, [0.0])
    assert dist.second_moment == pytest.approx(1.0, abs=1e-12)
    assert dist.exp_moment(1.0) == pytest.approx(math.e, abs=1e-12)
    model = LevyModel(intensity=1.0, jump_dist=dist)
    assert exp_moment_check(model, 1.0) == pytest.approx(2.718281828, abs=1e-9)


def test_exp_moment_at_zero_is_intensity():
    model = symmetric_unit_atoms(intensity=3.5)
    assert exp_moment_check(model, 0.0) == 3.5


def test_truncated_exponential_against_quadrature():
    rate, cut = 3.0, 2.0
    dist = JumpDistribution.two_sided_exponential(rate, cut=cut)
    mass = 1.0 - math.exp(-rate * cut)

    def density(u):
        return rate * math.exp(-rate * u) / mass

    second, _ = integrate.quad(lambda u: u * u * density(u), 0.0, cut)
    assert dist.second_moment == pytest.approx(second, rel=1e-10)
    for a in (0.5, 3.0, 10.0):
        oracle, _ = integrate.quad(lambda u: math.exp(a * u) * density(u), 0.0, cut)
        assert dist.exp_moment(a) == pytest.approx(oracle, rel=1e-9)


def test_unbounded_exponential_critical_exponent():
    dist = JumpDistribution.two_sided_exponential(3.0)
    assert dist.second_moment == pytest.approx(2.0 / 9.0, abs=1e-14)
    assert dist.exp_moment(2.5) == pytest.approx(3.0 / 0.5, rel=1e-12)
    with pytest.raises(MomentDivergenceError):
        dist.exp_moment(3.0)
    model = LevyModel(intensity=1.0, jump_dist=dist)
    with pytest.raises(MomentDivergenceError):
        exp_moment_check(model, 4.0)


def test_annulus_moments_against_quadrature():
    lo, hi = 0.5, 1.5
    dist = JumpDistribution.uniform_annulus(lo, hi, dimension=2)
    second, _ = integrate.quad(lambda r: r * r / (hi - lo), lo, hi)
    assert dist.second_moment == pytest.approx(second, rel=1e-12)
    a = 2.0
    oracle, _ = integrate.quad(lambda r: math.exp(a * r) / (hi - lo), lo, hi)
    assert dist.exp_moment(a) == pytest.approx(oracle, rel=1e-10)


def test_box_exp_moment_against_dblquad():
    r, a = 1.0, 1.5
    dist = JumpDistribution.uniform_box(r, dimension=2)
    oracle, _ = integrate.dblquad(
        lambda y, x: math.exp(a * math.hypot(x, y)) / (2 * r) ** 2,
        -r, r, -r, r, epsabs=1e-12)
    assert dist.exp_moment(a) == pytest.approx(oracle, rel=1e-8)
    assert dist.second_moment == pytest.approx(2.0 * r ** 2 / 3.0, abs=1e-14)


def test_exp_moment_monotone_in_exponent():
    for dist in (JumpDistribution.uniform_annulus(0.2, 1.0),
                 JumpDistribution.two_sided_exponential(3.0, cut=2.0),
                 JumpDistribution.discrete([[0.5], [-1.0]], [0.7, 0.3])):
        values = [dist.exp_moment(a) for a in (0.0, 0.5, 1.0, 2.0, 5.0)]
        assert all(np.isfinite(values))
        assert np.all(np.diff(values) >= 0.0)


def test_bad_probabilities_rejected():
    with pytest.raises(ConfigError):
        JumpDistribution.discrete([[1.0], [-1.0]], [0.6, 0.5])
    with pytest.raises(ConfigError):
        JumpDistribution.uniform_annulus(1.0, 0.5)
    with pytest.raises(ConfigError):
        LevyModel(intensity=-1.0, jump_dist=JumpDistribution.uniform_box(1.0))


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------

def test_no_jumps_when_intensity_zero():
    model = LevyModel(intensity=0.0, jump_dist=JumpDistribution.uniform_box(1.0))
    path = sample_path(model, 1.0, 6, master_seed=1, path_index=0)
    assert path.jump_times.size == 0
    assert np.all(path.comp_per_cell == 0.0)
    for t in (0.25, 0.5, 1.0):
        assert np.all(path.levy_value(t) == 0.0)


def test_symmetric_atoms_have_zero_compensator():
    path = sample_path(symmetric_unit_atoms(), 1.0, 6, master_seed=1, path_index=0)
    assert np.all(path.compensator_rate == 0.0)
    assert np.all(path.comp_per_cell == 0.0)


def test_mean_jump_count_matches_poisson():
    # Poisson(2) over 10^4 paths; CLT band 2 +- 3*sqrt(2)/100
    model = symmetric_unit_atoms(intensity=2.0)
    counts = [sample_path(model, 1.0, 0, master_seed=314, path_index=i).jump_times.size
              for i in range(10_000)]
    assert 1.94 <= np.mean(counts) <= 2.06


def test_jump_times_sorted_within_horizon():
    model = symmetric_unit_atoms(intensity=20.0)
    path = sample_path(model, 2.0, 5, master_seed=9, path_index=3)
    assert np.all(np.diff(path.jump_times) > 0.0)
    assert path.jump_times[0] > 0.0 and path.jump_times[-1] <= 2.0


def test_sampling_is_deterministic_and_indexed():
    model = symmetric_unit_atoms()
    a = sample_path(model, 1.0, 8, master_seed=5, path_index=7)
    b = sample_path(model, 1.0, 8, master_seed=5, path_index=7)
    c = sample_path(model, 1.0, 8, master_seed=5, path_index=8)
    assert np.array_equal(a.brownian_increments, b.brownian_increments)
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.jump_sizes, b.jump_sizes)
    assert not np.array_equal(a.brownian_increments, c.brownian_increments)


def test_brownian_stream_independent_of_jump_model():
    # purpose-tagged streams: changing the jump law must not move the Brownian part
    lean = LevyModel(intensity=0.5, jump_dist=JumpDistribution.uniform_box(1.0))
    busy = LevyModel(intensity=20.0, jump_dist=JumpDistribution.uniform_box(1.0))
    a = sample_path(lean, 1.0, 7, master_seed=11, path_index=2)
    b = sample_path(busy, 1.0, 7, master_seed=11, path_index=2)
    assert np.array_equal(a.brownian_increments, b.brownian_increments)


def test_guards_on_level_and_horizon():
    model = symmetric_unit_atoms()
    with pytest.raises(ConfigError):
        sample_path(model, 1.0, 31, master_seed=0, path_index=0)
    with pytest.raises(ConfigError):
        sample_path(model, 1.0, -1, master_seed=0, path_index=0)
    with pytest.raises(ConfigError):
        sample_path(model, 0.0, 4, master_seed=0, path_index=0)


# ---------------------------------------------------------------------------
# Increments: exactness of aggregation
# ---------------------------------------------------------------------------

def test_increments_zero_window():
    path = sample_path(symmetric_unit_atoms(), 1.0, 6, master_seed=2, path_index=0)
    d_w, d_z = increments(path, 0.5, 0.5)
    assert np.all(d_w == 0.0) and np.all(d_z == 0.0)


def test_single_jump_window():
    path = DrivingPath(horizon=1.0, level=4,
                       brownian_increments=np.zeros((16, 1)),
                       jump_times=np.array([0.3]),
                       jump_sizes=np.array([[0.75]]),
                       compensator_rate=np.zeros(1),
                       comp_per_cell=np.zeros(1))
    _, d_z = path.increments(0.25, 0.5)
    assert d_z[0] == 0.75
    _, d_z = path.increments(0.5, 1.0)
    assert d_z[0] == 0.0


def test_telescoping_is_bit_exact():
    model = LevyModel(intensity=3.0,
                      jump_dist=JumpDistribution.uniform_annulus(0.2, 1.0, 2))
    path = sample_path(model, 1.0, 8, master_seed=6, path_index=1)
    full_w, full_z = path.increments(0.0, 1.0)
    for k in (1, 2, 5, 8):
        n = 2 ** k
        acc_w = np.zeros(2)
        acc_z = np.zeros(2)
        for i in range(n):
            d_w, d_z = path.increments(i / n, (i + 1) / n)
            acc_w += d_w
            acc_z += d_z
        assert np.array_equal(acc_w, full_w)
        assert np.array_equal(acc_z, full_z)


def test_adjacent_windows_add_exactly():
    model = LevyModel(intensity=4.0, jump_dist=JumpDistribution.uniform_box(1.0))
    path = sample_path(model, 1.0, 9, master_seed=8, path_index=0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        i, j, k = sorted(rng.integers(0, path.n_cells + 1, size=3))
        w1, z1 = path.increments_by_index(i, j)
        w2, z2 = path.increments_by_index(j, k)
        w3, z3 = path.increments_by_index(i, k)
        assert np.array_equal(w1 + w2, w3)
        assert np.array_equal(z1 + z2, z3)


def test_cell_increments_match_window_calls():
    model = LevyModel(intensity=5.0, jump_dist=JumpDistribution.uniform_annulus(0.5, 1.0))
    path = sample_path(model, 1.0, 8, master_seed=3, path_index=2)
    for stride in (1, 4, 16):
        d_w, d_z = path.cell_increments(stride)
        for k in range(path.n_cells // stride):
            w, z = path.increments_by_index(k * stride, (k + 1) * stride)
            assert np.array_equal(d_w[k], w)
            assert np.array_equal(d_z[k], z)


def test_values_live_on_the_dyadic_lattice():
    model = LevyModel(intensity=3.0, jump_dist=JumpDistribution.two_sided_exponential(2.0, cut=3.0))
    dist = JumpDistribution.discrete([[0.3], [-0.7]], [0.5, 0.5])
    skewed = LevyModel(intensity=2.0, jump_dist=dist)
    for model_ in (model, skewed):
        path = sample_path(model_, 1.0, 7, master_seed=12, path_index=0)
        assert np.all(path.brownian_increments / INCREMENT_QUANTUM
                      == np.round(path.brownian_increments / INCREMENT_QUANTUM))
        assert np.all(path.jump_sizes / INCREMENT_QUANTUM
                      == np.round(path.jump_sizes / INCREMENT_QUANTUM))
        assert np.all(path.comp_per_cell / COMPENSATOR_QUANTUM
                      == np.round(path.comp_per_cell / COMPENSATOR_QUANTUM))


def test_compensator_consistency():
    dist = JumpDistribution.discrete([[0.4], [1.0]], [0.5, 0.5])
    model = LevyModel(intensity=3.0, jump_dist=dist)
    assert np.allclose(model.compensator_rate, [-3.0 * 0.7], atol=1e-15)
    path = sample_path(model, 1.0, 10, master_seed=0, path_index=0)
    assert np.array_equal(path.compensator_rate, model.compensator_rate)
    # per-cell lattice value approximates rate * h_min to high relative accuracy
    assert path.comp_per_cell[0] == pytest.approx(-2.1 * path.h_min, rel=1e-6)


def test_compensated_process_has_zero_mean():
    dist = JumpDistribution.discrete([[0.4], [1.0]], [0.5, 0.5])
    model = LevyModel(intensity=3.0, jump_dist=dist)
    n_paths = 3000
    total = np.zeros(1)
    for i in range(n_paths):
        total += sample_path(model, 1.0, 0, master_seed=77, path_index=i).levy_value(1.0)
    band = 4.0 * math.sqrt(model.second_moment_integral * 1.0 / n_paths)
    assert abs(total[0] / n_paths) <= band


def test_jump_counts_independent_on_disjoint_intervals():
    model = symmetric_unit_atoms(intensity=3.0)
    passes = 0
    for rep in range(10):
        first, second = [], []
        for i in range(400):
            path = sample_path(model, 1.0, 4, master_seed=1000 + rep, path_index=i)
            first.append(np.sum(path.jump_times <= 0.5))
            second.append(np.sum(path.jump_times > 0.5))
        table = np.zeros((5, 5))
        for n1, n2 in zip(first, second):
            table[min(n1, 4), min(n2, 4)] += 1
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        _, p_value, _, _ = stats.chi2_contingency(table)
        passes += p_value > 0.001
    assert passes >= 6


def test_off_grid_time_rejected():
    path = sample_path(symmetric_unit_atoms(), 1.0, 4, master_seed=0, path_index=0)
    with pytest.raises(ConfigError):
        path.increments(0.0, 0.3)
    with pytest.raises(ConfigError):
        path.increments(0.5, 1.5)


def test_jump_size_replacement():
    model = symmetric_unit_atoms(intensity=10.0)
    path = sample_path(model, 1.0, 6, master_seed=21, path_index=0)
    assert path.jump_times.size > 0
    bumped = path.with_jump_size(0, [2.5])
    assert bumped.jump_sizes[0, 0] == pytest.approx(2.5, abs=1e-9)
    assert np.array_equal(bumped.jump_times, path.jump_times)
    assert path.jump_sizes[0, 0] != bumped.jump_sizes[0, 0]


# ---------------------------------------------------------------------------
# Small-time moment ratios
# ---------------------------------------------------------------------------

def test_moment_ratio_matches_gaussian_closed_form():
    # lambda=0, p=2, m=1: E (h + |W_h|)^2 = h^2 + 2h sqrt(2h/pi) + h
    model = LevyModel(intensity=0.0, jump_dist=JumpDistribution.uniform_box(1.0))
    h_grid = [2.0 ** -4, 2.0 ** -8]
    rows = moment_lemma_check(model, 2.0, 0.0, 0.0, 0.0, h_grid, 200_000,
                              master_seed=13)
    for row in rows:
        h = row.h
        expected = (h * h + 2.0 * h * math.sqrt(2.0 * h / math.pi) + h) / h
        assert abs(row.ratio - expected) <= 3.0 * row.ci_half_width + 1e-9


def test_moment_ratio_deterministic():
    model = symmetric_unit_atoms(intensity=1.0)
    kwargs = dict(h_grid=[2.0 ** -6], n_samples=20_000, master_seed=3)
    a = moment_lemma_check(model, 2.0, 0.1, 0.2, 1.0, **kwargs)
    b = moment_lemma_check(model, 2.0, 0.1, 0.2, 1.0, **kwargs)
    assert a[0].ratio == b[0].ratio


def test_moment_ratios_stay_bounded_for_unit_jumps():
    model = symmetric_unit_atoms(intensity=1.0)
    h_grid = [2.0 ** -e for e in range(6, 11)]
    rows = moment_lemma_check(model, 2.0, 0.0, 0.0, 1.0, h_grid, 100_000,
                              master_seed=2)
    ratios = [row.ratio for row in rows]
    assert max(ratios) / min(ratios) < 3.0


def test_moment_check_propagates_divergence():
    model = LevyModel(intensity=1.0,
                      jump_dist=JumpDistribution.two_sided_exponential(1.5))
    with pytest.raises(MomentDivergenceError):
        moment_lemma_check(model, 2.0, 0.0, 0.0, 1.0, [0.01], 100)
