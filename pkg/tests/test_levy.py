import math

import numpy as np
import pytest

from side_fd.exceptions import InvalidParamsError, NonIntegrableError, UnknownCellError
from side_fd.levy import (
    CellCoefficients,
    LevyMeasure,
    build_cell_coefficients,
    incomplete_gamma_moment,
    measure_integral,
    segment_partition,
    varsigma,
)


def test_measure_rejects_bad_parameters():
    with pytest.raises(InvalidParamsError):
        LevyMeasure(alpha_plus=2.0)
    with pytest.raises(InvalidParamsError):
        LevyMeasure(c_minus=-1.0)


def test_density_shape(measure):
    assert measure.density(0.0) == 0.0
    assert measure.density(3.5) == 0.0
    assert measure.density(-0.5) == pytest.approx(math.exp(-0.5) * 0.5**-2.1)
    assert measure.is_symmetric
    assert LevyMeasure.zero().is_zero


def test_integral_outside_support_is_zero(measure):
    assert measure_integral(measure, 4.0, 5.0, 0) == 0.0
    assert measure_integral(measure, -9.0, -3.5, 2) == 0.0


def test_untempered_alpha_one_second_moment():
    m = LevyMeasure(beta_minus=0.0, beta_plus=0.0, alpha_minus=1.0, alpha_plus=1.0)
    delta = 0.3
    assert measure_integral(m, 0.0, delta, 2) == pytest.approx(delta, abs=1e-10)


def test_singular_integrals_are_rejected(measure):
    with pytest.raises(NonIntegrableError):
        measure_integral(measure, -0.1, 0.1, 0)
    with pytest.raises(NonIntegrableError):
        measure_integral(measure, 0.0, 0.1, 1)


def test_varsigma_closed_form_without_tempering():
    alpha = 1.1
    m = LevyMeasure(beta_minus=0.0, beta_plus=0.0, alpha_minus=alpha, alpha_plus=alpha)
    delta = 0.5
    s1, s2, s = varsigma(m, delta)
    expected = 2.0 * delta ** (2 - alpha) / (2 - alpha)
    assert s1 == pytest.approx(expected, rel=1e-10)
    assert s2 == s1
    assert s == pytest.approx(2 * expected, rel=1e-10)


def test_varsigma_matches_incomplete_gamma(measure):
    s1, _, _ = varsigma(measure, 0.01)
    assert abs(s1 - incomplete_gamma_moment(measure, 0.01)) <= 1e-8


def test_varsigma_is_monotone(measure):
    values = [varsigma(measure, d)[2] for d in (0.005, 0.01, 0.1, 1.0)]
    assert values == sorted(values)
    assert values[0] < values[1]


def test_varsigma_with_distinct_noise_measure(measure):
    s1, s2, s = varsigma(measure, 0.1, LevyMeasure.zero())
    assert s2 == 0.0 and s == s1 > 0


def test_varsigma_rejects_delta_out_of_range(measure):
    with pytest.raises(InvalidParamsError):
        varsigma(measure, 0.0)
    with pytest.raises(InvalidParamsError):
        varsigma(measure, 1.5)


def test_partition_of_origin_cell():
    p = segment_partition(0.1, 0)
    assert p.chi == 1
    assert p.indices == (0,)
    np.testing.assert_array_equal(p.theta, [0.0, 1.0])
    np.testing.assert_array_equal(p.theta_bar, [0.5])
    np.testing.assert_array_equal(p.theta_tilde, [1.0])


def test_partition_of_first_cells():
    p = segment_partition(0.1, 1)
    assert p.chi == 2 and p.indices == (0, 1)
    np.testing.assert_allclose(p.theta, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(p.theta_bar, [3 / 8, 1 / 8], atol=1e-16)
    np.testing.assert_allclose(p.theta_tilde, [0.5, 0.5])

    p = segment_partition(0.1, -2)
    assert p.chi == 3 and p.indices == (0, -1, -2)
    np.testing.assert_allclose(p.theta, [0.0, 0.25, 0.75, 1.0])
    np.testing.assert_allclose(p.theta_bar, [7 / 32, 8 / 32, 1 / 32], atol=1e-16)


def test_partition_sums_for_many_cells():
    for k in range(-512, 513):
        p = segment_partition(2.0**-5, k)
        assert abs(math.fsum(p.theta_bar) - 0.5) <= 1e-14
        assert abs(math.fsum(p.theta_tilde) - 1.0) <= 1e-14
        assert p.indices[0] == 0 and p.indices[-1] == k
        if k:
            assert p.chi == abs(k) + 1


def test_partition_legs_stay_within_one_cell():
    h = 0.1
    for k in (1, 3, -4, 7):
        p = segment_partition(h, k)
        for lo, hi, r in zip(p.theta[:-1], p.theta[1:], p.indices):
            for theta in np.linspace(lo, hi, 7)[1:-1]:
                assert abs(theta * h * k - h * r) <= h + 1e-15


def test_cell_tables_match_global_integrals(measure):
    h, delta = 2.0**-4, 0.01
    cc = build_cell_coefficients(measure, h, delta)
    s1, _, _ = varsigma(measure, delta)
    assert math.fsum(cc.zeta.values()) == pytest.approx(s1, abs=1e-10)
    large = measure_integral(measure, delta, 3.0, 0) + measure_integral(measure, -3.0, -delta, 0)
    assert abs(cc.total_mass - large) <= 1e-8
    assert all(v >= 0 for v in cc.zeta.values())
    assert all(v >= 0 for v in cc.zeta_bar.values())


def test_cell_tables_are_symmetric(measure):
    cc = build_cell_coefficients(measure, 2.0**-6, 0.01)
    for k, v in cc.zeta.items():
        assert cc.zeta[-k] == pytest.approx(v, rel=1e-12)
    for k, v in cc.zeta_bar.items():
        assert cc.zeta_bar[-k] == pytest.approx(v, rel=1e-12)
        assert cc.xi_bar[-k] == pytest.approx(-cc.xi_bar[k], rel=1e-12, abs=1e-14)
    assert abs(cc.total_first_moment) <= 1e-10


def test_origin_cell_has_no_large_part_when_inside_delta(measure):
    cc = build_cell_coefficients(measure, 0.02, 0.01)
    assert cc.zeta_bar.get(0, 0.0) == 0.0


@pytest.mark.parametrize("exponent", [2, 3, 4, 5])
def test_only_origin_cell_is_small_for_coarse_grids(measure, exponent):
    cc = build_cell_coefficients(measure, 2.0**-exponent, 0.01)
    assert cc.small_cells == (0,)
    s1, _, _ = varsigma(measure, 0.01)
    assert cc.zeta[0] == pytest.approx(s1, rel=1e-10)


@pytest.mark.parametrize("exponent", [6, 7])
def test_three_small_cells_for_fine_grids(measure, exponent):
    cc = build_cell_coefficients(measure, 2.0**-exponent, 0.01)
    assert cc.small_cells == (-1, 0, 1)
    assert all(cc.zeta[k] > 0 for k in cc.small_cells)


def test_partition_lookup(measure):
    cc = build_cell_coefficients(measure, 2.0**-6, 0.01)
    assert cc.partition(1).indices == (0, 1)
    with pytest.raises(UnknownCellError):
        cc.partition(40)


def test_small_jump_first_moments_cancel(measure):
    cc = build_cell_coefficients(measure, 2.0**-7, 0.01)
    moments = cc.small_jump_first_moments(2.0**-8)
    assert moments[0] == pytest.approx(0.0, abs=1e-12)
    assert moments[1] > 0
    assert moments[-1] == pytest.approx(-moments[1], rel=1e-10)
    assert cc.small_jump_first_moments(2.0**-8) is moments


def test_cell_tables_json_round_trip(measure):
    cc = build_cell_coefficients(measure, 2.0**-5, 0.01)
    restored = CellCoefficients.from_json(cc.to_json())
    assert restored.h == cc.h and restored.delta == cc.delta
    assert restored.measure == cc.measure
    for name in ("zeta", "zeta_bar", "xi_bar"):
        before, loaded = getattr(cc, name), getattr(restored, name)
        assert before.keys() == loaded.keys()
        for k in before:
            assert abs(before[k] - loaded[k]) <= 1e-12
    assert restored.partitions.keys() == cc.partitions.keys()
