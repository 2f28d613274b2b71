import math

import numpy as np
import pytest

from ipml import kernel_constants as kc
from oracles import C0_EXACT, limit_constants


@pytest.fixture(scope="module")
def table():
    return kc.default_table()


def test_table_shape(table):
    assert table.K_max >= 2
    assert len(table.directions) >= 2 * table.K_max + 3
    for a, b in table.directions:
        assert abs(a * a + b * b - 1) < 1e-12
    for i in range(table.K_max + 1):
        for j in range(i + 1):
            for kind in kc.KINDS:
                assert (i, j, kind) in table.values


def test_sampled_values_match_symbol_oracle(table):
    """Every shipped sample lies within its stated error of the series oracle."""
    worst = []
    for d, (a, b) in enumerate(table.directions):
        cs, cc = limit_constants(a, b, table.K_max)
        for (i, j, kind), vals in table.values.items():
            ref = (cs if kind == "sin" else cc)[i, j]
            err = table.errors[(i, j, kind)][d]
            gap = abs(vals[d] - ref)
            if gap > err + 1e-12:
                worst.append((i, j, kind, d, gap, err))
    assert not worst, worst[:5]


@pytest.mark.parametrize("phi", [0.3, 1.1, 2.5, -2.0])
def test_interpolated_direction_matches_oracle(table, phi):
    a, b = math.sin(phi), math.cos(phi)
    cs, cc = limit_constants(a, b, table.K_max)
    for (i, j, kind) in table.values:
        ref = (cs if kind == "sin" else cc)[i, j]
        # trig fit through the samples: error budget of two sample errors
        assert abs(table.value(i, j, kind, a, b) - ref) <= 2 * table.error(i, j, kind) + 1e-12


def test_C0_is_two_pi(table):
    assert abs(table.C0 - C0_EXACT) < 1e-6


def test_C0_linear_in_b(table):
    for phi in np.linspace(-math.pi, math.pi, 9):
        a, b = math.sin(phi), math.cos(phi)
        assert abs(table.value(0, 0, "cos", a, b) - b * table.C0) < 1e-6


def test_parity_zero_pattern():
    assert kc.parity_zero(0, "sin") and kc.parity_zero(2, "sin")
    assert kc.parity_zero(1, "cos") and kc.parity_zero(3, "cos")
    assert not kc.parity_zero(1, "sin") and not kc.parity_zero(0, "cos")


def test_shipped_table_respects_parity(table):
    assert table.parity_violations() == []
    for (i, j, kind), vals in table.values.items():
        if kc.parity_zero(i, kind):
            assert np.max(np.abs(vals)) <= max(table.error(i, j, kind), 1e-6)


def test_corrupted_table_is_detected(table):
    values = {k: v.copy() for k, v in table.values.items()}
    values[(2, 1, "sin")][3] = 0.5
    bad = kc.ConstantTable(table.K_max, table.directions, values, table.errors)
    hits = bad.parity_violations()
    assert [(i, j, k) for i, j, k, *_ in hits] == [(2, 1, "sin")]


def test_structural_coefficients(table):
    a, b = 0.6, 0.8
    cs, cc = table.coefficients(a, b, 2)
    assert cc[0, 0] == b * table.C0
    assert cs[0, 0] == 0.0 and cs[2, 1] == 0.0 and cc[1, 0] == 0.0
    raw_s, raw_c = table.coefficients(a, b, 2, structural=False)
    assert abs(raw_c[0, 0] - cc[0, 0]) < 1e-6
    assert abs(raw_s[2, 1]) < 1e-5
    with pytest.raises(kc.MissingConstants):
        table.coefficients(a, b, table.K_max + 1)
    with pytest.raises(kc.InvalidDirection):
        table.coefficients(1.0, 1.0, 1)


def test_csv_round_trip(table, tmp_path):
    p = tmp_path / "t.csv"
    table.save(p)
    back = kc.ConstantTable.load(p)
    assert back.to_csv() == table.to_csv()
    for key in table.values:
        np.testing.assert_array_equal(back.values[key], table.values[key])


def test_missing_entry_raises(table):
    with pytest.raises(kc.MissingConstants):
        table.value(table.K_max + 1, 0, "sin", 0.0, 1.0)


def test_direction_and_index_validation():
    with pytest.raises(kc.InvalidDirection):
        kc.polar_T_table([(0, 0)], 0.5, 0.5, [64.0])
    with pytest.raises(ValueError):
        kc.oscillatory_T(1, 2, "sin", 0.0, 1.0, 64.0)
    with pytest.raises(ValueError):
        kc.oscillatory_T(0, 0, "tan", 0.0, 1.0, 64.0)


def test_polar_and_cartesian_rules_agree_at_moderate_N():
    """Two unrelated quadratures of the leading integral at N = 256."""
    polar = kc.oscillatory_T(0, 0, "cos", 0.0, 1.0, 256.0, tol=1e-10)
    cart, qerr = kc.cartesian_T00(16.0, tol=1e-11)
    assert abs(polar - cart) < 1e-7 + qerr


def test_leading_limit_march():
    """The march settles on 2 pi with an honest error and super-polynomial tail decay."""
    rec = kc.cauchy_march([(0, 0)], 0.0, 1.0)[(0, 0, "cos")]
    assert abs(rec.value - C0_EXACT) <= rec.error
    d = np.abs(np.diff(rec.T))
    assert d[-1] < 1e-8 * d[0]
    assert rec.exponent >= 3.0
