import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ipml import solution_op as so
from ipml.fields import ResolutionError


def test_truncation_degree():
    assert so.truncation_degree(0.125, None) == (64, False)
    assert so.truncation_degree(0.125) == (so.M_CAP, True)
    assert so.truncation_degree(0.24, None) == (18, False)
    assert so.truncation_degree(0.5 - 0.26, 100) == (18, False)
    with pytest.raises(ValueError):
        so.truncation_degree(0.3)


def test_ramp():
    assert so.ramp(0.4, 0.5, 4.0) == (0.0, 0.0)
    assert so.ramp(0.5 + 0.125, 0.5, 4.0) == (0.5, 4.0)
    assert so.ramp(0.9, 0.5, 4.0) == (1.0, 0.0)


def test_label_sum_basics():
    g = np.ones((4, 4))
    S = so.LabelSum({(0, "sin"): g, (0, "cos"): 2 * g, (3, "sin"): g})
    assert set(S.terms) == {(0, "cos"), (3, "sin")}
    assert S.frequencies == [0, 3] and S.max_frequency == 3
    T = S + S.scaled(2.0)
    np.testing.assert_array_equal(T.terms[(3, "sin")], 3 * g)
    assert (T - T).max_abs() == 0.0
    with pytest.raises(ValueError):
        S.add((1, "tan"), g)
    with pytest.raises(ValueError):
        S.add((-1, "sin"), g)


_arrays = hnp.arrays(np.float64, (3,), elements=st.floats(-2, 2))
_keys = st.tuples(st.integers(0, 4), st.sampled_from(so.CHANNELS))


@settings(max_examples=60)
@given(st.dictionaries(_keys, _arrays, min_size=1, max_size=4), st.dictionaries(_keys, _arrays, min_size=1, max_size=4))
def test_trig_product_is_pointwise_product(a, b):
    A, B = so.LabelSum(a), so.LabelSum(b)
    theta = np.array([0.3, -1.7, 2.9])
    prod = so.trig_product(A, B)
    np.testing.assert_allclose(prod.evaluate(theta), A.evaluate(theta) * B.evaluate(theta), atol=1e-12)
    if A.terms and B.terms:
        assert prod.max_frequency <= A.max_frequency + B.max_frequency


@given(st.dictionaries(_keys, _arrays, min_size=1, max_size=5))
def test_projectors(a):
    S = so.LabelSum(a)
    p0 = so.frequency_project(S, "P0")
    pp = so.frequency_project(S, "P>0")
    theta = np.array([0.1, 1.0, 2.0])
    recon = pp.evaluate(theta) + (0 if p0 is None else p0)
    np.testing.assert_allclose(recon, S.evaluate(theta), atol=1e-14)
    assert so.frequency_project(pp, "P0") is None
    assert so.frequency_project(pp, "P>0").terms.keys() == pp.terms.keys()
    with pytest.raises(ValueError):
        so.frequency_project(S, "P1")


def _stub_window(rate: float, n: int, t0: float = 0.0):
    times = np.linspace(t0, 1.0, n + 1)
    return SimpleNamespace(step=float(times[1] - times[0]), log_amp=rate * (times - 1.0), times=times)


@pytest.mark.parametrize("rule", ["simpson", "cubic", "quadratic"])
def test_duhamel_quadrature_order(rule):
    """int_0^t e^{c(t-s)} cos(s) ds against its closed form, under grid refinement.

    The trapezoid start on the first interval caps the global order at three.
    """
    c = 1.3

    def closed(t):
        # solution of y' = c y + cos t, y(0) = 0
        return (math.sin(t) - c * math.cos(t) + c * math.exp(c * t)) / (1 + c * c)

    errs = []
    for n in (40, 80, 160):
        w = _stub_window(c, n)
        acc = so.DuhamelAccumulator(w, rule)
        g = np.ones(2)
        out = [acc.push(so.LabelSum({(1, "sin"): math.cos(t) * g})) for t in w.times]
        errs.append(max(abs(o.terms[(1, "sin")][0] - closed(t)) if o.terms else abs(closed(t))
                        for o, t in zip(out, w.times)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 2.9), (errs, rates)


def test_duhamel_linearity():
    w = _stub_window(0.7, 20)
    F = [so.LabelSum({(1, "sin"): np.full(2, t), (2, "cos"): np.full(2, t * t)}) for t in w.times]
    G = [so.LabelSum({(1, "sin"): np.full(2, 1.0 - t)}) for t in w.times]
    a, b = so.duhamel(F, w), so.duhamel(G, w)
    ab = so.duhamel([f.scaled(2.0) + g for f, g in zip(F, G)], w)
    for x, y, z in zip(a, b, ab):
        diff = z - x.scaled(2.0) - y
        assert diff.max_abs() < 1e-14


# -- a small layer build ------------------------------------------------------


@pytest.fixture(scope="module")
def build():
    bg = so.seed_background(4.0, 256, 1.0, 0.125)
    return so.build_layer(bg, 4.0, 0.125, 64.0, 0.125, j_max=2, label_points=128, record_offsets=(0.1,))


def test_build_runs_clean(build):
    led = build.ledger
    assert led.guard is None
    assert build.window.t0 >= build.nominal_window[0]
    assert all(f <= 2 ** (j + 1) for j, f in led.max_frequencies.items())
    assert led.support_leak < 1e-3


def test_apply_S(build):
    w = build.window
    led = build.ledger
    t = float(w.times[len(w.times) // 3])
    S0 = led.seed(t)
    same = so.apply_S(S0, t, t, w)
    assert all(np.array_equal(same.terms[k], g) for k, g in S0.terms.items())
    t2 = float(w.times[len(w.times) // 2])
    back = so.apply_S(so.apply_S(S0, t, t2, w), t2, t, w)
    for k, g in S0.terms.items():
        np.testing.assert_allclose(back.terms[k], g, rtol=1e-14)
    mixed = so.apply_S(S0.scaled(2.0) + S0, t, t2, w)
    np.testing.assert_allclose(mixed.terms[(1, "sin")], 3 * so.apply_S(S0, t, t2, w).terms[(1, "sin")])


def test_evolution_identities(build):
    led, w = build.ledger, build.window
    k = sorted(led.snapshots)[3]
    t = float(w.times[k])
    pts = so.probe_points(led.grid, led.support, 10, np.random.default_rng(0))
    assert so.solution_operator_identity(led, led.seed(t), float(w.times[k - 50]), t, pts).relative < 1e-5
    assert so.duhamel_identity(led, 1, t, pts).relative < 1e-5


def test_residual_refuses_coarse_grid(build):
    t = float(build.window.times[sorted(build.ledger.snapshots)[3]])
    with pytest.raises(ResolutionError):
        so.layer_residual(build.ledger, t, 1)


def test_projector_split_of_self_interaction(build):
    led = build.ledger
    k = sorted(led.snapshots)[3]
    fr = led.frame(float(build.window.times[k]))
    parts = {}
    so.structured_source(fr, led.snapshots[k].rhos, 1, parts)
    expr = parts["self"]
    p0, pp = so.frequency_project(expr, "P0"), so.frequency_project(expr, "P>0")
    whole = fr.evaluate(expr)
    split = fr.evaluate(pp) + (0 if p0 is None else p0)
    np.testing.assert_allclose(split, whole, rtol=0, atol=1e-14 * np.max(np.abs(whole)))


def test_guard_reports_instead_of_raising():
    bg = so.seed_background(4.0, 256, 1.0, 0.125)
    lb = so.build_layer(bg, 4.0, 0.125, 4096.0, 0.125, j_max=2, label_points=32, t_end=1.0)
    assert lb.ledger.guard is not None and "per wavelength" in lb.ledger.guard
    assert not lb.ledger.completed_until >= 1.0
