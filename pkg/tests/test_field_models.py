import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magnav_online import field_models as fm
from magnav_online.errors import ConfigurationError, DomainError
from oracles import bump_gradient, bump_value, central_diff, rel_err


# --- maps ----------------------------------------------------------------------------

def test_bump_peak(single_bump):
    assert fm.map_value(single_bump, (0.0, 0.0)) == 100.0


def test_bump_at_one_width(single_bump):
    assert fm.map_value(single_bump, (30.0, 40.0)) == pytest.approx(100 * math.exp(-0.5), rel=1e-15)
    assert fm.map_value(single_bump, (50.0, 0.0)) == pytest.approx(60.653, abs=1e-3)


def test_grid_node_returns_stored_value(rng):
    vals = rng.normal(size=(4, 5))
    m = fm.AnomalyMap2D.grid(vals, (10.0, -5.0), 2.0)
    for i in range(4):
        for j in range(5):
            assert fm.map_value(m, (10.0 + 2.0 * j, -5.0 + 2.0 * i)) == vals[i, j]


def test_grid_is_bilinear():
    m = fm.AnomalyMap2D.grid([[0.0, 1.0], [2.0, 3.0]], (0.0, 0.0), 1.0)
    # f(x, y) = x + 2y is reproduced exactly by bilinear interpolation
    for x, y in [(0.25, 0.5), (0.9, 0.1), (0.5, 0.5)]:
        assert fm.map_value(m, (x, y)) == pytest.approx(x + 2 * y, abs=1e-15)


def test_grid_out_of_domain_raises():
    m = fm.AnomalyMap2D.grid(np.zeros((3, 3)), (0.0, 0.0), 1.0)
    with pytest.raises(DomainError):
        fm.map_value(m, (2.5, 1.0))
    with pytest.raises(DomainError):
        fm.map_gradient(m, (2.0, 1.0))


@pytest.mark.parametrize("kwargs", [dict(values=np.zeros((1, 3)), origin=(0, 0), spacing=1.0),
                                    dict(values=np.zeros((3, 3)), origin=(0, 0), spacing=0.0)])
def test_invalid_grid_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        fm.AnomalyMap2D.grid(**kwargs)


def test_invalid_bump_width_rejected():
    with pytest.raises(ConfigurationError):
        fm.AnomalyMap2D.gaussian_sum([fm.GaussianBump((0, 0), 1.0, 0.0)])


def test_constant_grid_has_zero_gradient():
    m = fm.AnomalyMap2D.grid(np.full((4, 4), 7.0), (0.0, 0.0), 10.0)
    assert not np.any(fm.map_gradient(m, (15.0, 12.0)))


def test_gradient_zero_at_peak(single_bump):
    assert np.max(np.abs(fm.map_gradient(single_bump, (0.0, 0.0)))) < 1e-9


def test_gradient_matches_closed_form(rng, default_map):
    worst = 0.0
    for _ in range(200):
        pos = rng.uniform(100.0, 1900.0, size=2)
        exact = sum(bump_gradient(b.center, b.amplitude, b.width, pos) for b in default_map.bumps)
        worst = max(worst, rel_err(fm.map_gradient(default_map, pos), exact))
        assert rel_err(fm.gaussian_sum_gradient(default_map, pos), exact) < 1e-12
    assert worst < 1e-6


def test_map_value_matches_closed_form(rng, default_map):
    for _ in range(50):
        pos = rng.uniform(0.0, 2000.0, size=2)
        exact = sum(bump_value(b.center, b.amplitude, b.width, pos) for b in default_map.bumps)
        assert fm.map_value(default_map, pos) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_map_continuity(rng, default_map):
    grid_map = fm.AnomalyMap2D.grid(rng.normal(size=(6, 6)) * 100, (0.0, 0.0), 50.0)
    for m, lo, hi in ((default_map, 0.0, 2000.0), (grid_map, 0.0, 249.0)):
        for _ in range(50):
            p = rng.uniform(lo, hi, size=2)
            assert abs(fm.map_value(m, p) - fm.map_value(m, p + 1e-6)) < 1e-3


def test_random_bumps_is_seeded():
    a, b = fm.AnomalyMap2D.random_bumps(seed=3), fm.AnomalyMap2D.random_bumps(seed=3)
    assert a == b and a != fm.AnomalyMap2D.random_bumps(seed=4)
    assert len(a.bumps) == 12 and a.domain == (0.0, 2000.0, 0.0, 2000.0)
    amps = np.abs([x.amplitude for x in a.bumps])
    assert np.all((amps >= 50) & (amps <= 300))


def test_grid_csv_round_trip(tmp_path, rng):
    m = fm.AnomalyMap2D.grid(rng.normal(size=(3, 4)), (1.5, -2.25), 0.5)
    fm.save_grid_csv(m, tmp_path / "g.csv")
    back = fm.load_grid_csv(tmp_path / "g.csv")
    assert np.array_equal(back.values, m.values) and back.origin == m.origin and back.spacing == m.spacing


def test_grid_csv_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("2,2,0,0,1\n1,2\n3\n")
    with pytest.raises(ConfigurationError):
        fm.load_grid_csv(p)
    p.write_text("2,2,zero,0,1\n1,2\n3,4\n")
    with pytest.raises(ConfigurationError):
        fm.load_grid_csv(p)


# --- interference --------------------------------------------------------------------

def test_interference_zero_beta(zero_truth, rng):
    assert fm.interference_truth(zero_truth, rng.normal(size=5)) == 0.0


def test_interference_sine_term():
    t = fm.InterferenceTruth((1.0, 0.0, 0, 0, 0, 0, 0))
    assert fm.interference_truth(t, [123.0, 0, 0, 0, 0]) == 0.0
    t = fm.InterferenceTruth((1.0, math.pi / 2, 0, 0, 0, 0, 0))
    assert fm.interference_truth(t, [1.0, 0, 0, 0, 0]) == pytest.approx(1.0, abs=1e-15)


def test_interference_heading_term():
    t = fm.InterferenceTruth((0, 0, 0, 0, 0, 5.0, 0))
    assert fm.interference_truth(t, [0, 0, 0, math.pi, 0]) == -5.0


def test_interference_validation():
    with pytest.raises(ConfigurationError):
        fm.InterferenceTruth((1.0,) * 6)
    with pytest.raises(ConfigurationError):
        fm.InterferenceTruth((1.0,) * 7, c=0.0)
    with pytest.raises(ConfigurationError):
        fm.interference_truth(fm.InterferenceTruth((1.0,) * 7), [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=7, max_size=7),
       st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5))
def test_interference_even_in_speed_and_periodic_in_heading(beta, f):
    t = fm.InterferenceTruth(tuple(beta))
    base = fm.interference_truth(t, f)
    flipped = list(f)
    flipped[4] = -f[4]
    assert fm.interference_truth(t, flipped) == base
    turned = list(f)
    turned[3] = f[3] + 2 * math.pi
    assert fm.interference_truth(t, turned) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_jacobian_speed_partial_is_s_squared(rng):
    t = fm.InterferenceTruth(tuple(rng.normal(size=7)))
    for s in (0.0, 3.0, -20.0):
        assert fm.interference_jacobian_beta(t, [1, 2, 3, 4, s])[6] == s * s


def test_jacobian_zero_beta_kills_frequency_partials(zero_truth, rng):
    J = fm.interference_jacobian_beta(zero_truth, rng.normal(size=5) * 100)
    assert J[1] == 0.0 and J[3] == 0.0


def test_jacobian_beta_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(200):
        beta = rng.normal(size=7) * [1, 0.01, 1, 0.01, 1, 1, 0.01]
        t = fm.InterferenceTruth(tuple(beta))
        f = np.array([*rng.uniform(0, 2000, 2), rng.normal(0, 200), rng.uniform(-np.pi, np.pi), rng.uniform(0, 30)])
        fd = central_diff(lambda b: fm.interference_value(b, t.c, f), beta, step=1e-7, relative=True)
        worst = max(worst, rel_err(fm.interference_jacobian_beta(t, f), fd))
    assert worst < 1e-6
