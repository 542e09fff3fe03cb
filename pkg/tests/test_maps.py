import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dephasing.maps import (
    TWO_PI,
    MapParams,
    PhasePoint,
    action_series,
    inverse_step,
    iter_action,
    jacobian,
    lyapunov_exponent,
    perturbation_potential,
    potential_along_orbit,
    potential_gradient,
    propagate_tangent,
    propagate_with_action,
    step_map,
    tangent_log_growth,
    trajectory,
    unstable_directions,
    wrap,
)

angles = st.floats(0.0, TWO_PI, exclude_max=True, allow_nan=False)
kicks = st.floats(0.0, 50.0)
epsilons = st.floats(-1.0, 1.0)


def mp_step(q, p, k, eps=0.0, dps=50):
    """Arbitrary-precision oracle for one map step."""
    with mpmath.workdps(dps):
        q, p = mpmath.mpf(q), mpmath.mpf(p)
        two_pi = 2 * mpmath.pi
        p1 = mpmath.fmod(p + k * mpmath.sin(q) + eps * mpmath.sin(2 * q), two_pi)
        p1 = p1 + two_pi if p1 < 0 else p1
        q1 = mpmath.fmod(q + p1, two_pi)
        q1 = q1 + two_pi if q1 < 0 else q1
        return float(q1), float(p1)


# -- single steps ----------------------------------------------------------


def test_free_rotation():
    x = step_map(PhasePoint(1.0, 0.5), MapParams(0.0))
    assert x.q == pytest.approx(1.5, abs=1e-15)
    assert x.p == pytest.approx(0.5, abs=1e-15)


def test_kicked_step_matches_high_precision():
    q0 = 0.8 * math.pi
    x = step_map(PhasePoint(q0, 0.5), MapParams(20.0))
    q_ref, p_ref = mp_step(q0, 0.5, 20)
    assert x.p == pytest.approx(p_ref, abs=1e-12)
    assert x.q == pytest.approx(q_ref, abs=1e-12)
    assert x.p == pytest.approx(5.97252, abs=5e-6)
    assert x.q == pytest.approx(2.20261, abs=5e-6)


@pytest.mark.parametrize("k", [0.0, 0.3, 20.0, 1e3])
def test_origin_is_fixed(k):
    assert step_map(PhasePoint(0.0, 0.0), MapParams(k)) == (0.0, 0.0)


@given(angles, angles, kicks, epsilons, st.booleans())
def test_step_stays_on_torus(q, p, k, eps, perturbed):
    params = MapParams(k, eps, perturbed)
    x = step_map(PhasePoint(q, p), params)
    assert 0.0 <= x.q < TWO_PI and 0.0 <= x.p < TWO_PI


@given(angles, angles, kicks, epsilons)
def test_step_agrees_with_oracle(q, p, k, eps):
    x = step_map(PhasePoint(q, p), MapParams(k, eps, True))
    q_ref, p_ref = mp_step(q, p, k, eps)
    # compare on the circle; both sides may straddle the 0 / 2pi seam
    assert abs(math.remainder(x.p - p_ref, TWO_PI)) < 1e-10
    assert abs(math.remainder(x.q - q_ref, TWO_PI)) < 1e-10


def test_wrap_edges():
    assert wrap(TWO_PI) == 0.0
    assert 0.0 <= wrap(-1e-18) < TWO_PI
    arr = wrap(np.array([-4 * math.pi + 0.1, -1e-300, 4 * math.pi - 1e-12]))
    assert np.all((arr >= 0) & (arr < TWO_PI))


def test_perturbation_switch():
    q, p = 0.7, 1.1
    eps = 0.01
    a = step_map(PhasePoint(q, p), MapParams(3.0, eps, False))
    b = step_map(PhasePoint(q, p), MapParams(3.0, eps, True))
    assert math.remainder(b.p - a.p - eps * math.sin(2 * q), TWO_PI) == pytest.approx(0, abs=1e-14)


def test_map_params_validation():
    with pytest.raises(ValueError):
        MapParams(-1.0)
    with pytest.raises(ValueError):
        MapParams(1.0, float("nan"))


# -- perturbation potential ------------------------------------------------


def test_potential_values():
    assert perturbation_potential(math.pi / 4) == pytest.approx(0.0, abs=1e-16)
    assert perturbation_potential(0.0) == 0.5


def test_potential_has_zero_mean():
    n = 10**6
    q = (np.arange(n) + 0.5) * TWO_PI / n
    assert abs(perturbation_potential(q).mean()) < 1e-9


@given(angles)
def test_kick_is_minus_gradient(q):
    h = 1e-6
    fd = (perturbation_potential(q + h) - perturbation_potential(q - h)) / (2 * h)
    assert potential_gradient(q) == pytest.approx(fd, abs=1e-8)
    assert -potential_gradient(q) == pytest.approx(math.sin(2 * q), abs=1e-15)


# -- action difference ------------------------------------------------------


def test_first_action_step():
    s = propagate_with_action(PhasePoint(0.8 * math.pi, 1.234), MapParams(20.0, 0.003), 1)
    with mpmath.workdps(30):
        ref = float(-mpmath.mpf("0.003") * mpmath.cos(mpmath.mpf("1.6") * mpmath.pi) / 2)
    assert s.delta_s[0] == 0.0
    assert s.delta_s[1] == pytest.approx(ref, rel=1e-12)
    assert s.delta_s[1] == pytest.approx(-4.635e-4, rel=1e-3)


def test_zero_epsilon_gives_zero_action():
    ds = action_series(np.array([0.3, 2.0]), np.array([1.0, 5.0]), MapParams(20.0, 0.0), 50)
    assert np.all(ds == 0.0)


def test_fixed_point_action():
    s = propagate_with_action(PhasePoint(0.0, 0.0), MapParams(20.0, 0.003), 5)
    np.testing.assert_allclose(s.delta_s, -0.003 * 0.5 * np.arange(6), rtol=1e-15)


def test_action_starts_at_exact_zero():
    ds = action_series(np.array([1.0]), np.array([2.0]), MapParams(5.0, 0.1), 3)
    assert np.signbit(ds[0, 0]) == False  # noqa: E712  (a -0.0 would fail)


@given(angles, angles, kicks, st.floats(1e-6, 1.0), st.floats(-8.0, 8.0).filter(lambda c: abs(c) > 1e-3),
       st.integers(0, 60))
def test_action_linear_in_epsilon(q, p, k, eps, c, T):
    a = propagate_with_action(PhasePoint(q, p), MapParams(k, eps), T).delta_s
    b = propagate_with_action(PhasePoint(q, p), MapParams(k, c * eps), T).delta_s
    np.testing.assert_allclose(b, c * a, rtol=1e-12, atol=0)


@given(angles, angles, kicks, epsilons)
def test_base_orbit_ignores_epsilon(q, p, k, eps):
    a = potential_along_orbit(np.array([q]), np.array([p]), MapParams(k, 0.0), 30)
    b = potential_along_orbit(np.array([q]), np.array([p]), MapParams(k, eps, True), 30)
    assert np.array_equal(a, b)


def test_iter_action_matches_batch(rng):
    q, p = rng.uniform(0, TWO_PI, (2, 50))
    params = MapParams(7.0, 0.02)
    batch = action_series(q, p, params, 40)
    streamed = np.stack(list(iter_action(q, p, params, 40)), axis=-1)
    np.testing.assert_allclose(streamed, batch, rtol=1e-12, atol=1e-15)


@given(angles, angles, st.integers(1, 20))
def test_reversal_recovers_start(q, p, T):
    params = MapParams(0.3)
    x = PhasePoint(q, p)
    for _ in range(T):
        x = step_map(x, params)
    for _ in range(T):
        x = inverse_step(x, params)
    assert abs(math.remainder(x.q - q, TWO_PI)) < 1e-6
    assert abs(math.remainder(x.p - p, TWO_PI)) < 1e-6


def test_trajectory_shape_and_start():
    tr = trajectory(PhasePoint(1.0, 2.0), MapParams(1.0), 10)
    assert tr.shape == (11, 2)
    assert tuple(tr[0]) == (1.0, 2.0)


# -- tangent map -------------------------------------------------------------


def test_shear_map_jacobian():
    frames = propagate_tangent(PhasePoint(1.0, 0.5), MapParams(0.0), 7)
    np.testing.assert_allclose(frames[-1].matrix, [[1.0, 7.0], [0.0, 1.0]], atol=1e-13)


def test_frames_match_explicit_products():
    params = MapParams(1.5)
    x0 = PhasePoint(0.4, 2.2)
    frames = propagate_tangent(x0, params, 12)
    tr = trajectory(x0, params, 12)
    M = np.eye(2)
    for t in range(12):
        M = jacobian(tr[t, 0], params) @ M
        np.testing.assert_allclose(frames[t].matrix, M, rtol=1e-9, atol=1e-9 * np.abs(M).max())


def test_determinant_after_100_steps():
    frames = propagate_tangent(PhasePoint(0.8 * math.pi, 0.3), MapParams(20.0), 100)
    assert abs(frames[-1].determinant - 1.0) < 1e-9


def test_symplectic_over_long_runs():
    frames = propagate_tangent(PhasePoint(0.8 * math.pi, 0.3), MapParams(20.0), 10_000)
    dets = np.array([f.determinant for f in frames[::500]] + [frames[-1].determinant])
    assert np.all(np.abs(dets - 1.0) < 1e-9)
    assert np.isfinite(frames[-1].log_norm) and frames[-1].log_norm > 1e4


def test_lyapunov_exponent_large_k(rng):
    pts = rng.uniform(0, TWO_PI, (1000, 2))
    lam = lyapunov_exponent(pts, MapParams(20.0), 1000)
    assert lam == pytest.approx(math.log(10.0), rel=0.1)


def test_regular_orbits_have_small_exponent():
    q = np.full(20, 0.8 * math.pi)
    p = np.linspace(0.1, 0.5, 20)
    growth = tangent_log_growth(q, p, MapParams(0.3), 2000)
    assert np.median(growth[:, -1] / 2000) < 0.02


def test_unstable_direction_is_unit():
    v = unstable_directions(np.array([0.3, 1.0]), np.array([2.0, 4.0]), MapParams(20.0), 20)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, rtol=1e-12)


def test_tangent_needs_a_step():
    with pytest.raises(ValueError):
        propagate_tangent(PhasePoint(0.0, 0.0), MapParams(1.0), 0)
