import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dephasing.ensembles import EnsembleSpec
from dephasing.fidelity import dr_overlap
from dephasing.maps import TWO_PI, MapParams, PhasePoint, step_map
from dephasing.quantum import (
    KickedPropagator,
    apply_propagator,
    effective_hbar,
    grid_index,
    position_state,
    quantum_fidelity,
)

Q0 = 0.8 * math.pi


def random_state(n, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    return psi / np.linalg.norm(psi)


def coherent_state(n, q0, p0):
    """Minimum-uncertainty packet on the n-point torus grid, periodised."""
    hbar = TWO_PI / n
    q = TWO_PI * np.arange(n) / n
    psi = np.zeros(n, dtype=complex)
    for w in (-1, 0, 1):
        d = q - q0 + w * TWO_PI
        psi += np.exp(-d ** 2 / (2 * hbar) + 1j * p0 * d / hbar)
    return psi / np.linalg.norm(psi)


# -- states -------------------------------------------------------------------


def test_position_state_examples():
    psi = position_state(10, 0.0)
    assert psi[0] == 1.0 and np.count_nonzero(psi) == 1
    assert grid_index(100, Q0) == 40
    assert np.flatnonzero(position_state(100, Q0))[0] == 40
    assert np.linalg.norm(position_state(1000, Q0)) == 1.0


def test_position_state_snaps_to_nearest():
    assert grid_index(512, Q0) == 205  # 204.8 rounds up
    assert grid_index(8, TWO_PI - 1e-9) == 0


# -- propagator ---------------------------------------------------------------


def test_norm_after_100_steps():
    psi = KickedPropagator(1000, 20.0, 0.003)(random_state(1000, 0), 100)
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12


def test_norm_drift_over_1000_steps():
    prop = KickedPropagator(1000, 20.0, 0.003)
    psi = position_state(1000, Q0)
    worst = 0.0
    for _ in range(10):
        psi = prop(psi, 100)
        worst = max(worst, abs(np.linalg.norm(psi) - 1.0))
    assert worst < 1e-9


@given(st.integers(1, 64).map(lambda h: 2 * h), st.floats(0.0, 30.0), st.floats(-1.0, 1.0),
       st.integers(0, 2**32))
def test_single_step_is_unitary(n, k, eps, seed):
    psi = apply_propagator(random_state(n, seed), KickedPropagator(n, k, eps))
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12


def test_free_momentum_eigenstate_keeps_modulus():
    n = 256
    l = 17
    psi = np.exp(1j * l * TWO_PI * np.arange(n) / n) / math.sqrt(n)
    out = KickedPropagator(n, 0.0, 0.0)(psi, 25)
    np.testing.assert_allclose(np.abs(out), np.abs(psi), atol=1e-12)
    # and the phase is global
    ratio = out / psi
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)


def test_position_state_spreads_uniformly():
    # a position eigenstate has uniform momentum, so one step fills the circle
    n = 400
    out = KickedPropagator(n, 20.0, 0.0)(position_state(n, Q0))
    np.testing.assert_allclose(np.abs(out) ** 2, 1.0 / n, rtol=1e-10)


def test_packet_centre_follows_classical_map():
    n = 4096
    hbar = TWO_PI / n
    q0, p0 = Q0, 1.3
    psi = KickedPropagator(n, 20.0, 0.003)(coherent_state(n, q0, p0))
    q = TWO_PI * np.arange(n) / n
    w = np.abs(psi) ** 2
    z = np.sum(w * np.exp(1j * q))
    centre = math.atan2(z.imag, z.real) % TWO_PI
    # circular spread of the evolved packet
    spread = math.sqrt(-2 * math.log(abs(z)))
    x = step_map(PhasePoint(q0, p0), MapParams(20.0, 0.003, True))
    assert abs(math.remainder(centre - x.q, TWO_PI)) < spread
    assert spread < 30 * math.sqrt(hbar)


def test_odd_dimension_rejected():
    with pytest.raises(ValueError):
        KickedPropagator(999, 20.0)


def test_non_power_of_two_is_logged(caplog):
    with caplog.at_level("INFO", logger="dephasing.quantum"):
        prop = KickedPropagator(1000, 1.0)
    assert not prop.power_of_two
    assert "power of two" in caplog.text


def test_hbar_conventions():
    assert effective_hbar(1000) == TWO_PI / 1000
    assert effective_hbar(1000, "literal") == pytest.approx(1 / (TWO_PI * 1000))
    with pytest.raises(ValueError):
        effective_hbar(1000, "planck")


# -- fidelity ----------------------------------------------------------------------


def test_zero_perturbation_fidelity_is_one():
    c = quantum_fidelity(position_state(1000, Q0), 1000, 20.0, 0.0, 200)
    np.testing.assert_allclose(c.M, 1.0, atol=1e-10)
    assert c.method == "quantum-exact"


@given(st.integers(0, 2**32), st.floats(0.0, 1.0))
def test_fidelity_starts_at_one(seed, eps):
    c = quantum_fidelity(random_state(64, seed), 64, 5.0, eps, 3)
    assert c.M[0] == 1.0 or abs(c.M[0] - 1.0) < 1e-15
    assert np.all((c.M >= 0) & (c.M <= 1 + 1e-12))


def test_position_state_fidelity_starts_exactly_at_one():
    c = quantum_fidelity(position_state(1000, Q0), 1000, 20.0, 0.003, 0)
    assert c.M.tolist() == [1.0]


def test_swapping_perturbed_branch():
    psi = random_state(128, 3)
    a = quantum_fidelity(psi, 128, 7.0, 0.05, 40)
    b = quantum_fidelity(psi, 128, 7.0, 0.05, 40, perturb_first=True)
    np.testing.assert_allclose(a.M, b.M, atol=1e-12)


def test_inconsistent_hbar_rejected():
    with pytest.raises(ValueError, match="inconsistent"):
        quantum_fidelity(position_state(1000, Q0), 1000, 20.0, 0.003, 5,
                         hbar_eff=effective_hbar(1000, "literal"))
    c = quantum_fidelity(position_state(1000, Q0), 1000, 20.0, 0.003, 5, hbar_eff=TWO_PI / 1000)
    assert len(c.M) == 6


def test_wrong_state_shape_rejected():
    with pytest.raises(ValueError, match="shape"):
        quantum_fidelity(np.ones(10) / math.sqrt(10), 12, 1.0, 0.1, 2)


def _early_deviation(n, eps, seed=0, count=100_000):
    Q = TWO_PI * grid_index(n, Q0) / n
    qm = quantum_fidelity(position_state(n, Q0), n, 20.0, eps, 5)
    dr = dr_overlap(EnsembleSpec.position_state(Q=Q, count=count, seed=seed),
                    MapParams(20.0, eps), TWO_PI / n, 5)
    return float(np.abs(dr.M - qm.M).max())


@pytest.mark.xfail(strict=True, reason="at fixed eps the early deviation peaks near n=2048")
def test_early_deviation_shrinks_monotonically_at_fixed_epsilon():
    devs = [_early_deviation(n, 0.003) for n in (512, 1024, 2048, 4096)]
    assert all(b < a for a, b in zip(devs, devs[1:])), devs


def test_early_deviation_shrinks_at_fixed_phase_scale():
    # eps / hbar held fixed, so the DR curve itself does not move with n
    devs = {n: _early_deviation(n, 0.003 * 1000 / n) for n in (512, 4096)}
    assert devs[4096] < devs[512] / 3
