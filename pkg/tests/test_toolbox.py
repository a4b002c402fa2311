import math

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.special import eval_hermite, gammaln

from fockga.fock import KetState, Truncation, mean_photon_number
from fockga.toolbox import (PRESETS, Kind, LossModel, ToolboxBounds, ToolboxSpec, apply_beamsplitter,
                            apply_displacement, apply_loss, apply_squeeze1, loss_kraus, make_coherent,
                            make_fock, make_squeezed_vac, make_two_mode_squeezed_vac,
                            measurement_element, multiplex_weights, povm_bucket, povm_homodyne,
                            povm_multiplex, povm_pnrd_all, preset, quadrature_eigenstate,
                            quadrature_operator, stirling2_table, tensor_product)

from conftest import random_ket


def _dense_ladder(d):
    a = np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)
    return a, a.conj().T


def _vac(d):
    v = np.zeros(d, complex)
    v[0] = 1
    return v


def test_displacement_matches_dense_exponential():
    t = Truncation(30)
    alpha = 0.9 * np.exp(0.7j)
    a, ad = _dense_ladder(t.dim)
    want = sla.expm(alpha * ad - np.conj(alpha) * a) @ _vac(t.dim)
    vac = KetState(_vac(t.dim), 1, t)
    got = apply_displacement(vac, alpha).amplitudes
    assert np.max(np.abs(got - want)) < 1e-10


def test_displaced_vacuum_is_the_closed_form_coherent_state():
    t = Truncation(40)
    alpha = 1.3 * np.exp(-0.4j)
    vac = KetState(_vac(t.dim), 1, t)
    got = apply_displacement(vac, alpha).amplitudes
    want = make_coherent(alpha, t).amplitudes
    assert np.max(np.abs(got - want)) < 1e-10
    assert mean_photon_number(make_coherent(alpha, t)) == pytest.approx(1.69, abs=1e-10)


def test_squeezed_vacuum_amplitudes():
    t = Truncation(60)
    r, phi = 0.8, 1.1
    got = make_squeezed_vac((r, phi), t).amplitudes
    m = np.arange(t.dim // 2 + 1)
    m = m[2 * m <= t.t_max]
    log_mag = 0.5 * gammaln(2 * m + 1) - m * math.log(2) - gammaln(m + 1) - 0.5 * math.log(math.cosh(r))
    want = np.zeros(t.dim, complex)
    want[2 * m] = np.exp(log_mag) * (-np.exp(1j * phi) * math.tanh(r)) ** m
    # the truncated generator departs from the infinite one near the cutoff
    assert np.max(np.abs(got[:30] - want[:30])) < 1e-9
    assert np.max(np.abs(got[1::2])) < 1e-12
    assert mean_photon_number(make_squeezed_vac(r, t)) == pytest.approx(math.sinh(r) ** 2, abs=1e-8)


def test_squeeze_operator_matches_dense_exponential():
    t = Truncation(24)
    zeta = 0.5 * np.exp(0.3j)
    a, ad = _dense_ladder(t.dim)
    gen = 0.5 * (np.conj(zeta) * a @ a - zeta * ad @ ad)
    psi = make_coherent(0.7, t)
    want = sla.expm(gen) @ psi.amplitudes
    got = apply_squeeze1(psi, zeta).amplitudes
    assert np.max(np.abs(got - want)) < 1e-10


def test_two_mode_squeezed_vacuum_is_thermal_on_the_diagonal():
    t = Truncation(40)
    r = 0.7
    state = make_two_mode_squeezed_vac(r, t)
    probs = state.probabilities().reshape(t.dim, t.dim)
    n = np.arange(t.dim)
    want = math.tanh(r) ** (2 * n) / math.cosh(r) ** 2
    assert np.max(np.abs(np.diag(probs) - want)) < 1e-9
    assert np.sum(probs) - np.trace(probs) < 1e-12


def test_hong_ou_mandel_dip():
    t = Truncation(4)
    pair = tensor_product(make_fock(1, t), make_fock(1, t))
    out = apply_beamsplitter(pair, 0.5).probabilities().reshape(t.dim, t.dim)
    assert out[1, 1] < 1e-14
    assert out[2, 0] == pytest.approx(0.5, abs=1e-12)
    assert out[0, 2] == pytest.approx(0.5, abs=1e-12)


def test_beamsplitter_extremes():
    t = Truncation(5)
    psi = random_ket(np.random.default_rng(3), 2, 5)
    assert np.allclose(apply_beamsplitter(psi, 1.0).amplitudes, psi.amplitudes, atol=1e-14)
    with pytest.raises(ValueError):
        apply_beamsplitter(psi, 1.2)


@pytest.mark.parametrize("gamma", [0.0, 0.15, 0.6])
def test_counting_povms_are_complete(gamma):
    t = Truncation(25)
    assert povm_pnrd_all(gamma, t).completeness_defect <= 1e-12
    assert povm_bucket(gamma, t).completeness_defect <= 1e-12
    assert povm_multiplex(16, gamma, t).completeness_defect <= 1e-12


def test_stirling_numbers():
    s = stirling2_table(8, 8)
    assert s[5][2] == 15
    assert s[6][3] == 90
    assert s[7][4] == 350
    assert s[8][8] == 1
    assert all(s[c][1] == 1 for c in range(1, 9))


def test_multiplex_with_many_detectors_approaches_pnrd():
    w = multiplex_weights(10 ** 6, 6)
    assert np.max(np.abs(w[:7, :7] - np.eye(7))) < 2e-5


def test_multiplex_two_photons_on_d_detectors():
    d = 4
    w = multiplex_weights(d, 2)
    assert w[1, 2] == pytest.approx(1 / d)
    assert w[2, 2] == pytest.approx(1 - 1 / d)


def test_lossy_pnrd_element_is_binomial():
    t = Truncation(10)
    gamma = 0.3
    e = measurement_element(Kind.PNRD, 2, {}, LossModel(0.0, gamma), t).matrix.diagonal().real
    k = np.arange(t.dim)
    want = np.array([math.comb(int(n), 2) * (1 - gamma) ** 2 * gamma ** (n - 2) if n >= 2 else 0.0
                     for n in k])
    assert np.allclose(e, want, atol=1e-14)


def test_bucket_no_click_element():
    t = Truncation(6)
    e0 = povm_bucket(0.25, t).element(0).matrix.diagonal().real
    assert np.allclose(e0, 0.25 ** np.arange(t.dim))


@pytest.mark.parametrize("x,angle", [(0.0, 0.0), (0.8, 0.0), (-1.5, 0.0), (1.1, 0.9)])
def test_quadrature_eigenstate_hermite_form(x, angle):
    t = Truncation(30)
    v = quadrature_eigenstate(x, angle, t)
    n = np.arange(t.dim)
    log_norm = -0.5 * (n * math.log(2) + gammaln(n + 1))
    want = (math.pi ** -0.25 * math.exp(-x * x / 2) * eval_hermite(n, x) * np.exp(log_norm)
            * np.exp(1j * angle * n))
    assert np.max(np.abs(v - want)) < 1e-9 * max(1.0, np.max(np.abs(want)))


def test_quadrature_eigenstate_satisfies_interior_eigen_equation():
    t = Truncation(40)
    x, angle = 0.6, 0.4
    v = quadrature_eigenstate(x, angle, t)
    xv = quadrature_operator(angle, t) @ v
    # the top row couples to the discarded level, so only interior rows hold exactly
    assert np.max(np.abs(xv[:-1] - x * v[:-1])) < 1e-9


def test_homodyne_element_is_rank_one():
    t = Truncation(12)
    op = povm_homodyne(0.3, 0.0, t)
    ev = np.linalg.eigvalsh(op.matrix.toarray())
    assert np.sum(ev > 1e-12) == 1


@pytest.mark.parametrize("gamma", [0.0, 0.2, 0.9])
def test_loss_kraus_preserves_trace(gamma):
    t = Truncation(20)
    total = sum((k.conj().T @ k).toarray() for k in loss_kraus(gamma, t))
    assert np.max(np.abs(total - np.eye(t.dim))) <= 1e-10


def test_loss_on_fock_state_is_binomial():
    t = Truncation(8)
    gamma = 0.35
    out = apply_loss(make_fock(4, t), gamma).probabilities()
    want = np.zeros(t.dim)
    for c in range(5):
        want[c] = math.comb(4, c) * (1 - gamma) ** c * gamma ** (4 - c)
    assert np.allclose(out, want, atol=1e-14)


def test_loss_channels_compose():
    t = Truncation(12)
    psi = make_coherent(0.8 + 0.3j, t)
    g1, g2 = 0.2, 0.35
    twice = apply_loss(apply_loss(psi, g1), g2).matrix
    once = apply_loss(psi, 1 - (1 - g1) * (1 - g2)).matrix
    assert np.max(np.abs(twice - once)) < 1e-12


def test_loss_on_one_mode_of_two_keeps_trace_and_coherent_form():
    t = Truncation(6)
    psi = random_ket(np.random.default_rng(7), 2, 6)
    out = apply_loss(psi, 0.4, mode=1)
    assert out.trace() == pytest.approx(1.0, abs=1e-12)
    assert out.is_hermitian()
    # loss on a coherent state stays pure with a shrunk amplitude
    t = Truncation(30)
    lossy = apply_loss(make_coherent(1.0, t), 0.36)
    assert lossy.purity() == pytest.approx(1.0, abs=1e-9)
    assert mean_photon_number(lossy) == pytest.approx(0.64, abs=1e-9)


def test_input_state_limits():
    t = Truncation(10)
    with pytest.raises(ValueError):
        make_fock(6, t)
    with pytest.raises(ValueError):
        make_coherent(5.5, t)
    with pytest.raises(ValueError):
        make_squeezed_vac(1.5, t)
    c = make_coherent(2.0, Truncation(4))
    assert c.leakage > 0
    assert c.norm() == pytest.approx(1.0)


def test_presets_and_validation():
    assert PRESETS["tool1"].bounds.pnrd_max == 6
    assert PRESETS["tool2"].bounds.pnrd_max == 10
    assert Kind.SQUEEZE1 not in PRESETS["tool1"].operators
    assert Kind.PNRD not in PRESETS["no_pnrd"].measurements
    for spec in PRESETS.values():
        assert spec.operators[0] is Kind.IDENTITY
        assert ToolboxSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError, match="unknown toolbox preset"):
        preset("tool9")
    with pytest.raises(ValueError):
        ToolboxSpec(states=())
    with pytest.raises(ValueError):
        ToolboxSpec(measurements=(Kind.DISPLACEMENT,))
    with pytest.raises(ValueError):
        ToolboxBounds(pnrd_min=4, pnrd_max=3)
    with pytest.raises(ValueError):
        LossModel(gamma_out=1.5)
