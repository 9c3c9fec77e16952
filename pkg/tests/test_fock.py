import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entstore import fock as fk
from entstore.fock import (
    Channel,
    ClickDetector,
    MultiModeState,
    apply_background_injection,
    apply_beamsplitter,
    apply_channel,
    apply_loss,
    apply_phase,
    click_probabilities,
    photon_number_probs,
)


def random_state(rng, mode_count=1, n_max=3, pure=False):
    dim = (n_max + 1) ** mode_count
    if pure:
        ket = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        return MultiModeState.from_ket(ket, mode_count, n_max)
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return MultiModeState(rho / np.trace(rho).real, mode_count, n_max)


# --- worked examples ---------------------------------------------------------

def test_hom_null():
    s = MultiModeState.fock([1, 1])
    out = apply_beamsplitter(s, (0, 1), transmittance=0.5)
    assert out.probability([1, 1]) < 1e-12


def test_loss_binomial_two_photons():
    out = apply_loss(MultiModeState.fock([2]), 0, 0.3)
    assert np.allclose(photon_number_probs(out, 0)[:3], [0.49, 0.42, 0.09], atol=1e-12)


def test_loss_single_photon():
    out = apply_loss(MultiModeState.fock([1]), 0, 0.85)
    assert np.allclose(photon_number_probs(out, 0)[:2], [0.15, 0.85], atol=1e-12)


def test_click_two_photons():
    r = click_probabilities(MultiModeState.fock([2]), ClickDetector(0.5, 0.0), 0)
    assert r.p_click == pytest.approx(0.75, abs=1e-12)


def test_dark_click_on_vacuum():
    r = click_probabilities(MultiModeState.vacuum(1), ClickDetector(0.5, 1e-3), 0)
    assert r.p_click == pytest.approx(1e-3, abs=1e-15)


# --- brute-force beamsplitter oracle ----------------------------------------

def two_photon_amplitudes(u):
    """Output amplitudes of |1,1> under single-photon unitary u via permanents."""
    perm_11 = u[0, 0] * u[1, 1] + u[0, 1] * u[1, 0]
    a_20 = math.sqrt(2.0) * u[0, 0] * u[0, 1]
    a_02 = math.sqrt(2.0) * u[1, 0] * u[1, 1]
    return a_20, perm_11, a_02


@pytest.mark.parametrize("t,phi", [(0.5, 0.0), (0.5, 1.1), (0.3, 0.0), (0.72, -0.4)])
def test_beamsplitter_matches_permanent_oracle(t, phi):
    n_max = 2
    u_full = fk._bs_unitary(n_max, t, phi)
    b = n_max + 1
    i10, i01 = fk._index_of((1, 0), n_max), fk._index_of((0, 1), n_max)
    u1 = np.array([[u_full[i10, i10], u_full[i10, i01]],
                   [u_full[i01, i10], u_full[i01, i01]]])
    assert np.allclose(u1 @ u1.conj().T, np.eye(2), atol=1e-12)

    s = MultiModeState.fock([1, 1], n_max=n_max)
    out = apply_beamsplitter(s, (0, 1), t, phi)
    a20, a11, a02 = two_photon_amplitudes(u1)
    assert out.probability([2, 0]) == pytest.approx(abs(a20) ** 2, abs=1e-12)
    assert out.probability([1, 1]) == pytest.approx(abs(a11) ** 2, abs=1e-12)
    assert out.probability([0, 2]) == pytest.approx(abs(a02) ** 2, abs=1e-12)


def test_single_photon_split_amplitudes():
    s = MultiModeState.fock([1, 0])
    out = apply_beamsplitter(s, (0, 1), 0.5)
    assert out.probability([1, 0]) == pytest.approx(0.5, abs=1e-12)
    assert out.probability([0, 1]) == pytest.approx(0.5, abs=1e-12)


# --- channel invariants ------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 1.0),
       mean=st.floats(0.0, 0.2))
def test_channels_preserve_trace_and_positivity(seed, t, mean):
    rng = np.random.default_rng(seed)
    s = random_state(rng, mode_count=2)
    for out in (apply_loss(s, 0, t),
                apply_phase(s, 1, 2.0 * np.pi * t),
                apply_beamsplitter(s, (0, 1), t),
                apply_background_injection(s, 0, mean)):
        assert abs(np.trace(out.rho).real - 1.0) < 1e-9
        assert np.min(np.linalg.eigvalsh(out.rho)) > -1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t1=st.floats(0.01, 1.0), t2=st.floats(0.01, 1.0))
def test_loss_composition(seed, t1, t2):
    s = random_state(np.random.default_rng(seed))
    a = apply_loss(apply_loss(s, 0, t1), 0, t2)
    b = apply_loss(s, 0, t1 * t2)
    assert np.max(np.abs(a.rho - b.rho)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 1.0),
       phi=st.floats(-np.pi, np.pi))
def test_beamsplitter_inverse_roundtrip(seed, t, phi):
    s = random_state(np.random.default_rng(seed), mode_count=2)
    fwd = apply_beamsplitter(s, (0, 1), t, phi)
    back = apply_beamsplitter(fwd, (0, 1), t, phi + np.pi)
    assert np.max(np.abs(back.rho - s.rho)) < 1e-9


def test_mean_photon_bookkeeping():
    rng = np.random.default_rng(7)
    s = random_state(rng, mode_count=2, n_max=2)
    total = s.mean_photons()
    mixed = apply_beamsplitter(s, (0, 1), 0.37, 0.9)
    if not mixed.truncation_flag:
        assert mixed.mean_photons() == pytest.approx(total, abs=1e-10)
    lossy = apply_loss(s, 0, 0.42)
    assert lossy.mean_photons(0) == pytest.approx(0.42 * s.mean_photons(0), abs=1e-10)
    rotated = apply_phase(s, 1, 1.23)
    assert np.allclose(photon_number_probs(rotated, 1), photon_number_probs(s, 1),
                       atol=1e-12)


def test_truncation_flag_set_on_overflow():
    s = MultiModeState.fock([2, 2])
    assert apply_beamsplitter(s, (0, 1), 0.5).truncation_flag
    assert not apply_beamsplitter(MultiModeState.fock([1, 1]), (0, 1), 0.5).truncation_flag


# --- Choi-matrix CPTP check --------------------------------------------------

def choi_matrix(apply_fn, dim):
    """Choi operator sum_ij apply(|i><j|) kron |i><j|, built from the raw layer."""
    choi = np.zeros((dim * dim, dim * dim), dtype=complex)
    for i in range(dim):
        for j in range(dim):
            unit = np.zeros((dim, dim), dtype=complex)
            unit[i, j] = 1.0
            out = apply_fn(unit)
            choi += np.kron(out, unit)
    return choi


@pytest.mark.parametrize("name", ["loss", "phase", "background"])
def test_single_mode_channels_are_cptp(name):
    n_max = 2
    b = n_max + 1
    if name == "loss":
        ops = fk._loss_kraus(n_max, 0.37)
    elif name == "phase":
        ops = (np.diag(np.exp(1j * 0.77 * np.arange(b))),)
    else:
        mean = 0.15
        weights = [math.exp(-mean) * mean**k / math.factorial(k) for k in range(b)]
        weights[-1] = 1.0 - sum(weights[:-1])
        ops = [math.sqrt(w) * fk._shift_unitary(n_max, k) for k, w in enumerate(weights)]

    def apply_fn(mat):
        return sum(op @ mat @ op.conj().T for op in ops)

    choi = choi_matrix(apply_fn, b)
    assert np.min(np.linalg.eigvalsh(choi)) > -1e-10
    # trace preservation: partial trace of Choi over output = identity
    ptrace = np.einsum("aiaj->ij", choi.reshape(b, b, b, b))
    assert np.allclose(ptrace, np.eye(b), atol=1e-10)


def test_beamsplitter_choi_cptp():
    n_max = 1
    b = (n_max + 1) ** 2
    u = fk._bs_unitary(n_max, 0.6, 0.3)

    def apply_fn(mat):
        return u @ mat @ u.conj().T

    choi = choi_matrix(apply_fn, b)
    assert np.min(np.linalg.eigvalsh(choi)) > -1e-10


# --- click measurement -------------------------------------------------------

def test_click_reconstructs_nonselective_map():
    rng = np.random.default_rng(3)
    s = random_state(rng, mode_count=2)
    det = ClickDetector(0.63, 2e-3)
    r = click_probabilities(s, det, 0)
    mix = r.p_click * r.post_click.rho + (1.0 - r.p_click) * r.post_noclick.rho
    w = det.no_click_weights(s.n_max)
    m_nc = np.diag(np.sqrt(w))
    m_c = np.diag(np.sqrt(1.0 - w))
    expected = (fk._contract(s.rho, m_c, (0,), 2, s.n_max)
                + fk._contract(s.rho, m_nc, (0,), 2, s.n_max))
    assert np.max(np.abs(mix - expected)) < 1e-12
    assert abs(np.trace(mix).real - 1.0) < 1e-12


def test_click_on_vacuum_zero_probability_branch():
    r = click_probabilities(MultiModeState.vacuum(1), ClickDetector(0.5, 0.0), 0)
    assert r.p_click == pytest.approx(0.0, abs=1e-15)
    assert r.post_click is None


def test_click_commutes_across_modes():
    rng = np.random.default_rng(11)
    s = random_state(rng, mode_count=2)
    da, db = ClickDetector(0.5, 1e-4), ClickDetector(0.3, 0.0)
    ra = click_probabilities(s, da, 0)
    p_ab = ra.p_click * click_probabilities(ra.post_click, db, 1).p_click
    rb = click_probabilities(s, db, 1)
    p_ba = rb.p_click * click_probabilities(rb.post_click, da, 0).p_click
    assert p_ab == pytest.approx(p_ba, rel=1e-10)


# --- background injection ----------------------------------------------------

@pytest.mark.parametrize("mean", [0.01, 0.05, 0.2])
def test_background_adds_stated_mean(mean):
    s = MultiModeState.vacuum(1)
    out = apply_background_injection(s, 0, mean)
    tail = sum(math.exp(-mean) * mean**k / math.factorial(k) * k
               for k in range(s.n_max + 1))
    tail_corr = mean - tail  # weight folded into the top shift
    assert out.mean_photons(0) == pytest.approx(mean, abs=max(3 * tail_corr, 1e-9))
    assert abs(np.trace(out.rho).real - 1.0) < 1e-12


# --- structure helpers -------------------------------------------------------

def test_tensor_and_partial_trace_roundtrip():
    rng = np.random.default_rng(5)
    a = random_state(rng, mode_count=1)
    b = random_state(rng, mode_count=1)
    joint = a.tensor(b)
    assert np.max(np.abs(joint.partial_trace([0]).rho - a.rho)) < 1e-12
    assert np.max(np.abs(joint.partial_trace([1]).rho - b.rho)) < 1e-12


def test_validation_rejects_bad_matrices():
    dim = 4
    with pytest.raises(ValueError):
        MultiModeState(np.eye(dim), 1)  # trace 4
    bad = np.zeros((dim, dim), dtype=complex)
    bad[0, 0] = 1.0
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        MultiModeState(bad, 1)  # not Hermitian
    neg = np.diag([1.5, -0.5, 0.0, 0.0]).astype(complex)
    with pytest.raises(ValueError):
        MultiModeState(neg, 1)  # negative eigenvalue


def test_mode_count_cap():
    with pytest.raises(ValueError):
        MultiModeState.vacuum(5)


def test_channel_sequence_application():
    s = MultiModeState.fock([1, 0])
    chain = [Channel.loss(0.8), Channel.phase_shift(0.5)]
    out = apply_channel(s, chain, [0, 0])
    assert out.mean_photons(0) == pytest.approx(0.8, abs=1e-12)
