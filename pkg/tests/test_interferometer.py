"""Interferometer tests: splitter algebra, visibility oracle, fringe fits."""

import math

import numpy as np
import pytest

from entstore.errors import UndefinedMetric
from entstore.fock import Channel, ClickDetector, MultiModeState, apply_channel
from entstore.interferometer import (
    FringeData,
    VisibilityFit,
    default_phase_grid,
    detect_pbs,
    fit_visibility,
    measure_pij,
    scan_fringes,
    split_entangle,
    store_both,
)
from entstore.source import HeraldedPhoton


def ideal_photon():
    return HeraldedPhoton(p1=1e-3, state=MultiModeState.fock((1,), 3),
                          w_source=0.0)


def split_ideal():
    return split_entangle(ideal_photon())


class TestSplitEntangle:
    def test_ideal_photon_balanced(self):
        state = split_ideal()
        assert state.probability((1, 0)) == pytest.approx(0.5, abs=1e-12)
        assert state.probability((0, 1)) == pytest.approx(0.5, abs=1e-12)

    def test_vacuum_passthrough(self):
        photon = HeraldedPhoton(p1=0.0, state=MultiModeState.vacuum(1),
                                w_source=0.0)
        state = split_entangle(photon)
        assert state.probability((0, 0)) == pytest.approx(1.0, abs=1e-12)

    def test_two_photon_weight_splits_binomially(self):
        photon = HeraldedPhoton(p1=1e-3, state=MultiModeState.fock((2,), 3),
                                w_source=2.0)
        state = split_entangle(photon)
        # |2> on a 50:50 splitter: (1/4, 1/2, 1/4) over (2,0),(1,1),(0,2)
        assert state.probability((2, 0)) == pytest.approx(0.25, abs=1e-12)
        assert state.probability((1, 1)) == pytest.approx(0.5, abs=1e-12)
        assert state.probability((0, 2)) == pytest.approx(0.25, abs=1e-12)
        pij = measure_pij(state)
        assert pij["p11"] == pytest.approx(0.5, abs=1e-12)


class TestStoreBoth:
    def test_identity_channels(self):
        state = split_ideal()
        out = store_both(state, Channel.loss(1.0), Channel.loss(1.0))
        np.testing.assert_allclose(out.rho, state.rho, atol=1e-12)

    @pytest.mark.parametrize("t", [0.2, 0.5, 0.9])
    def test_equal_loss_scales_one_photon_weight(self, t):
        state = store_both(split_ideal(), Channel.loss(t), Channel.loss(t))
        pij = measure_pij(state)
        assert pij["p01"] + pij["p10"] == pytest.approx(t, rel=1e-12)

    def test_channel_tuples_accepted(self):
        chans = (Channel.loss(0.9), Channel.phase_shift(0.3))
        out = store_both(split_ideal(), chans, Channel.loss(0.8))
        assert out.mode_count == 2


class TestDetectPbs:
    def test_interference_extremes(self):
        state = split_ideal()
        hi, _, _ = detect_pbs(state, math.pi / 2)
        lo, _, _ = detect_pbs(state, 3 * math.pi / 2)
        assert hi == pytest.approx(1.0, abs=1e-12)
        assert lo == pytest.approx(0.0, abs=1e-12)

    def test_single_photon_no_coincidences(self):
        state = split_ideal()
        for phi in (0.0, 1.0, 2.5):
            assert detect_pbs(state, phi)[2] < 1e-12

    @pytest.mark.parametrize("phi", [0.0, 0.7, 2.0, 5.5])
    def test_two_pi_periodic(self, phi):
        state = store_both(split_ideal(), Channel.loss(0.6), Channel.loss(0.9))
        a = detect_pbs(state, phi)
        b = detect_pbs(state, phi + 2 * math.pi)
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestMeasurePij:
    def test_ideal_lossless(self):
        pij = measure_pij(split_ideal())
        assert pij["p01"] == pytest.approx(0.5, abs=1e-12)
        assert pij["p10"] == pytest.approx(0.5, abs=1e-12)
        assert pij["p00"] < 1e-12
        assert pij["p11"] < 1e-12

    @pytest.mark.parametrize("ta,tb,det", [
        (1.0, 1.0, ClickDetector(1.0)),
        (0.6, 0.9, ClickDetector(0.5)),
        (0.3, 0.8, ClickDetector(0.4, 1e-3)),
    ])
    def test_patterns_sum_to_one(self, ta, tb, det):
        state = store_both(split_ideal(), Channel.loss(ta), Channel.loss(tb))
        state = apply_channel(state, Channel.background_injection(0.01), 0)
        pij = measure_pij(state, det, det)
        assert sum(pij.values()) == pytest.approx(1.0, abs=1e-9)

    def test_equal_arm_ratio_tracks_transmission(self):
        base = measure_pij(split_ideal())
        both = measure_pij(store_both(split_ideal(), Channel.loss(0.85),
                                      Channel.loss(0.85)))
        ratio = (both["p01"] + both["p10"]) / (base["p01"] + base["p10"])
        assert ratio == pytest.approx(0.85, rel=1e-12)


class TestScanAndFit:
    def test_two_point_grid(self):
        data = scan_fringes(split_ideal(), [0.0, math.pi])
        assert len(data.phases) == 2
        assert len(data.counts_d1) == 2

    def test_ideal_state_full_visibility(self):
        data = scan_fringes(split_ideal())
        fit = fit_visibility(data)
        assert fit.V == pytest.approx(1.0, abs=1e-9)
        assert fit.mean_level == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("ta,tb", [(1.0, 0.25), (0.6, 0.9), (0.87, 0.82)])
    def test_asymmetric_loss_visibility_oracle(self, ta, tb):
        """V = 2 sqrt(ta tb) / (ta + tb), from one-photon loss algebra."""
        state = store_both(split_ideal(), Channel.loss(ta), Channel.loss(tb))
        fit = fit_visibility(scan_fringes(state))
        assert fit.V == pytest.approx(2 * math.sqrt(ta * tb) / (ta + tb),
                                      rel=1e-9)

    @pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
    def test_equal_loss_keeps_unit_visibility(self, t):
        state = store_both(split_ideal(), Channel.loss(t), Channel.loss(t))
        assert fit_visibility(scan_fringes(state)).V == pytest.approx(1.0,
                                                                      abs=1e-9)

    def test_noiseless_synthetic_recovery(self):
        phases = default_phase_grid()
        y = 0.3 * (1 + 0.96 * np.sin(phases + 0.7))
        fit = fit_visibility(FringeData(phases, y, y))
        assert fit.V == pytest.approx(0.96, abs=1e-6)
        assert fit.phase_offset == pytest.approx(0.7, abs=1e-6)
        assert fit.mean_level == pytest.approx(0.3, abs=1e-6)

    def test_constant_probability_data(self):
        phases = default_phase_grid()
        fit = fit_visibility(FringeData(phases, np.full(16, 0.25),
                                        np.full(16, 0.25)))
        assert fit.V < 1e-12

    def test_constant_counts_leave_v_unconstrained(self):
        phases = default_phase_grid()
        counts = np.full(16, 100.0)
        fit = fit_visibility(FringeData(phases, counts, counts,
                                        trials_per_point=100000))
        assert fit.V < 1e-12
        assert fit.sigma_V > 100 * fit.V
        assert fit.sigma_V > 0.01

    def test_underdetermined_grids_rejected(self):
        with pytest.raises(ValueError, match="underdetermined"):
            fit_visibility(FringeData(np.array([0.0, 1.0, 2.0]),
                                      np.zeros(3), np.zeros(3)))
        narrow = np.linspace(0.0, 2.0, 8)
        with pytest.raises(ValueError, match="underdetermined"):
            fit_visibility(FringeData(narrow, np.zeros(8), np.zeros(8)))

    def test_poisson_noise_sigma_matches_bootstrap(self):
        """sigma_V from the fit covariance vs a resampling oracle."""
        rng = np.random.default_rng(11)
        phases = default_phase_grid()
        lam = 50.0 * (1.0 + 0.87 * np.sin(phases))
        counts = rng.poisson(lam).astype(float)
        trials = 100000
        fit = fit_visibility(FringeData(phases, counts, trials - counts,
                                        trials_per_point=trials))
        assert 0.02 <= fit.sigma_V <= 0.06
        boot = []
        for _ in range(300):
            c = rng.poisson(np.maximum(counts, 1e-9)).astype(float)
            boot.append(fit_visibility(
                FringeData(phases, c, trials - c,
                           trials_per_point=trials)).V)
        assert fit.sigma_V == pytest.approx(np.std(boot), rel=0.35)

    def test_fit_consistent_with_scan_statistics(self):
        rng = np.random.default_rng(3)
        state = store_both(split_ideal(), Channel.loss(0.6),
                           Channel.loss(0.9))
        data = scan_fringes(state)
        truth = fit_visibility(data)
        trials = 20000
        counts = rng.binomial(trials, data.counts_d1).astype(float)
        noisy = fit_visibility(FringeData(data.phases, counts,
                                          trials - counts,
                                          trials_per_point=trials))
        assert abs(noisy.V - truth.V) <= 3 * noisy.sigma_V


class TestValidation:
    def test_fringe_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            FringeData(np.zeros(4), np.zeros(3), np.zeros(4))

    def test_probability_bound_enforced(self):
        with pytest.raises(ValueError):
            FringeData(np.zeros(4), np.full(4, 1.5), np.zeros(4))

    def test_visibility_fit_bounds(self):
        with pytest.raises(ValueError):
            VisibilityFit(V=1.2, phase_offset=0.0, mean_level=0.5,
                          sigma_V=0.01, residual_rms=0.0)

    def test_mean_level_must_be_positive(self):
        phases = default_phase_grid()
        with pytest.raises(UndefinedMetric):
            fit_visibility(FringeData(phases, np.zeros(16), np.zeros(16)))

    def test_detect_requires_two_modes(self):
        with pytest.raises(ValueError):
            detect_pbs(MultiModeState.vacuum(1), 0.0)
