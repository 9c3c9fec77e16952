"""Path interferometer: split a heralded photon over two memory arms,
recombine with a scanned phase, and count clicks.

Click probabilities follow the bucket-detector convention throughout: a
click pattern (i, j) estimates the photon-number pattern, with click = "1"
standing for n >= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetric
from .fock import (
    Channel,
    ClickDetector,
    MultiModeState,
    apply_channel,
    click_probabilities,
)
from .source import HeraldedPhoton

# Mixer set so the ideal split state gives p_d1 = (1 + V sin(phi)) / 2.
MIXER_PHASE = -math.pi / 2

IDEAL_DETECTOR = ClickDetector(efficiency=1.0, dark_prob=0.0)

DEFAULT_PHASE_POINTS = 16


def default_phase_grid(points: int = DEFAULT_PHASE_POINTS) -> np.ndarray:
    if points < 4:
        raise ValueError("need at least 4 phase points")
    return np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)


@dataclass(frozen=True, eq=False)
class FringeData:
    """Fringe scan: probabilities when trials_per_point is 0, else counts."""

    phases: np.ndarray
    counts_d1: np.ndarray
    counts_d2: np.ndarray
    trials_per_point: int = 0
    counts_coinc: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.phases)
        arrays = [self.counts_d1, self.counts_d2]
        if self.counts_coinc is not None:
            arrays.append(self.counts_coinc)
        if any(len(a) != n for a in arrays):
            raise ValueError("fringe arrays must share one length")
        if self.trials_per_point < 0:
            raise ValueError("trials_per_point must be nonnegative")
        for a in arrays:
            if np.any(np.asarray(a) < 0.0):
                raise ValueError("counts must be nonnegative")
            if self.trials_per_point == 0 and np.any(np.asarray(a) > 1.0):
                raise ValueError("probabilities must lie in [0, 1]")

    def rates_d1(self) -> np.ndarray:
        if self.trials_per_point == 0:
            return np.asarray(self.counts_d1, dtype=float)
        return np.asarray(self.counts_d1, dtype=float) / self.trials_per_point


@dataclass(frozen=True)
class VisibilityFit:
    V: float
    phase_offset: float
    mean_level: float
    sigma_V: float
    residual_rms: float

    def __post_init__(self):
        if not 0.0 <= self.V <= 1.0:
            raise ValueError(f"V {self.V} outside [0, 1]")
        if self.sigma_V < 0.0:
            raise ValueError("sigma_V must be nonnegative")


def split_entangle(photon: HeraldedPhoton) -> MultiModeState:
    """50:50 split of the heralded mode into two path modes (a, b)."""
    state = photon.state.tensor(MultiModeState.vacuum(1, photon.state.n_max))
    return apply_channel(state, Channel.beamsplitter(0.5), (0, 1))


def _apply_arm(state: MultiModeState, chan, mode: int) -> MultiModeState:
    chans = (chan,) if isinstance(chan, Channel) else tuple(chan)
    for c in chans:
        state = apply_channel(state, c, mode)
    return state


def store_both(state: MultiModeState, chan_a, chan_b) -> MultiModeState:
    """Apply each arm's memory channel(s); arm a is mode 0, arm b mode 1."""
    if state.mode_count != 2:
        raise ValueError("expected a two-path state")
    state = _apply_arm(state, chan_a, 0)
    return _apply_arm(state, chan_b, 1)


def detect_pbs(state: MultiModeState, phi: float,
               det1: ClickDetector = IDEAL_DETECTOR,
               det2: ClickDetector = IDEAL_DETECTOR) -> tuple[float, float, float]:
    """Phase phi on arm a, 50:50 recombination, click probabilities.

    Returns (p_d1, p_d2, p_coinc).
    """
    if state.mode_count != 2:
        raise ValueError("expected a two-path state")
    mixed = apply_channel(state, Channel.phase_shift(phi), 0)
    mixed = apply_channel(mixed, Channel.beamsplitter(0.5, MIXER_PHASE), (0, 1))
    p1, post1, _ = click_probabilities(mixed, det1, 0)
    p2 = click_probabilities(mixed, det2, 1).p_click
    p_coinc = 0.0 if post1 is None else p1 * click_probabilities(post1, det2, 1).p_click
    clip = lambda p: min(max(p, 0.0), 1.0)  # roundoff at fringe extremes
    return clip(p1), clip(p2), clip(p_coinc)


def scan_fringes(state: MultiModeState, phase_grid=None,
                 det1: ClickDetector = IDEAL_DETECTOR,
                 det2: ClickDetector = IDEAL_DETECTOR) -> FringeData:
    """Analytic fringe scan; per-point click probabilities."""
    if phase_grid is None:
        phase_grid = default_phase_grid()
    phases = np.asarray(phase_grid, dtype=float)
    if phases.size == 0:
        raise ValueError("phase grid must be nonempty")
    rows = [detect_pbs(state, phi, det1, det2) for phi in phases]
    d1, d2, cc = (np.array(col) for col in zip(*rows))
    return FringeData(phases=phases, counts_d1=d1, counts_d2=d2,
                      trials_per_point=0, counts_coinc=cc)


def fit_visibility(data: FringeData) -> VisibilityFit:
    """Least-squares fit of A (1 + V sin(phi + phi0)) to the d1 fringe.

    Linear in (A, A V cos phi0, A V sin phi0), so the fit is direct; sigma_V
    comes from the parameter covariance by the delta method.  Count data get
    Poisson weights; probability data get uniform weights with the noise
    scale estimated from residuals.
    """
    phases = np.asarray(data.phases, dtype=float)
    if phases.size < 4 or np.ptp(phases) <= math.pi:
        raise ValueError("underdetermined fit: need >= 4 points spanning > pi")
    y = data.rates_d1()
    X = np.column_stack([np.ones_like(phases), np.sin(phases), np.cos(phases)])
    if data.trials_per_point > 0:
        var = np.maximum(np.asarray(data.counts_d1, dtype=float), 1.0) \
            / data.trials_per_point ** 2
    else:
        var = np.ones_like(y)
    w = 1.0 / var
    xtwx = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(xtwx, X.T @ (w * y))
    resid = y - X @ coef
    cov = np.linalg.inv(xtwx)
    if data.trials_per_point == 0:
        dof = max(phases.size - 3, 1)
        cov = cov * float(resid @ resid) / dof
    c0, c1, c2 = coef
    if c0 <= 0.0:
        raise UndefinedMetric("visibility undefined: nonpositive mean level")
    r = math.hypot(c1, c2)
    v = r / c0
    if r > 0.0:
        grad = np.array([-r / c0 ** 2, c1 / (r * c0), c2 / (r * c0)])
    else:
        # degenerate at V=0: report the quadrature sum of the two amplitudes
        grad = np.array([0.0, 1.0 / c0, 1.0 / c0])
    sigma_v = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return VisibilityFit(V=min(v, 1.0), phase_offset=math.atan2(c2, c1),
                         mean_level=float(c0), sigma_V=sigma_v,
                         residual_rms=rms)


def measure_pij(state: MultiModeState,
                det1: ClickDetector = IDEAL_DETECTOR,
                det2: ClickDetector = IDEAL_DETECTOR) -> dict[str, float]:
    """Click-pattern probabilities in the path basis (no recombination).

    Key "pij" is (click on arm a, click on arm b); click conflates n >= 1
    with n = 1 exactly as a bucket detector does.
    """
    if state.mode_count != 2:
        raise ValueError("expected a two-path state")
    p1, post_click, post_noclick = click_probabilities(state, det1, 0)
    q1 = 1.0 - p1

    def _second(post):
        return 0.0 if post is None else click_probabilities(post, det2, 1).p_click

    p2_given_click = _second(post_click)
    p2_given_noclick = _second(post_noclick)
    return {
        "p11": p1 * p2_given_click,
        "p10": p1 * (1.0 - p2_given_click),
        "p01": q1 * p2_given_noclick,
        "p00": q1 * (1.0 - p2_given_noclick),
    }
