"""Write/read photon-pair source: two-mode squeezed correlations, heralding,
and the two-photon suppression parameter w.

The source emits correlated field-1 / field-2 photon pairs with amplitudes
proportional to chi^n on |n, n>.  Detecting field 1 (after its optical path
loss) heralds a field-2 excitation; the heralded field-2 state then passes an
extraction loss equal to the heralding efficiency.  The suppression parameter
w is the normalised coincidence ratio p1 * p123 / (p12 * p13) of a
herald-gated Hanbury Brown-Twiss split, which for this source grows like
4 chi^2 at small chi (inefficient heralding), so chi doubles as the knob for
the single-photon purity.

Default chi and field-1 transmission sit at the calibrated operating point:
herald probability 1e-3 per trial with measured w of about 0.11.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .errors import UndefinedMetric
from .fock import (
    DEFAULT_N_MAX,
    Channel,
    ClickDetector,
    MultiModeState,
    apply_channel,
    apply_loss,
    click_probabilities,
    photon_number_probs,
)

# Operating-point defaults (see SourceParams): chi and the field-1 path
# transmission are not directly measurable; these values make herald_field2
# return p1 = 1.0e-3 while the measured HBT suppression sits at w = 0.11
# with the default 50%-efficiency detectors.
DEFAULT_CHI = 0.171576
DEFAULT_FIELD1_TRANSMISSION = 0.066011
CHI_MAX = 0.5


@dataclass(frozen=True)
class SourceParams:
    """Source operating point.

    chi is capped at 0.5 (perturbative regime); field1_transmission is the
    aggregate optical transmission of the herald path (free calibration
    parameter); heralding_efficiency is the probability that a heralded
    field-2 photon actually leaves the ensemble (aggregate, includes read-out
    inefficiency).
    """

    chi: float = DEFAULT_CHI
    herald_detector: ClickDetector = ClickDetector(efficiency=0.5, dark_prob=0.0)
    field1_transmission: float = DEFAULT_FIELD1_TRANSMISSION
    heralding_efficiency: float = 0.10
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        if not 0.0 <= self.chi <= CHI_MAX:
            raise ValueError(f"chi {self.chi} outside [0, {CHI_MAX}]")
        for name in ("field1_transmission", "heralding_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")


@dataclass(frozen=True)
class HeraldedPhoton:
    p1: float
    state: MultiModeState
    w_source: float

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"p1 {self.p1} outside [0, 1]")
        if self.w_source < 0.0:
            raise ValueError(f"w_source {self.w_source} must be >= 0")


def tmsv_state(chi: float, n_max: int = DEFAULT_N_MAX) -> MultiModeState:
    """Two-mode squeezed vacuum truncated at n_max and renormalised.

    Mode 0 is field 1 (herald), mode 1 is field 2.  Before truncation
    p(n, n) = (1 - chi^2) chi^(2n).
    """
    if not 0.0 <= chi < 1.0:
        raise ValueError(f"chi {chi} outside [0, 1)")
    b = n_max + 1
    ket = np.zeros(b * b, dtype=complex)
    for n in range(b):
        ket[n * b + n] = chi ** n
    return MultiModeState.from_ket(ket, 2, n_max)


def second_order_coherence(state: MultiModeState, mode: int = 0) -> float:
    """g2(0) = <n(n-1)> / <n>^2 from the photon-number marginal."""
    pn = photon_number_probs(state, mode)
    n = np.arange(state.n_max + 1)
    mean = float(np.dot(pn, n))
    if mean <= 0.0:
        raise UndefinedMetric("second-order coherence undefined: zero mean photon number")
    fac = float(np.dot(pn, n * (n - 1)))
    return fac / mean ** 2


def herald_field2(params: SourceParams) -> HeraldedPhoton:
    """Herald on a field-1 click; return the conditional field-2 state.

    The field-2 state has passed the heralding-efficiency loss.  w_source is
    the suppression parameter of the conditional state measured with ideal
    HBT optics (second-order coherence), independent of downstream loss.
    """
    joint = tmsv_state(params.chi, params.n_max)
    joint = apply_loss(joint, 0, params.field1_transmission)
    p1, post_click, _ = click_probabilities(joint, params.herald_detector, 0)
    if post_click is None:
        # chi = 0 with no dark counts: nothing is ever heralded.
        vac = MultiModeState.vacuum(1, params.n_max)
        return HeraldedPhoton(p1=0.0, state=vac, w_source=0.0)
    conditional = post_click.partial_trace([1])
    try:
        w_source = second_order_coherence(conditional, 0)
    except UndefinedMetric:
        w_source = 0.0  # vacuum herald (pure dark counts): no two-photon term
    out = apply_loss(conditional, 0, params.heralding_efficiency)
    return HeraldedPhoton(p1=p1, state=out, w_source=w_source)


def hbt_suppression(photon: HeraldedPhoton,
                    splitter: Channel = Channel.beamsplitter(0.5),
                    det2: ClickDetector = ClickDetector(efficiency=0.5),
                    det3: ClickDetector = ClickDetector(efficiency=0.5)) -> float:
    """Herald-gated HBT measurement: w = P(2 and 3) / (P(2) * P(3)).

    Probabilities are conditioned on the herald, so this equals the
    unconditional ratio p1 * p123 / (p12 * p13).
    """
    split = photon.state.tensor(MultiModeState.vacuum(1, photon.state.n_max))
    split = apply_channel(split, splitter, (0, 1))
    p2, post2, _ = click_probabilities(split, det2, 0)
    p3 = click_probabilities(split, det3, 1).p_click
    if p2 <= 0.0 or p3 <= 0.0:
        raise UndefinedMetric(
            f"suppression undefined: singles probabilities p2={p2}, p3={p3}")
    p23 = p2 * click_probabilities(post2, det3, 1).p_click
    return p23 / (p2 * p3)


def calibrate_chi(p1_target: float, params: SourceParams) -> float:
    """Invert herald_field2's p1(chi) by root-solve; 1e-6 relative accuracy."""
    if not 0.0 <= p1_target < 1.0:
        raise ValueError(f"p1_target {p1_target} outside [0, 1)")
    if p1_target == 0.0:
        return 0.0

    def gap(chi):
        return herald_field2(replace(params, chi=chi)).p1 - p1_target

    dark_floor = params.herald_detector.dark_prob
    if p1_target < dark_floor:
        raise ValueError(
            f"p1_target {p1_target} below the dark-count floor {dark_floor}")
    hi = CHI_MAX
    if gap(hi) < 0.0:
        raise ValueError(f"p1_target {p1_target} unreachable with chi <= {CHI_MAX}")
    chi = float(brentq(gap, 0.0, hi, xtol=1e-15, rtol=8.9e-16))
    achieved = herald_field2(replace(params, chi=chi)).p1
    if abs(achieved - p1_target) > 1e-6 * p1_target:
        raise RuntimeError("calibration failed to reach 1e-6 relative accuracy")
    return chi
