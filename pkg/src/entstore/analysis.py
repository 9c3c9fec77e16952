"""Entanglement verification arithmetic on click-pattern probabilities.

The reduced state on the zero/one-photon subspace is parameterized by the
four pattern probabilities and a single real coherence d = V (p01 + p10) / 2
between the one-photon states; cross-photon-number coherences are zero by
construction.  Concurrence, the two-photon suppression w, the transfer
efficiency eta and the concurrence ratio lambda all reduce to closed-form
ratios, with first-order Poisson error propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .errors import UndefinedMetric

PATTERNS = ("p00", "p01", "p10", "p11")


@dataclass(frozen=True)
class Measurement:
    value: float
    sigma: float | None = None
    one_sided: bool = False

    def __post_init__(self):
        if self.sigma is not None and self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")

    def to_dict(self) -> dict:
        out = {"value": self.value, "sigma": self.sigma}
        if self.one_sided:
            out["one_sided"] = True
        return out


@dataclass(frozen=True)
class ReducedDM:
    p00: float
    p01: float
    p10: float
    p11: float
    d: float

    def __post_init__(self):
        for name in PATTERNS:
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.d < 0.0:
            raise ValueError("d must be nonnegative")
        if self.d > (self.p01 + self.p10) / 2.0 + 1e-12:
            raise ValueError("d exceeds (p01 + p10)/2")

    @property
    def total(self) -> float:
        return self.p00 + self.p01 + self.p10 + self.p11

    @property
    def physical(self) -> bool:
        """Coherence within the d <= sqrt(p01 p10) bound (flag, not enforced)."""
        return self.d <= math.sqrt(self.p01 * self.p10) + 1e-12

    def pij(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PATTERNS}


def reduced_density_matrix(pij: Mapping[str, float],
                           visibility: float) -> ReducedDM:
    if not 0.0 <= visibility <= 1.0:
        raise ValueError(f"visibility {visibility} outside [0, 1]")
    vals = {name: float(pij[name]) for name in PATTERNS}
    d = visibility * (vals["p01"] + vals["p10"]) / 2.0
    return ReducedDM(d=d, **vals)


def concurrence(dm: ReducedDM) -> float:
    """C = max(2d - 2 sqrt(p00 p11), 0) / P."""
    total = dm.total
    if total <= 0.0:
        raise UndefinedMetric("concurrence undefined: zero total probability")
    num = 2.0 * dm.d - 2.0 * math.sqrt(dm.p00 * dm.p11)
    return max(num, 0.0) / total


def concurrence_partials(dm: ReducedDM, visibility: float) -> dict[str, float]:
    """First-order sensitivities of C to (V, p00, p01, p10, p11).

    Valid on the unclamped branch (C > 0); the p00/p11 entries diverge as
    p11 -> 0, where propagation should fall back to resampling.
    """
    total = dm.total
    c = concurrence(dm)
    out = {"V": (dm.p01 + dm.p10) / total}
    out["p01"] = (visibility - c) / total
    out["p10"] = (visibility - c) / total
    if dm.p11 > 0.0 and dm.p00 > 0.0:
        out["p00"] = (-math.sqrt(dm.p11 / dm.p00) - c) / total
        out["p11"] = (-math.sqrt(dm.p00 / dm.p11) - c) / total
    else:
        out["p00"] = -c / total
        out["p11"] = float("nan")
    return out


def concurrence_sigma(dm: ReducedDM, visibility: float,
                      sigma_pij: Mapping[str, float],
                      sigma_v: float) -> float:
    parts = concurrence_partials(dm, visibility)
    var = (parts["V"] * sigma_v) ** 2
    for name in PATTERNS:
        grad = parts[name]
        if math.isnan(grad):
            raise UndefinedMetric(
                "first-order propagation breaks down at p11 = 0")
        var += (grad * float(sigma_pij[name])) ** 2
    return math.sqrt(var)


def suppression_from_pij(dm: ReducedDM) -> float:
    """w = p11 / (p10 p01)."""
    denom = dm.p10 * dm.p01
    if denom <= 0.0:
        raise UndefinedMetric(
            f"suppression undefined: p10 p01 = {denom} (zero denominator)")
    return dm.p11 / denom


def suppression_sigma(dm: ReducedDM, sigma_pij: Mapping[str, float]) -> float:
    w = suppression_from_pij(dm)
    if dm.p11 == 0.0:
        return float(sigma_pij["p11"]) / (dm.p10 * dm.p01)
    rel = sum((float(sigma_pij[k]) / getattr(dm, k)) ** 2
              for k in ("p01", "p10", "p11"))
    return w * math.sqrt(rel)


def transfer_metrics(dm_in: ReducedDM, dm_out: ReducedDM) -> tuple[float, float]:
    """eta = one-photon probability ratio out/in; lambda = C_out / C_in."""
    s_in = dm_in.p01 + dm_in.p10
    if s_in <= 0.0:
        raise UndefinedMetric("eta undefined: no one-photon weight in input")
    eta = (dm_out.p01 + dm_out.p10) / s_in
    c_in = concurrence(dm_in)
    if c_in <= 0.0:
        raise UndefinedMetric("lambda undefined: input concurrence is zero")
    return eta, concurrence(dm_out) / c_in


def eta_sigma(dm_in: ReducedDM, dm_out: ReducedDM,
              sigma_in: Mapping[str, float],
              sigma_out: Mapping[str, float]) -> float:
    s_in = dm_in.p01 + dm_in.p10
    s_out = dm_out.p01 + dm_out.p10
    var_in = float(sigma_in["p01"]) ** 2 + float(sigma_in["p10"]) ** 2
    var_out = float(sigma_out["p01"]) ** 2 + float(sigma_out["p10"]) ** 2
    return math.sqrt(var_out / s_in ** 2 + (s_out ** 2 / s_in ** 4) * var_in)


def lambda_envelope(c_in: Measurement, c_out: Measurement) -> tuple[float, float, float]:
    """lambda with asymmetric errors from the +-1 sigma envelope.

    Envelope endpoints are clipped to [0, 1] (a concurrence ratio above
    unity is reported as saturated, matching the one-sided style).
    Returns (lambda, err_plus, err_minus).
    """
    if c_in.value <= 0.0:
        raise UndefinedMetric("lambda undefined: input concurrence is zero")
    if c_in.sigma is None or c_out.sigma is None:
        raise ValueError("lambda envelope needs both sigmas")
    lam = c_out.value / c_in.value
    lo_in = max(c_in.value - c_in.sigma, 1e-30)
    hi = min(max((c_out.value + c_out.sigma) / lo_in, 0.0), 1.0)
    lo = min(max((c_out.value - c_out.sigma) / (c_in.value + c_in.sigma), 0.0),
             1.0)
    return lam, hi - lam, lam - lo


def poisson_errors(counts: Mapping[str, float],
                   n_trials: int) -> dict[str, Measurement]:
    """Per-pattern probability with sqrt(N)/N_total error.

    Zero-count channels get a one-sided 1/N_total interval.
    """
    if n_trials <= 0:
        raise ValueError("n_trials must be positive")
    out = {}
    for name, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count for {name}")
        p = n / n_trials
        if n == 0:
            out[name] = Measurement(0.0, 1.0 / n_trials, one_sided=True)
        else:
            out[name] = Measurement(p, math.sqrt(n) / n_trials)
    return out


@dataclass(frozen=True)
class CorrectedVisibility:
    value: float
    clamped: bool


def background_correct_visibility(v_raw: float, signal_rate: float,
                                  background_rate: float) -> CorrectedVisibility:
    """V_corr = V_raw (S + B)/S for a phase-independent background."""
    if signal_rate <= 0.0:
        raise ValueError("signal rate must be positive")
    if background_rate < 0.0 or v_raw < 0.0:
        raise ValueError("rates and visibility must be nonnegative")
    v = v_raw * (signal_rate + background_rate) / signal_rate
    if v > 1.0:
        return CorrectedVisibility(1.0, True)
    return CorrectedVisibility(v, False)


@dataclass(frozen=True)
class EntanglementReport:
    c_in: Measurement
    c_out: Measurement
    w_in: Measurement
    w_out: Measurement
    v_in: Measurement
    v_out: Measurement
    eta: Measurement
    lam: float
    lam_plus: float | None
    lam_minus: float | None

    def __post_init__(self):
        for m in (self.c_in, self.c_out):
            if not 0.0 <= m.value <= 1.0:
                raise ValueError("concurrence outside [0, 1]")

    def to_dict(self) -> dict:
        out = {name: getattr(self, name).to_dict()
               for name in ("c_in", "c_out", "w_in", "w_out", "v_in", "v_out",
                            "eta")}
        out["lambda"] = {"value": self.lam, "err_plus": self.lam_plus,
                         "err_minus": self.lam_minus}
        return out


def entanglement_report(pij_in: Mapping[str, float],
                        pij_out: Mapping[str, float],
                        v_in: Measurement, v_out: Measurement,
                        sigma_in: Mapping[str, float] | None = None,
                        sigma_out: Mapping[str, float] | None = None) -> EntanglementReport:
    """Assemble the paired in/out verification report.

    Without per-pattern sigmas the derived sigmas are reported as absent.
    """
    dm_in = reduced_density_matrix(pij_in, v_in.value)
    dm_out = reduced_density_matrix(pij_out, v_out.value)
    c_in_v = concurrence(dm_in)
    c_out_v = concurrence(dm_out)
    eta_v, lam = transfer_metrics(dm_in, dm_out)
    have_sigmas = (sigma_in is not None and sigma_out is not None
                   and v_in.sigma is not None and v_out.sigma is not None)
    if have_sigmas:
        c_in = Measurement(c_in_v, concurrence_sigma(dm_in, v_in.value,
                                                     sigma_in, v_in.sigma))
        c_out = Measurement(c_out_v, concurrence_sigma(dm_out, v_out.value,
                                                       sigma_out, v_out.sigma))
        w_in = Measurement(suppression_from_pij(dm_in),
                           suppression_sigma(dm_in, sigma_in))
        w_out = Measurement(suppression_from_pij(dm_out),
                            suppression_sigma(dm_out, sigma_out))
        eta = Measurement(eta_v, eta_sigma(dm_in, dm_out, sigma_in, sigma_out))
        lam, lam_plus, lam_minus = lambda_envelope(c_in, c_out)
    else:
        c_in = Measurement(c_in_v)
        c_out = Measurement(c_out_v)
        w_in = Measurement(suppression_from_pij(dm_in))
        w_out = Measurement(suppression_from_pij(dm_out))
        eta = Measurement(eta_v)
        lam_plus = lam_minus = None
    return EntanglementReport(c_in=c_in, c_out=c_out, w_in=w_in, w_out=w_out,
                              v_in=v_in, v_out=v_out, eta=eta, lam=lam,
                              lam_plus=lam_plus, lam_minus=lam_minus)
