"""Truncated Fock-space states, channels and click detection for few optical modes.

States are dense density operators over the occupation basis with a photon
cutoff ``n_max`` per mode (default 3).  Basis ordering is row major with the
first mode most significant: for two modes, index = n0 * (n_max+1) + n1.
Dimension is (n_max+1)**mode_count, capped at four modes (256 x 256 at the
default cutoff), so dense linear algebra is always cheap.

Channels are exact CPTP maps on the truncated space:

* ``loss(t)``       beamsplitter coupling to an undetected vacuum mode
                    (binomial Kraus operators, photon-number non-increasing).
* ``phase(phi)``    rotation exp(i * phi * n).
* ``beamsplitter``  two-mode mixing exp(theta * (e^{i phi} a0+ a1 - h.c.))
                    with cos(theta)^2 = transmittance; exactly unitary on the
                    truncated space, photon-number conserving up to cutoff.
* ``background``    phase-insensitive injection of a small mean photon
                    number, realised as a Poisson-weighted mixture of cyclic
                    number shifts (a mixture of unitaries, hence exactly
                    trace preserving; wraparound weight is negligible for the
                    per-gate means used here).

Click detectors are non-number-resolving: a detector with efficiency eta and
dark-click probability dark fires on an n-photon state with probability
1 - (1 - dark) * (1 - eta)^n.  Conditional post-measurement states use the
square-root (Luders) instrument of this diagonal POVM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

DEFAULT_N_MAX = 3
MAX_MODES = 4
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-9
EIGENVALUE_TOL = -1e-9
TRUNCATION_REPORT_THRESHOLD = 1e-6


class MultiModeState:
    """Density operator over a truncated multi-mode Fock basis.

    Construction validates trace (within 1e-9 of one), hermiticity and
    positivity (eigenvalues above -1e-9).  ``truncation_flag`` records that
    some earlier operation saw non-negligible weight beyond the cutoff, so
    downstream numbers may carry truncation error.
    """

    def __init__(self, rho: np.ndarray, mode_count: int, n_max: int = DEFAULT_N_MAX,
                 truncation_flag: bool = False, validate: bool = True):
        if mode_count < 1 or mode_count > MAX_MODES:
            raise ValueError(f"mode_count must be in [1, {MAX_MODES}], got {mode_count}")
        if n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {n_max}")
        dim = (n_max + 1) ** mode_count
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (dim, dim):
            raise ValueError(f"density matrix shape {rho.shape} != ({dim}, {dim})")
        if validate:
            tr = np.trace(rho).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ValueError(f"trace {tr} deviates from 1 by more than {TRACE_TOL}")
            if np.max(np.abs(rho - rho.conj().T)) > HERMITICITY_TOL:
                raise ValueError("density matrix is not Hermitian within tolerance")
            if np.min(np.linalg.eigvalsh(rho)) < EIGENVALUE_TOL:
                raise ValueError("density matrix has an eigenvalue below -1e-9")
        rho = rho.copy()
        rho.setflags(write=False)
        self.rho = rho
        self.mode_count = mode_count
        self.n_max = n_max
        self.truncation_flag = bool(truncation_flag)

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** self.mode_count

    @classmethod
    def vacuum(cls, mode_count: int, n_max: int = DEFAULT_N_MAX) -> "MultiModeState":
        dim = (n_max + 1) ** mode_count
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return cls(rho, mode_count, n_max)

    @classmethod
    def from_ket(cls, ket: np.ndarray, mode_count: int,
                 n_max: int = DEFAULT_N_MAX) -> "MultiModeState":
        """Pure state from a (possibly unnormalised) amplitude vector."""
        ket = np.asarray(ket, dtype=complex).ravel()
        norm = np.linalg.norm(ket)
        if norm == 0.0:
            raise ValueError("ket has zero norm")
        ket = ket / norm
        return cls(np.outer(ket, ket.conj()), mode_count, n_max)

    @classmethod
    def fock(cls, occupations: Sequence[int], n_max: int = DEFAULT_N_MAX) -> "MultiModeState":
        """Number state |n0, n1, ...>."""
        occupations = tuple(int(n) for n in occupations)
        if any(n < 0 or n > n_max for n in occupations):
            raise ValueError(f"occupations {occupations} outside [0, {n_max}]")
        mode_count = len(occupations)
        dim = (n_max + 1) ** mode_count
        ket = np.zeros(dim, dtype=complex)
        ket[_index_of(occupations, n_max)] = 1.0
        return cls.from_ket(ket, mode_count, n_max)

    def occupations(self) -> np.ndarray:
        """(dim, mode_count) table of basis occupations in index order."""
        return _occupation_table(self.mode_count, self.n_max)

    def probability(self, occupations: Sequence[int]) -> float:
        """Population of one basis state."""
        i = _index_of(tuple(occupations), self.n_max)
        return float(self.rho[i, i].real)

    def amplitude(self, occ_row: Sequence[int], occ_col: Sequence[int]) -> complex:
        return complex(self.rho[_index_of(tuple(occ_row), self.n_max),
                                _index_of(tuple(occ_col), self.n_max)])

    def mean_photons(self, mode: int | None = None) -> float:
        """Mean photon number of one mode, or summed over all modes."""
        occ = self.occupations()
        diag = np.real(np.diag(self.rho))
        if mode is None:
            return float(np.sum(diag * occ.sum(axis=1)))
        return float(np.sum(diag * occ[:, mode]))

    @property
    def truncation_weight(self) -> float:
        """Probability weight sitting at the cutoff level in any mode."""
        occ = self.occupations()
        at_cutoff = np.any(occ == self.n_max, axis=1)
        return float(np.sum(np.real(np.diag(self.rho))[at_cutoff]))

    def tensor(self, other: "MultiModeState") -> "MultiModeState":
        if other.n_max != self.n_max:
            raise ValueError("tensor factors must share n_max")
        return MultiModeState(np.kron(self.rho, other.rho),
                              self.mode_count + other.mode_count, self.n_max,
                              truncation_flag=self.truncation_flag or other.truncation_flag)

    def partial_trace(self, keep: Sequence[int]) -> "MultiModeState":
        """Trace out all modes not listed in ``keep`` (order preserved as given)."""
        keep = list(keep)
        m, b = self.mode_count, self.n_max + 1
        drop = [i for i in range(m) if i not in keep]
        r = self.rho.reshape((b,) * (2 * m))
        perm = keep + drop + [m + i for i in keep] + [m + i for i in drop]
        r = np.transpose(r, perm)
        dk, dd = b ** len(keep), b ** len(drop)
        r = r.reshape(dk, dd, dk, dd)
        out = np.trace(r, axis1=1, axis2=3)
        return MultiModeState(out, len(keep), self.n_max,
                              truncation_flag=self.truncation_flag)


@dataclass(frozen=True)
class ClickDetector:
    """Non-number-resolving (bucket) detector."""

    efficiency: float = 0.5
    dark_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError(f"dark_prob {self.dark_prob} outside [0, 1)")

    def no_click_weights(self, n_max: int) -> np.ndarray:
        """P(no click | n photons) for n = 0..n_max."""
        n = np.arange(n_max + 1)
        return (1.0 - self.dark_prob) * (1.0 - self.efficiency) ** n


@dataclass(frozen=True)
class Channel:
    """One CPTP map.  Use the factory methods; ``kind`` selects the action."""

    kind: str
    transmission: float = 1.0
    phase: float = 0.0
    mean: float = 0.0

    @staticmethod
    def loss(transmission: float) -> "Channel":
        if not 0.0 <= transmission <= 1.0:
            raise ValueError(f"transmission {transmission} outside [0, 1]")
        return Channel(kind="loss", transmission=transmission)

    @staticmethod
    def phase_shift(phase: float) -> "Channel":
        return Channel(kind="phase", phase=phase)

    @staticmethod
    def beamsplitter(transmittance: float = 0.5, phase: float = 0.0) -> "Channel":
        if not 0.0 <= transmittance <= 1.0:
            raise ValueError(f"transmittance {transmittance} outside [0, 1]")
        return Channel(kind="beamsplitter", transmission=transmittance, phase=phase)

    @staticmethod
    def background_injection(mean: float) -> "Channel":
        if mean < 0.0:
            raise ValueError(f"mean {mean} must be >= 0")
        return Channel(kind="background", mean=mean)


class ClickResult(NamedTuple):
    p_click: float
    post_click: MultiModeState | None
    post_noclick: MultiModeState | None


# ---------------------------------------------------------------------------
# internal dense-operator layer (exposed for brute-force checks in tests)

def _index_of(occupations: tuple, n_max: int) -> int:
    idx = 0
    for n in occupations:
        idx = idx * (n_max + 1) + n
    return idx


@lru_cache(maxsize=None)
def _occupation_table(mode_count: int, n_max: int) -> np.ndarray:
    b = n_max + 1
    occ = np.array(list(np.ndindex(*([b] * mode_count))), dtype=int)
    occ.setflags(write=False)
    return occ


@lru_cache(maxsize=None)
def _annihilation(n_max: int) -> np.ndarray:
    a = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    for n in range(1, n_max + 1):
        a[n - 1, n] = math.sqrt(n)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _loss_kraus(n_max: int, transmission: float) -> tuple:
    """Binomial damping Kraus set: K_k maps |n> to sqrt(C(n,k) t^(n-k) (1-t)^k) |n-k>."""
    t = transmission
    ops = []
    for k in range(n_max + 1):
        op = np.zeros((n_max + 1, n_max + 1), dtype=complex)
        for n in range(k, n_max + 1):
            op[n - k, n] = math.sqrt(math.comb(n, k) * t ** (n - k) * (1.0 - t) ** k)
        ops.append(op)
    return tuple(ops)


@lru_cache(maxsize=None)
def _bs_unitary(n_max: int, transmittance: float, phase: float) -> np.ndarray:
    """exp(theta (e^{i phi} a0+ a1 - e^{-i phi} a0 a1+)) on the two-mode truncated basis."""
    theta = math.acos(math.sqrt(transmittance))
    a = _annihilation(n_max)
    adag = a.conj().T
    gen = theta * (np.exp(1j * phase) * np.kron(adag, a)
                   - np.exp(-1j * phase) * np.kron(a, adag))
    u = expm(gen)
    u.setflags(write=False)
    return u


@lru_cache(maxsize=None)
def _shift_unitary(n_max: int, k: int) -> np.ndarray:
    """Cyclic number shift |n> -> |(n+k) mod (n_max+1)>."""
    b = n_max + 1
    u = np.zeros((b, b), dtype=complex)
    for n in range(b):
        u[(n + k) % b, n] = 1.0
    u.setflags(write=False)
    return u


def _contract(rho: np.ndarray, mat: np.ndarray, modes: tuple, mode_count: int,
              n_max: int) -> np.ndarray:
    """Return M rho M+ where M acts on the listed modes only."""
    b = n_max + 1
    k = len(modes)
    r = rho.reshape((b,) * (2 * mode_count))
    others = [i for i in range(mode_count) if i not in modes]
    perm = list(modes) + others + [mode_count + i for i in modes] \
        + [mode_count + i for i in others]
    r = np.transpose(r, perm)
    dk, do = b ** k, b ** (mode_count - k)
    r = r.reshape(dk, do, dk, do)
    out = np.einsum("AB,BiDj,CD->AiCj", mat, r, mat.conj(), optimize=True)
    out = out.reshape((b,) * (2 * mode_count))
    out = np.transpose(out, np.argsort(perm))
    dim = b ** mode_count
    return out.reshape(dim, dim)


def _apply_kraus(rho: np.ndarray, ops: Sequence[np.ndarray], modes: tuple,
                 mode_count: int, n_max: int) -> np.ndarray:
    out = np.zeros_like(rho)
    for op in ops:
        out += _contract(rho, op, modes, mode_count, n_max)
    return out


def _check_mode(state: MultiModeState, mode: int):
    if not 0 <= mode < state.mode_count:
        raise ValueError(f"mode {mode} out of range for {state.mode_count}-mode state")


# ---------------------------------------------------------------------------
# public operations

def apply_loss(state: MultiModeState, mode: int, transmission: float) -> MultiModeState:
    """Pure loss on one mode; photon distribution thins binomially."""
    _check_mode(state, mode)
    if not 0.0 <= transmission <= 1.0:
        raise ValueError(f"transmission {transmission} outside [0, 1]")
    rho = _apply_kraus(state.rho, _loss_kraus(state.n_max, transmission), (mode,),
                       state.mode_count, state.n_max)
    return MultiModeState(rho, state.mode_count, state.n_max,
                          truncation_flag=state.truncation_flag)


def apply_phase(state: MultiModeState, mode: int, phase: float) -> MultiModeState:
    _check_mode(state, mode)
    diag = np.exp(1j * phase * np.arange(state.n_max + 1))
    rho = _contract(state.rho, np.diag(diag), (mode,), state.mode_count, state.n_max)
    return MultiModeState(rho, state.mode_count, state.n_max,
                          truncation_flag=state.truncation_flag)


def apply_beamsplitter(state: MultiModeState, modes: tuple, transmittance: float = 0.5,
                       phase: float = 0.0) -> MultiModeState:
    """Two-mode mixing.  The inverse of (T, phi) is (T, phi + pi).

    Exactly unitary on the truncated space.  If the input carries weight on
    total photon number above the cutoff across the pair, the output picks up
    truncation error and the state flag is set.
    """
    if len(modes) != 2 or modes[0] == modes[1]:
        raise ValueError(f"beamsplitter needs two distinct modes, got {modes}")
    for m in modes:
        _check_mode(state, m)
    occ = state.occupations()
    pair_total = occ[:, modes[0]] + occ[:, modes[1]]
    overflow = float(np.sum(np.real(np.diag(state.rho))[pair_total > state.n_max]))
    u = _bs_unitary(state.n_max, transmittance, phase)
    rho = _contract(state.rho, u, tuple(modes), state.mode_count, state.n_max)
    flag = state.truncation_flag or overflow > TRUNCATION_REPORT_THRESHOLD
    return MultiModeState(rho, state.mode_count, state.n_max, truncation_flag=flag)


def apply_background_injection(state: MultiModeState, mode: int, mean: float) -> MultiModeState:
    """Add ~mean background photons, phase-insensitively.

    Poisson-weighted mixture of cyclic number shifts; the tail weight beyond
    the cutoff is folded into the largest shift, so trace is preserved
    exactly and the added mean is correct to within the (tiny) weight of the
    input near the cutoff.
    """
    _check_mode(state, mode)
    if mean < 0.0:
        raise ValueError(f"mean {mean} must be >= 0")
    if mean == 0.0:
        return state
    b = state.n_max + 1
    weights = [math.exp(-mean) * mean ** k / math.factorial(k) for k in range(b)]
    weights[-1] = 1.0 - sum(weights[:-1])
    rho = np.zeros_like(state.rho)
    for k, w in enumerate(weights):
        if w <= 0.0:
            continue
        rho += w * _contract(state.rho, _shift_unitary(state.n_max, k), (mode,),
                             state.mode_count, state.n_max)
    return MultiModeState(rho, state.mode_count, state.n_max,
                          truncation_flag=state.truncation_flag)


def apply_channel(state: MultiModeState, channel, modes) -> MultiModeState:
    """Apply one Channel or a sequence of them.

    ``modes`` is an int for single-mode kinds, a pair for beamsplitters; for
    a sequence of channels pass a matching sequence of mode specs.
    """
    if isinstance(channel, Channel):
        if channel.kind == "loss":
            return apply_loss(state, modes, channel.transmission)
        if channel.kind == "phase":
            return apply_phase(state, modes, channel.phase)
        if channel.kind == "beamsplitter":
            return apply_beamsplitter(state, tuple(modes), channel.transmission,
                                      channel.phase)
        if channel.kind == "background":
            return apply_background_injection(state, modes, channel.mean)
        raise ValueError(f"unknown channel kind {channel.kind!r}")
    for chan, sel in zip(channel, modes, strict=True):
        state = apply_channel(state, chan, sel)
    return state


def photon_number_probs(state: MultiModeState, mode: int) -> np.ndarray:
    """Marginal photon-number distribution of one mode."""
    _check_mode(state, mode)
    occ = state.occupations()[:, mode]
    diag = np.real(np.diag(state.rho))
    return np.array([np.sum(diag[occ == n]) for n in range(state.n_max + 1)])


def click_probabilities(state: MultiModeState, detector: ClickDetector,
                        mode: int) -> ClickResult:
    """Bucket-detector measurement of one mode.

    p_click = 1 - (1 - dark) * E[(1 - eta)^n].  Conditional states come from
    the square-root instrument; mixing them back with weights (p, 1-p)
    reproduces the nonselective measurement map.  A conditional state on a
    zero-probability branch is returned as None.
    """
    _check_mode(state, mode)
    w_nc = detector.no_click_weights(state.n_max)
    pn = photon_number_probs(state, mode)
    # Each branch weight comes from its own POVM element; computing p_click
    # as 1 - p_noclick would amplify roundoff by 1/p on near-empty branches.
    p_noclick = float(np.dot(pn, w_nc))
    p_click = float(np.dot(pn, 1.0 - w_nc))

    def _conditional(weights, p):
        if p < 1e-15:
            return None
        m = np.diag(np.sqrt(weights))
        rho = _contract(state.rho, m, (mode,), state.mode_count, state.n_max) / p
        return MultiModeState(rho, state.mode_count, state.n_max,
                              truncation_flag=state.truncation_flag)

    post_click = _conditional(1.0 - w_nc, p_click)
    post_noclick = _conditional(w_nc, p_noclick)
    return ClickResult(p_click, post_click, post_noclick)
