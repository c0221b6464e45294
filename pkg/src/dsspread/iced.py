"""Iterative channel estimation and detection with detected symbols as virtual pilots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import SamplingLayout
from .detect import DetectionResult, mmse_equalize, one_tap_equalize, vssd
from .dsgrid import AtomContext, Dictionary, build_dictionary
from .vbce import ChannelEstimate, Refine, VbConfig, VbState, initial_state, run_ce
from .waveform import Constellation, WaveformMatrices


class StackedAtomContext:
    """Atoms of several blocks stacked vertically for identical ``(tau, omega)``."""

    def __init__(self, *parts: AtomContext):
        self.parts = parts
        self.M = sum(p.M for p in parts)

    def atoms(self, tau, omega, q_alpha: float, order: int = 0):
        outs = [p.atoms(tau, omega, q_alpha, order=order) for p in self.parts]
        if order == 0:
            return np.vstack(outs)
        return tuple(np.vstack(mats) for mats in zip(*outs))


@dataclass
class ExtendedModel:
    y_E: np.ndarray
    ctx: StackedAtomContext = field(repr=False)
    x_hat: np.ndarray = field(repr=False)

    @property
    def M_p(self) -> int:
        return self.ctx.parts[0].M

    @property
    def M_d(self) -> int:
        return self.ctx.parts[1].M


@dataclass
class IcedResult:
    estimate: ChannelEstimate
    detection: DetectionResult
    rounds: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def build_extended_model(
    y_p: np.ndarray,
    y: np.ndarray,
    x_hat: np.ndarray,
    pilot_ctx: AtomContext,
    wm: WaveformMatrices,
    layout: SamplingLayout,
) -> ExtendedModel:
    y_p = np.asarray(y_p, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if y_p.shape[0] != pilot_ctx.M:
        raise ValueError(f"pilot observation has {y_p.shape[0]} samples, dictionary expects {pilot_ctx.M}")
    if y.shape[0] != wm.M_d or np.shape(x_hat)[0] != wm.M_d:
        raise ValueError("data observation, detected symbols and waveform disagree on M_d")
    data_ctx = AtomContext(wm, x_hat, layout)
    return ExtendedModel(np.concatenate([y_p, y]), StackedAtomContext(pilot_ctx, data_ctx), np.asarray(x_hat))


def detect(
    kind: str,
    H: np.ndarray,
    y: np.ndarray,
    sigma2: float,
    constellation: Constellation,
) -> DetectionResult:
    kind = kind.upper()
    if kind == "VSSD":
        return vssd(H, y, sigma2, constellation)
    if kind == "MMSE":
        return mmse_equalize(H, y, sigma2, constellation)
    if kind in ("1TAP", "ONE_TAP", "1-TAP"):
        return one_tap_equalize(H, y, constellation)
    raise ValueError(f"unknown detector {kind!r}")


def _warm_state(prev: VbState, dictionary: Dictionary) -> VbState:
    state = initial_state(dictionary, np.zeros(dictionary.A.shape[0]), delta0=prev.delta, gamma0=prev.gamma)
    return state


def run_iced(
    y_p: np.ndarray,
    y: np.ndarray,
    pilot_dictionary: Dictionary,
    wm: WaveformMatrices,
    layout: SamplingLayout,
    constellation: Constellation,
    cfg: VbConfig = VbConfig(refine=Refine.SVB),
    detector: str = "VSSD",
    max_rounds: int = 3,
    initial: ChannelEstimate | None = None,
) -> IcedResult:
    """Pilot-only estimate and detection, then up to ``max_rounds`` data-aided rounds.

    Each round rebuilds the dictionary on the previous round's refined grid
    with ``[pilot; virtual-pilot]`` atoms, starts VB from the previous
    precisions and stops once the hard decisions repeat.  Detection uses the
    estimated noise variance ``1/gamma``.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    est = initial if initial is not None else run_ce(y_p, pilot_dictionary, cfg)
    H_hat = est.effective_channel(wm, layout)
    est.Heff_hat = H_hat
    det = detect(detector, H_hat, y, est.noise_variance, constellation)
    history = [(est, det)]
    converged = max_rounds == 0
    rounds = 0
    pilot_ctx = pilot_dictionary.ctx
    for rounds in range(1, max_rounds + 1):
        x_hat = constellation.points[det.hard]
        model = build_extended_model(y_p, y, x_hat, pilot_ctx, wm, layout)
        grid = est.state.dictionary.grid if est.state is not None else pilot_dictionary.grid
        dictionary = build_dictionary(grid, model.ctx)
        state = _warm_state(est.state, dictionary) if est.state is not None else None
        est = run_ce(model.y_E, dictionary, cfg, state=state)
        H_hat = est.effective_channel(wm, layout)
        est.Heff_hat = H_hat
        new = detect(detector, H_hat, y, est.noise_variance, constellation)
        history.append((est, new))
        same = np.array_equal(new.hard, det.hard)
        det = new
        if same:
            converged = True
            break
    return IcedResult(est, det, rounds, converged, history)
