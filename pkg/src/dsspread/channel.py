"""Delay-scale spread channel: random path draws, discrete channel matrices, AWGN."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .waveform import WaveformConfig, WaveformMatrices


@dataclass(frozen=True)
class PathSet:
    h: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=complex))
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if not (h.shape == tau.shape == alpha.shape) or h.ndim != 1 or h.size < 1:
            raise ValueError("h, tau and alpha must be 1-D arrays of equal, non-zero length")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "alpha", alpha)

    @property
    def P(self) -> int:
        return self.h.size

    def __add__(self, other: "PathSet") -> "PathSet":
        return PathSet(
            np.concatenate([self.h, other.h]),
            np.concatenate([self.tau, other.tau]),
            np.concatenate([self.alpha, other.alpha]),
        )


@dataclass(frozen=True)
class ChannelSpec:
    tau_max: float = 32e-3
    alpha_max: float = 1.001
    P: int = 5
    scale_model: str = "uniform"

    def __post_init__(self):
        if self.alpha_max < 1:
            raise ValueError("alpha_max must be >= 1")
        if self.tau_max < 0:
            raise ValueError("tau_max must be >= 0")
        if self.P < 1:
            raise ValueError("need at least one path")
        if self.scale_model not in ("uniform", "log-uniform"):
            raise ValueError(f"unknown scale model {self.scale_model!r}")


@dataclass(frozen=True)
class SamplingLayout:
    """Frequency/time sampling of one block of ``M`` samples over ``Ts`` seconds."""

    M: int
    Ts: float
    f_L: float = 10e3

    def __post_init__(self):
        if self.M < 1 or self.Ts <= 0:
            raise ValueError("layout needs M >= 1 and Ts > 0")

    @property
    def B(self) -> float:
        return self.M / self.Ts

    @property
    def f(self) -> np.ndarray:
        return self.f_L + self.B / self.M * np.arange(self.M)

    @property
    def t(self) -> np.ndarray:
        return self.Ts / self.M * np.arange(self.M)

    @classmethod
    def for_waveform(cls, cfg: WaveformConfig, f_L: float = 10e3) -> "SamplingLayout":
        return cls(M=cfg.M_d, Ts=cfg.frame_duration, f_L=f_L)


@dataclass
class ChannelMatrices:
    Ht: np.ndarray = field(repr=False)
    Heff: np.ndarray | None = field(default=None, repr=False)


def sample_paths(spec: ChannelSpec, rng: np.random.Generator) -> PathSet:
    P = spec.P
    h = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / np.sqrt(2)
    tau = rng.uniform(0.0, spec.tau_max, P)
    if spec.alpha_max == 1:
        alpha = np.ones(P)
    elif spec.scale_model == "uniform":
        alpha = rng.uniform(1 / spec.alpha_max, spec.alpha_max, P)
    else:
        la = np.log(spec.alpha_max)
        alpha = np.exp(rng.uniform(-la, la, P))
    return PathSet(h, tau, alpha)


def scaled_dft(layout: SamplingLayout, alpha: float = 1.0) -> np.ndarray:
    """``F^{.1/alpha}``: the sampled DFT with every exponent divided by ``alpha``.

    The ``1/sqrt(M)`` normalisation is kept outside the element-wise power.
    """
    ft = np.outer(layout.f, layout.t)
    return np.exp(-2j * np.pi * ft / alpha) / np.sqrt(layout.M)


def path_operator(layout: SamplingLayout, tau: float, alpha: float) -> np.ndarray:
    """Unit-gain single-path matrix ``sqrt(alpha) F^H Gamma F^{.1/alpha}``."""
    if alpha <= 0:
        raise ValueError("scale factors must be positive")
    F = scaled_dft(layout)
    gamma = np.exp(-2j * np.pi * layout.f * tau) / alpha
    return np.sqrt(alpha) * (F.conj().T * gamma) @ scaled_dft(layout, alpha)


def time_domain_channel_matrix(paths: PathSet, layout: SamplingLayout) -> ChannelMatrices:
    Ht = np.zeros((layout.M, layout.M), dtype=complex)
    for h, tau, alpha in zip(paths.h, paths.tau, paths.alpha):
        Ht += h * path_operator(layout, tau, alpha)
    return ChannelMatrices(Ht=Ht)


def effective_channel(wm: WaveformMatrices, Ht: np.ndarray) -> np.ndarray:
    G = wm.G
    if Ht.shape != (G.shape[0], G.shape[0]):
        raise ValueError(f"channel is {Ht.shape}, waveform expects {G.shape[0]} samples")
    return G.conj().T @ Ht @ G


def noise_variance(received: np.ndarray, snr_db: float) -> float:
    """Per-sample noise variance giving ``snr_db`` relative to the received power."""
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    power = float(np.mean(np.abs(received) ** 2))
    return power / 10 ** (snr_db / 10)


def complex_noise(rng: np.random.Generator, n: int, sigma2: float) -> np.ndarray:
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def apply_channel(s: np.ndarray, Ht: np.ndarray, snr_db: float, rng: np.random.Generator):
    """Return ``(r, sigma2)`` with ``r = Ht s + w``; ``snr_db=inf`` disables noise."""
    s = np.asarray(s)
    if s.shape[0] != Ht.shape[1]:
        raise ValueError("signal length does not match the channel matrix")
    clean = Ht @ s
    sigma2 = noise_variance(clean, snr_db)
    if sigma2 == 0.0:
        return clean, 0.0
    return clean + complex_noise(rng, clean.shape[0], sigma2), sigma2


# -- channel dump files ---------------------------------------------------------

DUMP_FIELDS = ("h_re", "h_im", "tau_s", "alpha")


def write_paths_csv(paths: PathSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DUMP_FIELDS)
        for h, tau, alpha in zip(paths.h, paths.tau, paths.alpha):
            w.writerow([repr(float(h.real)), repr(float(h.imag)), repr(float(tau)), repr(float(alpha))])


def read_paths_csv(path: str | Path) -> PathSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no paths")
    h = [float(r["h_re"]) + 1j * float(r["h_im"]) for r in rows]
    return PathSet(h, [float(r["tau_s"]) for r in rows], [float(r["alpha"]) for r in rows])
