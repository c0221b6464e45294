"""Transmitter matrices for OTFS, OFDM, OCDM and ODSS.

Every waveform is reduced to a single synthesis matrix ``G`` that maps the
symbol vector onto the ``M_d`` time-domain samples of one frame.  Symbol
vectors are stacked column-major, subcarrier (or delay) index fastest.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class WaveformKind(str, enum.Enum):
    OTFS = "OTFS"
    OFDM = "OFDM"
    OCDM = "OCDM"
    ODSS = "ODSS"


@dataclass(frozen=True)
class WaveformConfig:
    """Parameters of one waveform frame.

    For OFDM/OTFS/OCDM the subcarrier spacing is ``B / M`` and the frame
    lasts ``N / delta_f``.  For ODSS the subcarrier widths grow geometrically
    (``q**m * W``); ``B`` may be left as ``None`` and is then derived from
    ``q``, ``W`` and ``M``.  When ``B`` is given for ODSS it must match the
    geometric sum within ``bandwidth_rtol``.
    """

    kind: WaveformKind
    M: int
    N: int
    B: float | None = 10e3
    f0: float = 0.0
    q: float = 1.0
    W: float | None = None
    Ts: float | None = None
    bandwidth_rtol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "kind", WaveformKind(self.kind))
        if self.M <= 0 or self.N <= 0:
            raise ValueError(f"M and N must be positive, got M={self.M}, N={self.N}")
        if self.kind is WaveformKind.OCDM and self.M % 2:
            raise ValueError("OCDM requires an even number of subcarriers M")
        if self.kind is WaveformKind.ODSS:
            if self.W is None or self.W <= 0 or self.q <= 0:
                raise ValueError("ODSS needs a positive base width W and ratio q")
            if self.B is not None:
                rel = abs(self.B - self.geometric_bandwidth) / self.B
                if rel > self.bandwidth_rtol:
                    raise ValueError(
                        f"ODSS bandwidth identity violated: B={self.B:.6g} Hz but "
                        f"sum q^m W = {self.geometric_bandwidth:.6g} Hz "
                        f"(relative error {rel:.3g} > {self.bandwidth_rtol:g})"
                    )
            if self.M_d <= 0:
                raise ValueError("ODSS configuration carries no symbols")
        elif self.B is None or self.B <= 0:
            raise ValueError("bandwidth B must be positive")

    @property
    def geometric_bandwidth(self) -> float:
        m = np.arange(self.M)
        return float(np.sum(self.q**m) * self.W)

    @property
    def bandwidth(self) -> float:
        if self.kind is WaveformKind.ODSS and self.B is None:
            return self.geometric_bandwidth
        return float(self.B)

    @property
    def delta_f(self) -> float:
        if self.kind is WaveformKind.ODSS:
            return float(self.W)
        return self.bandwidth / self.M

    @property
    def frame_duration(self) -> float:
        if self.Ts is not None:
            return float(self.Ts)
        return self.N / self.delta_f

    @property
    def symbols_per_subcarrier(self) -> np.ndarray:
        """``N(m)``; constant ``N`` except for ODSS."""
        if self.kind is not WaveformKind.ODSS:
            return np.full(self.M, self.N, dtype=int)
        m = np.arange(self.M)
        # guard the floor against W * (N / W) landing just below an integer
        return np.floor(self.q**m * self.W * self.frame_duration + 1e-9).astype(int)

    @property
    def M_d(self) -> int:
        return int(np.sum(self.symbols_per_subcarrier))

    @property
    def sample_period(self) -> float:
        return self.frame_duration / self.M_d

    @property
    def sample_rate(self) -> float:
        return self.M_d / self.frame_duration


@dataclass(frozen=True)
class WaveformMatrices:
    cfg: WaveformConfig
    G: np.ndarray = field(repr=False)

    @property
    def M_d(self) -> int:
        return self.G.shape[0]


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix ``F[k, l] = exp(-2j pi k l / n) / sqrt(n)``."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def chirp_matrix(M: int) -> np.ndarray:
    """Discrete Fresnel (chirp) basis, unitary for even ``M``."""
    m = np.arange(M)
    d = m[:, None] - m[None, :]
    return np.exp(1j * np.pi / 4) * np.exp(-1j * np.pi * d**2 / M) / np.sqrt(M)


def _carrier_phase(cfg: WaveformConfig, freq: float, n: int) -> np.ndarray:
    t = np.arange(n) * cfg.sample_period
    return np.exp(2j * np.pi * freq * t)


def _odss_atoms(cfg: WaveformConfig) -> np.ndarray:
    """Sampled ODSS modulator atoms, one unit-norm column per (m, n) symbol."""
    Md = cfg.M_d
    t = np.arange(Md) * cfg.sample_period
    counts = cfg.symbols_per_subcarrier
    cols = []
    for n in range(int(counts.max())):
        for m in range(cfg.M):
            if n >= counts[m]:
                continue
            scale = cfg.q**m
            tp = t - n / (scale * cfg.W)
            support = (scale * tp >= 0) & (scale * tp < 1.0 / cfg.W)
            col = scale**0.5 * support * np.exp(2j * np.pi * cfg.f0 * scale * tp)
            cols.append(col / np.linalg.norm(col))
    return np.stack(cols, axis=1)


def build_transmitter_matrix(cfg: WaveformConfig) -> WaveformMatrices:
    kind = cfg.kind
    M, N = cfg.M, cfg.N
    if kind is WaveformKind.OTFS:
        Gt = np.diag(_carrier_phase(cfg, cfg.f0, M))
        G = np.kron(dft_matrix(N).conj().T, Gt)
    elif kind is WaveformKind.OFDM:
        Gt = np.diag(_carrier_phase(cfg, cfg.f0, M))
        G = np.kron(np.eye(N), Gt @ dft_matrix(M).conj().T)
    elif kind is WaveformKind.OCDM:
        Gc = np.diag(_carrier_phase(cfg, cfg.f0, M))
        G = np.kron(np.eye(N), Gc @ chirp_matrix(M))
    elif kind is WaveformKind.ODSS:
        G = _odss_atoms(cfg)
        G = _nearest_unitary(G)
    else:  # pragma: no cover
        raise ValueError(kind)
    return WaveformMatrices(cfg=cfg, G=G)


def _nearest_unitary(V: np.ndarray) -> np.ndarray:
    # polar factor U of V = U P; closest unitary matrix in Frobenius norm
    u, _, vh = np.linalg.svd(V)
    return u @ vh


def modulate(wm: WaveformMatrices, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != wm.M_d:
        raise ValueError(f"expected {wm.M_d} symbols, got {x.shape[0]}")
    return wm.G @ x


def demodulate(wm: WaveformMatrices, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r)
    if r.shape[0] != wm.M_d:
        raise ValueError(f"expected {wm.M_d} samples, got {r.shape[0]}")
    return wm.G.conj().T @ r


# -- constellations -----------------------------------------------------------


@dataclass(frozen=True)
class Constellation:
    """Gray-labelled constellation with unit average energy.

    ``labels[i, b]`` is bit ``b`` (MSB first) of ``points[i]``.
    """

    name: str
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=int).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self.points[self._index_of_label[bits @ weights]]

    def indices_to_bits(self, idx: np.ndarray) -> np.ndarray:
        return self.labels[np.asarray(idx)].reshape(-1)

    def slice(self, z: np.ndarray) -> np.ndarray:
        """Nearest-point indices (ties go to the lower index)."""
        d = np.abs(np.asarray(z)[:, None] - self.points[None, :])
        return np.argmin(d, axis=1)

    @cached_property
    def _index_of_label(self) -> np.ndarray:
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        inv = np.empty(self.size, dtype=int)
        inv[self.labels @ weights] = np.arange(self.size)
        return inv


def _gray(n: int) -> np.ndarray:
    return np.arange(n) ^ (np.arange(n) >> 1)


def _bits(values: np.ndarray, width: int) -> np.ndarray:
    return (values[:, None] >> np.arange(width - 1, -1, -1)) & 1


def make_constellation(name: str) -> Constellation:
    name = name.upper()
    if name == "BPSK":
        return Constellation("BPSK", np.array([1.0 + 0j, -1.0 + 0j]), np.array([[0], [1]]))
    if name == "QPSK":
        pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        return Constellation("QPSK", pts, _bits(np.arange(4), 2))
    if name in ("16QAM", "QAM16"):
        # per-axis Gray code on 2 bits: levels -3,-1,1,3
        levels = np.array([-3, -1, 1, 3], dtype=float)
        g = _gray(4)
        pts, labels = [], []
        for i in range(4):
            for q in range(4):
                pts.append(levels[i] + 1j * levels[q])
                labels.append(np.concatenate([_bits(g[i : i + 1], 2)[0], _bits(g[q : q + 1], 2)[0]]))
        pts = np.array(pts) / math.sqrt(10)
        return Constellation("16QAM", pts, np.array(labels))
    raise ValueError(f"unknown constellation {name!r}")


# -- presets --------------------------------------------------------------------

BAND_LOW = 10e3
BAND_HIGH = 20e3


def reference_waveform(kind: WaveformKind | str, M: int = 64, N: int = 2, B: float = 10e3) -> WaveformConfig:
    """Data-block waveform of the desk-scale reference setup (10-20 kHz band)."""
    kind = WaveformKind(kind)
    if kind is WaveformKind.ODSS:
        q = 1.001
        W = B * (q - 1) / (q**M - 1)
        return WaveformConfig(kind, M, N, B=B, f0=W / (q - 1), q=q, W=W)
    f0 = (BAND_LOW + BAND_HIGH) / 2 if kind is WaveformKind.OCDM else BAND_LOW
    return WaveformConfig(kind, M, N, B=B, f0=f0)
