"""Delay/log-scale grid, dictionary atoms and their analytic derivatives.

An atom is the demodulated response of a unit-gain path at ``(tau, omega)``
to a known symbol vector ``x``::

    a(tau, omega) = sqrt(alpha) G^H F^H Gamma(tau, alpha) F^{.1/alpha} G x,
    alpha = q_alpha ** omega

The same machinery serves the preamble dictionary and, with detected data
symbols in place of ``x``, the virtual-pilot dictionary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import PathSet, SamplingLayout
from .waveform import WaveformMatrices


@dataclass(frozen=True)
class DsGrid:
    """Delay grid (linear) times log-scale grid (base ``q_alpha``).

    Point ``l = n' * M_alpha + m'`` sits at ``tau = n' r_tau`` and
    ``omega = m' - (M_alpha - 1) / 2``.  ``tau0``/``omega0`` keep the initial
    lattice so refined points can be held inside their half-resolution cell.
    """

    N_tau: int
    M_alpha: int
    tau_max: float
    alpha_max: float
    tau_bar: np.ndarray = field(repr=False)
    omega_bar: np.ndarray = field(repr=False)
    tau0: np.ndarray = field(repr=False)
    omega0: np.ndarray = field(repr=False)
    q_alpha: float = 1.0
    r_omega: float = 1.0

    @property
    def L(self) -> int:
        return self.N_tau * self.M_alpha

    @property
    def r_tau(self) -> float:
        return self.tau_max / self.N_tau

    @property
    def alpha_bar(self) -> np.ndarray:
        return self.q_alpha**self.omega_bar

    def alpha(self, omega) -> np.ndarray:
        return self.q_alpha ** np.asarray(omega, dtype=float)

    def with_points(self, tau_bar: np.ndarray, omega_bar: np.ndarray) -> "DsGrid":
        return replace(self, tau_bar=np.array(tau_bar, dtype=float), omega_bar=np.array(omega_bar, dtype=float))

    def clamp(self, idx, tau, omega):
        """Clip refined points at ``idx`` to their half-resolution cells."""
        idx = np.asarray(idx)
        tau = np.clip(tau, self.tau0[idx] - self.r_tau / 2, self.tau0[idx] + self.r_tau / 2)
        omega = np.clip(omega, self.omega0[idx] - self.r_omega / 2, self.omega0[idx] + self.r_omega / 2)
        return tau, omega

    def nearest_index(self, tau: float, omega: float) -> int:
        n = int(round(tau / self.r_tau))
        m = int(round(omega + (self.M_alpha - 1) / 2))
        return n * self.M_alpha + m


def build_grid(tau_max: float, alpha_max: float, N_tau: int, M_alpha: int) -> DsGrid:
    """Initial lattice; with ``M_alpha == 1`` the grid is delay-only (``q_alpha = 1``)."""
    if N_tau < 1:
        raise ValueError("N_tau must be >= 1")
    if M_alpha < 1 or M_alpha % 2 == 0:
        raise ValueError("M_alpha must be a positive odd integer")
    if alpha_max < 1:
        raise ValueError("alpha_max must be >= 1")
    q_alpha = alpha_max ** (2 / (M_alpha - 1)) if M_alpha > 1 else 1.0
    r_tau = tau_max / N_tau
    n, m = np.divmod(np.arange(N_tau * M_alpha), M_alpha)
    tau = n * r_tau
    omega = m - (M_alpha - 1) / 2
    return DsGrid(
        N_tau=N_tau,
        M_alpha=M_alpha,
        tau_max=tau_max,
        alpha_max=alpha_max,
        tau_bar=tau.astype(float),
        omega_bar=omega.astype(float),
        tau0=tau.astype(float),
        omega0=omega.astype(float),
        q_alpha=q_alpha,
    )


class AtomContext:
    """Precomputed products for atoms of one block (pilot or virtual pilot)."""

    def __init__(self, wm: WaveformMatrices, x: np.ndarray, layout: SamplingLayout):
        G = wm.G
        x = np.asarray(x, dtype=complex)
        if G.shape[0] != layout.M or x.shape[0] != layout.M:
            raise ValueError("waveform, symbols and layout disagree on the block length")
        self.wm = wm
        self.x = x
        self.layout = layout
        self.M = layout.M
        self.f = layout.f
        self.s = G @ x
        F = np.exp(-2j * np.pi * np.outer(self.f, layout.t)) / np.sqrt(self.M)
        self.back = G.conj().T @ F.conj().T
        self.ft = np.outer(self.f, layout.t)
        self._ts = np.stack([self.s, layout.t * self.s, layout.t**2 * self.s], axis=1)
        self._w = -2j * np.pi * self.f
        self._w2 = self._w**2
        self._cache: dict[float, list] = {}

    def _spectra(self, alpha: float, order: int):
        """``F^{.1/alpha} s`` and its first/second alpha-derivatives (memoised per alpha)."""
        hit = self._cache.get(alpha)
        if hit is None:
            if len(self._cache) >= 4096:
                self._cache.clear()
            # always the full product, so a value never depends on what was cached before
            hit = self._cache[alpha] = self._compute_spectra(alpha)
        return hit[: order + 1]

    def _compute_spectra(self, alpha: float):
        # d^k/d alpha^k of exp(-j 2 pi f t / alpha) pulls out powers of (2 pi j f t),
        # so all orders come from a single product with [s, t s, t^2 s].
        # uniform f and t: row k is e0 * z**k, built by a running product
        t = self.layout.t
        rows = np.empty((self.M, self.M), dtype=complex)
        rows[0] = np.exp(-2j * np.pi * self.f[0] * t / alpha) / np.sqrt(self.M)
        rows[1:] = np.exp(-2j * np.pi * (self.f[1] - self.f[0]) * t / alpha)
        E = np.cumprod(rows, axis=0)
        U = E @ self._ts
        k = 2j * np.pi * self.f
        return [U[:, 0], k / alpha**2 * U[:, 1], k**2 / alpha**4 * U[:, 2] - 2 * k / alpha**3 * U[:, 1]]

    def atoms(self, tau, omega, q_alpha: float, order: int = 0):
        """Atoms (and derivatives) for parallel arrays of ``tau``/``omega``.

        Returns ``A`` for ``order == 0``; ``(A, dA/dtau, dA/domega)`` for
        ``order == 1``; and additionally ``(d2A/dtau2, d2A/domega2)`` for
        ``order == 2``.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        alpha = q_alpha**omega
        K = tau.size
        lnq = math.log(q_alpha)
        w = self._w
        if K == 1:
            groups = [(float(alpha[0]), slice(None))]
        else:
            groups = [(float(a), np.flatnonzero(alpha == a)) for a in np.unique(alpha)]
        if order == 0:
            A = np.empty((self.M, K), dtype=complex)
            for a_val, cols in groups:
                spec = self._spectra(a_val, 0)
                base = np.exp(np.outer(w, tau[cols])) * spec[0][:, None]
                ra = a_val**-0.5
                # one product per column keeps each atom independent of the batch it is built in
                for k, col in enumerate(np.arange(K)[cols]):
                    A[:, col] = ra * (self.back @ base[:, k])
            return A
        mats = [np.empty((self.M, K), dtype=complex) for _ in range(1 + 2 * order)]
        for a_val, cols in groups:
            spec = self._spectra(a_val, order)
            d = np.exp(np.outer(w, tau[cols]))
            base = d * spec[0][:, None]
            n = base.shape[1]
            parts = [base, w[:, None] * base, d * spec[1][:, None]]
            if order >= 2:
                parts += [self._w2[:, None] * base, d * spec[2][:, None]]
            R = self.back @ np.hstack(parts)
            back_base, back_wb, back_du = R[:, :n], R[:, n : 2 * n], R[:, 2 * n : 3 * n]
            ra = a_val**-0.5
            mats[0][:, cols] = ra * back_base
            mats[1][:, cols] = ra * back_wb
            # derivative w.r.t. alpha, then chain rule d alpha / d omega = alpha ln q
            da = -0.5 * a_val**-1.5 * back_base + ra * back_du
            k1 = a_val * lnq
            mats[2][:, cols] = k1 * da
            if order >= 2:
                mats[3][:, cols] = ra * R[:, 3 * n : 4 * n]
                d2a = 0.75 * a_val**-2.5 * back_base - a_val**-1.5 * back_du + ra * R[:, 4 * n :]
                mats[4][:, cols] = d2a * k1**2 + da * a_val * lnq**2
        return tuple(mats)


def atom(ctx: AtomContext, tau: float, omega: float, q_alpha: float) -> np.ndarray:
    return ctx.atoms([tau], [omega], q_alpha)[:, 0]


def atom_derivatives(ctx: AtomContext, tau: float, omega: float, q_alpha: float, order: int = 1):
    """``(b, c)`` for ``order=1`` or ``(b, c, b2, c2)`` for ``order=2``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    out = ctx.atoms([tau], [omega], q_alpha, order=order)
    return tuple(m[:, 0] for m in out[1:])


@dataclass
class Dictionary:
    A: np.ndarray = field(repr=False)
    grid: DsGrid
    ctx: AtomContext = field(repr=False)

    def columns(self, idx) -> np.ndarray:
        return self.A[:, idx]

    def derivatives(self, idx, order: int = 1):
        idx = np.asarray(idx)
        out = self.ctx.atoms(self.grid.tau_bar[idx], self.grid.omega_bar[idx], self.grid.q_alpha, order=order)
        return out[1:]

    def refined(self, idx, tau, omega) -> "Dictionary":
        """Copy with points ``idx`` moved to ``(tau, omega)`` and their columns rebuilt."""
        idx = np.asarray(idx)
        tau_bar = self.grid.tau_bar.copy()
        omega_bar = self.grid.omega_bar.copy()
        tau_bar[idx] = tau
        omega_bar[idx] = omega
        A = self.A.copy()
        if idx.size:
            A[:, idx] = self.ctx.atoms(tau, omega, self.grid.q_alpha)
        return Dictionary(A=A, grid=self.grid.with_points(tau_bar, omega_bar), ctx=self.ctx)


def build_dictionary(grid: DsGrid, ctx: AtomContext) -> Dictionary:
    A = ctx.atoms(grid.tau_bar, grid.omega_bar, grid.q_alpha)
    return Dictionary(A=A, grid=grid, ctx=ctx)


def on_grid_paths(grid: DsGrid, P: int, rng: np.random.Generator) -> tuple[PathSet, np.ndarray]:
    """Draw ``P`` distinct lattice points with CN(0,1) gains; returns paths and indices."""
    idx = np.sort(rng.choice(grid.L, size=P, replace=False))
    h = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / np.sqrt(2)
    return PathSet(h, grid.tau0[idx], grid.alpha(grid.omega0[idx])), idx
