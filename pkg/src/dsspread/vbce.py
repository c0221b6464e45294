"""Variational-Bayes sparse channel estimation with off-grid refinement.

The grid-based model ``y_p = A(tau_bar, omega_bar) h_bar + w`` is solved with
a Gaussian-Gamma hierarchical prior.  Between VB sweeps the grid points
carrying the strongest gains are moved off the lattice, either by a
first-order (linearised dictionary) MMSE correction or by one Newton step per
coordinate on the expected residual.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .channel import PathSet, SamplingLayout, path_operator
from .dsgrid import Dictionary
from .waveform import WaveformMatrices


class Refine(str, enum.Enum):
    NONE = "none"
    FVB = "FVB"
    SVB = "SVB"


@dataclass(frozen=True)
class VbConfig:
    eps1: float = 1e-6
    eps2: float = 1e-6
    eps3: float = 1e-6
    eps4: float = 1e-6
    eps_conv: float = 1e-3
    J_max: int = 100
    threshold_frac: float = 0.05
    refine: Refine = Refine.NONE
    warmup: int = 3
    reselect_support: bool = True

    def __post_init__(self):
        object.__setattr__(self, "refine", Refine(self.refine))
        if min(self.eps1, self.eps2, self.eps3, self.eps4, self.eps_conv) <= 0:
            raise ValueError("hyper-prior roots and eps_conv must be positive")
        if not 0 < self.threshold_frac <= 1:
            raise ValueError("threshold_frac must lie in (0, 1]")
        if self.J_max < 1:
            raise ValueError("J_max must be >= 1")


class Posterior:
    """``CN(mu, Sigma)`` of the grid gains.

    With more grid points than measurements ``Sigma`` is kept in the
    inversion-lemma form ``diag(dinv) - (A dinv)^H C^-1 (A dinv)`` and only
    the pieces the updates need (diagonal, support blocks, ``Tr(A Sigma A^H)``)
    are evaluated; ``full()`` materialises it.
    """

    def __init__(self, mu, Sigma=None, *, A=None, dinv=None, AD=None, K=None, S=None, Cinv_S=None):
        self.mu = mu
        self._Sigma = Sigma
        self._A = A
        self._dinv = dinv
        self._AD = AD
        self._K = K
        self._S = S
        self._Cinv_S = Cinv_S

    @property
    def factored(self) -> bool:
        return self._Sigma is None

    def full(self) -> np.ndarray:
        if self._Sigma is None:
            Sigma = np.diag(self._dinv).astype(complex) - self._AD.conj().T @ self._K
            self._Sigma = 0.5 * (Sigma + Sigma.conj().T)
        return self._Sigma

    def diag(self) -> np.ndarray:
        if self._Sigma is not None:
            return np.real(np.diag(self._Sigma))
        return self._dinv - np.real(np.sum(self._AD.conj() * self._K, axis=0))

    def block(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        if self._Sigma is not None:
            return self._Sigma[np.ix_(idx, idx)]
        blk = np.diag(self._dinv[idx]).astype(complex) - self._AD[:, idx].conj().T @ self._K[:, idx]
        return 0.5 * (blk + blk.conj().T)

    def trace_term(self, A: np.ndarray) -> float:
        """``Tr(A Sigma A^H)``."""
        if self._Sigma is None and A is self._A:
            return float(np.real(np.trace(self._S) - np.sum(self._S.T * self._Cinv_S)))
        return float(np.real(np.sum((A @ self.full()) * A.conj())))


def _diag(Sigma) -> np.ndarray:
    return Sigma.diag() if isinstance(Sigma, Posterior) else np.real(np.diag(Sigma))


def _block(Sigma, idx) -> np.ndarray:
    return Sigma.block(idx) if isinstance(Sigma, Posterior) else Sigma[np.ix_(idx, idx)]


def _trace_term(A, Sigma) -> float:
    if isinstance(Sigma, Posterior):
        return Sigma.trace_term(A)
    return float(np.real(np.sum((A @ Sigma) * A.conj())))


@dataclass
class VbState:
    mu: np.ndarray
    post: Posterior | None = field(repr=False)
    delta: np.ndarray = field(repr=False)
    gamma: float
    dictionary: Dictionary = field(repr=False)
    j: int = 0
    converged: bool = False

    @property
    def Sigma(self) -> np.ndarray:
        return self.post.full()


@dataclass
class RefinementStep:
    support: np.ndarray
    beta_tau: np.ndarray
    beta_omega: np.ndarray
    P_tau: np.ndarray | None = None
    P_omega: np.ndarray | None = None
    v_tau: np.ndarray | None = None
    v_omega: np.ndarray | None = None


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray
    tau_hat: np.ndarray
    omega_hat: np.ndarray
    q_alpha: float
    support: np.ndarray
    gamma: float = 1.0
    iterations: int = 0
    converged: bool = True
    state: VbState | None = field(default=None, repr=False)
    Heff_hat: np.ndarray | None = field(default=None, repr=False)

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.q_alpha**self.omega_hat

    @property
    def noise_variance(self) -> float:
        return 1.0 / self.gamma

    def paths(self) -> PathSet | None:
        if self.h_hat.size == 0:
            return None
        return PathSet(self.h_hat, self.tau_hat, self.alpha_hat)

    def effective_channel(self, wm: WaveformMatrices, layout: SamplingLayout) -> np.ndarray:
        """``G^H Ht(estimate) G`` for the data block."""
        Ht = np.zeros((layout.M, layout.M), dtype=complex)
        for h, tau, alpha in zip(self.h_hat, self.tau_hat, self.alpha_hat):
            Ht += h * path_operator(layout, tau, alpha)
        return wm.G.conj().T @ Ht @ wm.G


# -- VB marginal updates -------------------------------------------------------

_COND_LIMIT = 1e12


def _regularised_inverse(K: np.ndarray) -> np.ndarray:
    if np.linalg.cond(K) > _COND_LIMIT:
        K = K + 1e-12 * np.real(np.trace(K)) / K.shape[0] * np.eye(K.shape[0])
    return np.linalg.inv(K)


def vb_posterior(A: np.ndarray, y: np.ndarray, delta: np.ndarray, gamma: float, method: str = "auto") -> Posterior:
    """Posterior of the grid gains for fixed precisions.

    ``Sigma = (gamma A^H A + diag(delta))^-1`` and ``mu = gamma Sigma A^H y``.
    With more grid points than measurements the inverse goes through the
    ``M x M`` matrix-inversion-lemma form.
    """
    M, L = A.shape
    if method == "auto":
        method = "lemma" if L > M else "direct"
    Ahy = A.conj().T @ y
    if method == "direct":
        Sigma = _regularised_inverse(gamma * (A.conj().T @ A) + np.diag(delta))
        Sigma = 0.5 * (Sigma + Sigma.conj().T)
        return Posterior(gamma * (Sigma @ Ahy), Sigma)
    if method != "lemma":
        raise ValueError(f"unknown method {method!r}")
    dinv = 1.0 / delta
    AD = A * dinv
    S = AD @ A.conj().T
    C = np.eye(M) / gamma + S
    K = np.linalg.solve(C, AD)
    Cinv_S = K @ A.conj().T
    mu = gamma * (dinv * Ahy - AD.conj().T @ (K @ Ahy))
    return Posterior(mu, A=A, dinv=dinv, AD=AD, K=K, S=S, Cinv_S=Cinv_S)


def vb_update_h(A: np.ndarray, y: np.ndarray, delta: np.ndarray, gamma: float, method: str = "auto"):
    """``(mu, Sigma)`` with ``Sigma`` materialised; see ``vb_posterior``."""
    post = vb_posterior(A, y, delta, gamma, method)
    return post.mu, post.full()


def vb_update_delta(mu: np.ndarray, Sigma: np.ndarray, eps1: float = 1e-6, eps2: float = 1e-6) -> np.ndarray:
    second_moment = np.abs(mu) ** 2 + _diag(Sigma)
    return (eps1 + 1) / (eps2 + second_moment)


def expected_residual(A: np.ndarray, y: np.ndarray, mu: np.ndarray, Sigma: np.ndarray) -> float:
    """``<||y - A h||^2>`` under ``CN(mu, Sigma)``."""
    r = y - A @ mu
    return float(np.real(np.vdot(r, r))) + _trace_term(A, Sigma)


def vb_update_gamma(A, y, mu, Sigma, eps3: float = 1e-6, eps4: float = 1e-6) -> float:
    return (A.shape[0] + eps3) / (eps4 + expected_residual(A, y, mu, Sigma))


def free_energy(A, y, mu, Sigma, delta, gamma, cfg: VbConfig) -> float:
    """Variational lower bound on ``ln p(y)`` for the current factors.

    Gamma factors are recovered from their means with the fixed posterior
    shapes ``eps1 + 1`` and ``eps3 + M``.
    """
    M, L = A.shape
    a = cfg.eps1 + 1
    b = a / delta
    c = cfg.eps3 + M
    d = c / gamma
    e_ln_delta = digamma(a) - np.log(b)
    e_ln_gamma = digamma(c) - math.log(d)
    second = np.abs(mu) ** 2 + _diag(Sigma)
    lik = M * (e_ln_gamma - math.log(math.pi)) - gamma * expected_residual(A, y, mu, Sigma)
    prior_h = np.sum(e_ln_delta - math.log(math.pi) - delta * second)
    prior_delta = np.sum(
        cfg.eps1 * math.log(cfg.eps2) - gammaln(cfg.eps1) + (cfg.eps1 - 1) * e_ln_delta - cfg.eps2 * delta
    )
    prior_gamma = cfg.eps3 * math.log(cfg.eps4) - gammaln(cfg.eps3) + (cfg.eps3 - 1) * e_ln_gamma - cfg.eps4 * gamma
    full = Sigma.full() if isinstance(Sigma, Posterior) else Sigma
    _, logdet = np.linalg.slogdet(full)
    ent_h = L * (1 + math.log(math.pi)) + logdet
    ent_delta = np.sum(a - np.log(b) + gammaln(a) + (1 - a) * digamma(a))
    ent_gamma = c - math.log(d) + gammaln(c) + (1 - c) * digamma(c)
    return float(lik + prior_h + prior_delta + prior_gamma + ent_h + ent_delta + ent_gamma)


def select_support(mu: np.ndarray, threshold_frac: float) -> np.ndarray:
    """Indices of the ``ceil(frac * L)`` largest ``|mu|``; ties go to the lower index."""
    L = mu.size
    k = min(L, math.ceil(threshold_frac * L - 1e-9))
    order = np.argsort(-np.abs(mu), kind="stable")
    return np.sort(order[:k])


# -- first-order (linearised dictionary) refinement ---------------------------


def _solve_offsets(P: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``P^-1 v`` when well conditioned, else one Gauss-Seidel sweep from zero.

    Entries with a zero diagonal are left at zero.
    """
    if P.size and np.all(np.isfinite(P)) and np.linalg.cond(P) < _COND_LIMIT:
        return np.linalg.solve(P, v)
    beta = np.zeros_like(v)
    for p in range(v.size):
        if P[p, p] == 0:
            continue
        off = P[p, :] @ beta - P[p, p] * beta[p]
        beta[p] = (v[p] - off) / P[p, p]
    return beta


def foa_system(mu_s, Sigma_s, A0, D, y, E=None, beta_other=None):
    """``(P, v)`` of the quadratic in one offset vector.

    ``D`` is the derivative matrix of the coordinate being solved, ``E`` and
    ``beta_other`` the derivative matrix and current offsets of the other one.
    """
    R = np.outer(mu_s, mu_s.conj()) + Sigma_s
    P = np.real((D.conj().T @ D).conj() * R)
    Abase = A0 if E is None else A0 + E * beta_other
    resid = y - Abase @ mu_s
    v = np.real(mu_s.conj() * (D.conj().T @ resid) - np.diag(D.conj().T @ Abase @ Sigma_s))
    return P, v


def fvb_refine(mu, Sigma, support, A0, B, C, y, r_tau: float, r_omega: float = 1.0, clamp: bool = True) -> RefinementStep:
    """Off-grid corrections from the linearised dictionary.

    Offsets are relative to the current support points (``A0``, ``B``,
    ``C`` are evaluated there).  The delay offsets are solved first with the
    scale offsets at zero, then the scale offsets given the fresh delay ones.
    With ``clamp`` the offsets are limited to half a grid cell; the caller
    clamps the accumulated position.
    """
    support = np.asarray(support)
    mu_s = mu[support]
    Sigma_s = _block(Sigma, support)
    P_tau, v_tau = foa_system(mu_s, Sigma_s, A0, B, y, C, np.zeros(support.size))
    beta_tau = _solve_offsets(P_tau, v_tau)
    P_om, v_om = foa_system(mu_s, Sigma_s, A0, C, y, B, beta_tau)
    beta_om = _solve_offsets(P_om, v_om)
    if clamp:
        beta_tau = np.clip(beta_tau, -r_tau / 2, r_tau / 2)
        beta_om = np.clip(beta_om, -r_omega / 2, r_omega / 2)
    return RefinementStep(support, beta_tau, beta_om, P_tau, P_om, v_tau, v_om)


# -- second-order (Newton) refinement ------------------------------------------


def newton_derivatives(y, A_s, mu_s, Sigma_s, p: int, d1, d2):
    """Half the first and second derivative of ``<||y - A h||^2>`` in one coordinate of column ``p``."""
    r = y - A_s @ mu_s
    row = -mu_s[p] * r.conj() + Sigma_s[p, :] @ A_s.conj().T
    g1 = float(np.real(row @ d1))
    g2 = float(np.real(row @ d2) + (abs(mu_s[p]) ** 2 + np.real(Sigma_s[p, p])) * np.real(np.vdot(d1, d1)))
    return g1, g2


def svb_refine(mu, Sigma, support, dictionary: Dictionary, y) -> tuple[np.ndarray, np.ndarray, int]:
    """One Newton step per coordinate, strongest paths first.

    A step is taken only when the curvature is positive, the new point stays
    inside its half-resolution cell and the expected residual does not grow.
    Returns the new ``(tau, omega)`` of the support and the number of
    accepted steps.
    """
    grid = dictionary.grid
    ctx = dictionary.ctx
    q = grid.q_alpha
    support = np.asarray(support)
    mu_s = mu[support]
    Sigma_s = _block(Sigma, support)
    A_s = dictionary.A[:, support].copy()
    tau = grid.tau_bar[support].copy()
    omega = grid.omega_bar[support].copy()
    lo_t, hi_t = grid.tau0[support] - grid.r_tau / 2, grid.tau0[support] + grid.r_tau / 2
    lo_o, hi_o = grid.omega0[support] - grid.r_omega / 2, grid.omega0[support] + grid.r_omega / 2
    accepted = 0

    def objective(As):
        return expected_residual(As, y, mu_s, Sigma_s)

    current = objective(A_s)
    for p in np.argsort(-np.abs(mu_s), kind="stable"):
        for coord in ("tau", "omega"):
            _, b, c, b2, c2 = ctx.atoms([tau[p]], [omega[p]], q, order=2)
            d1, d2 = (b[:, 0], b2[:, 0]) if coord == "tau" else (c[:, 0], c2[:, 0])
            g1, g2 = newton_derivatives(y, A_s, mu_s, Sigma_s, p, d1, d2)
            if not g2 > 0:
                continue
            if coord == "tau":
                new_t, new_o = tau[p] - g1 / g2, omega[p]
                if not lo_t[p] <= new_t <= hi_t[p]:
                    continue
            else:
                new_t, new_o = tau[p], omega[p] - g1 / g2
                if not lo_o[p] <= new_o <= hi_o[p]:
                    continue
            trial = A_s.copy()
            trial[:, p] = ctx.atoms([new_t], [new_o], q)[:, 0]
            value = objective(trial)
            if value > current * (1 + 1e-10):
                continue
            A_s, current = trial, value
            tau[p], omega[p] = new_t, new_o
            accepted += 1
    return tau, omega, accepted


# -- Algorithm driver ----------------------------------------------------------


def initial_state(dictionary: Dictionary, y: np.ndarray, delta0: np.ndarray | None = None, gamma0: float = 1.0) -> VbState:
    A = dictionary.A
    L = A.shape[1]
    if delta0 is None:
        corr = np.abs(A.conj().T @ y)
        delta0 = 1.0 / np.maximum(corr, 1e-12 * max(corr.max(), 1e-300))
    return VbState(
        mu=np.zeros(L, dtype=complex),
        post=None,
        delta=np.asarray(delta0, dtype=float).copy(),
        gamma=float(gamma0),
        dictionary=dictionary,
    )


def vb_sweep(state: VbState, y: np.ndarray, cfg: VbConfig) -> np.ndarray:
    """One (h, delta, gamma) update on the current dictionary; returns the new delta."""
    A = state.dictionary.A
    state.post = vb_posterior(A, y, state.delta, state.gamma)
    state.mu = state.post.mu
    delta_new = vb_update_delta(state.mu, state.post, cfg.eps1, cfg.eps2)
    state.gamma = vb_update_gamma(A, y, state.mu, state.post, cfg.eps3, cfg.eps4)
    return delta_new


def refine_dictionary(state: VbState, y: np.ndarray, cfg: VbConfig, support: np.ndarray) -> Dictionary:
    d = state.dictionary
    grid = d.grid
    if cfg.refine is Refine.FVB:
        B, C = d.derivatives(support, order=1)
        step = fvb_refine(state.mu, state.post, support, d.A[:, support], B, C, y, grid.r_tau, grid.r_omega)
        tau = grid.tau_bar[support] + step.beta_tau
        omega = grid.omega_bar[support] + step.beta_omega
    else:
        tau, omega, _ = svb_refine(state.mu, state.post, support, d, y)
    tau, omega = grid.clamp(support, tau, omega)
    moved = (tau != grid.tau_bar[support]) | (omega != grid.omega_bar[support])
    if not np.any(moved):
        return d
    return d.refined(support[moved], tau[moved], omega[moved])


def run_ce(y_p: np.ndarray, dictionary: Dictionary, cfg: VbConfig = VbConfig(), state: VbState | None = None) -> ChannelEstimate:
    """Iterate VB sweeps and grid refinement until delta settles or ``J_max``.

    ``state`` may carry a warm start (grid and precisions) from a previous run.
    """
    y_p = np.asarray(y_p, dtype=complex)
    if state is None:
        state = initial_state(dictionary, y_p)
    support = None
    for j in range(cfg.J_max):
        delta_new = vb_sweep(state, y_p, cfg)
        change = np.linalg.norm(delta_new - state.delta) / np.linalg.norm(state.delta)
        state.delta = delta_new
        state.j = j + 1
        if cfg.refine is not Refine.NONE and j >= cfg.warmup:
            if support is None or cfg.reselect_support:
                support = select_support(state.mu, cfg.threshold_frac)
            state.dictionary = refine_dictionary(state, y_p, cfg, support)
        if change <= cfg.eps_conv:
            state.converged = True
            break
    return make_estimate(state, cfg.threshold_frac)


def make_estimate(state: VbState, threshold_frac: float) -> ChannelEstimate:
    grid = state.dictionary.grid
    support = select_support(state.mu, threshold_frac)
    return ChannelEstimate(
        h_hat=state.mu[support].copy(),
        tau_hat=grid.tau_bar[support].copy(),
        omega_hat=grid.omega_bar[support].copy(),
        q_alpha=grid.q_alpha,
        support=support,
        gamma=state.gamma,
        iterations=state.j,
        converged=state.converged,
        state=state,
    )


# -- on-grid OMP baseline ------------------------------------------------------


def omp_baseline(y_p: np.ndarray, dictionary: Dictionary, K: int) -> ChannelEstimate:
    """Greedy OMP over the fixed grid with a least-squares refit after every pick."""
    A = dictionary.A
    M, L = A.shape
    if K > M:
        raise ValueError(f"sparsity K={K} exceeds the number of measurements {M}")
    grid = dictionary.grid
    y_p = np.asarray(y_p, dtype=complex)
    norms = np.linalg.norm(A, axis=0)
    chosen: list[int] = []
    coef = np.zeros(0, dtype=complex)
    resid = y_p.copy()
    for _ in range(max(K, 0)):
        score = np.abs(A.conj().T @ resid) / norms
        score[chosen] = -1.0
        chosen.append(int(np.argmax(score)))
        coef, *_ = np.linalg.lstsq(A[:, chosen], y_p, rcond=None)
        resid = y_p - A[:, chosen] @ coef
    idx = np.array(chosen, dtype=int)
    noise = float(np.real(np.vdot(resid, resid))) / max(M - len(chosen), 1)
    return ChannelEstimate(
        h_hat=coef,
        tau_hat=grid.tau_bar[idx],
        omega_hat=grid.omega_bar[idx],
        q_alpha=grid.q_alpha,
        support=idx,
        gamma=1.0 / noise if noise > 0 else np.inf,
        iterations=len(chosen),
    )
