"""Symbol detection on an effective channel: 1-tap, MMSE and variational soft detection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import Constellation

LLR_CLIP = 40.0


@dataclass
class DetectionResult:
    soft: np.ndarray
    marginals: np.ndarray = field(repr=False)
    llrs: np.ndarray = field(repr=False)
    hard: np.ndarray
    equalized: np.ndarray | None = field(default=None, repr=False)
    iterations: int = 0
    converged: bool = True

    def bits(self, constellation: Constellation) -> np.ndarray:
        return constellation.indices_to_bits(self.hard)

    def symbols(self, constellation: Constellation) -> np.ndarray:
        return constellation.points[self.hard]


def compute_llrs(marginals: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Bit LLRs ``ln P(b=0) - ln P(b=1)`` from symbol marginals, clipped to +-40."""
    q = np.asarray(marginals, dtype=float)
    labels = constellation.labels
    out = np.empty((q.shape[0], constellation.bits_per_symbol))
    with np.errstate(divide="ignore"):
        for b in range(constellation.bits_per_symbol):
            p0 = q[:, labels[:, b] == 0].sum(axis=1)
            p1 = q[:, labels[:, b] == 1].sum(axis=1)
            out[:, b] = np.log(p0) - np.log(p1)
    return np.clip(np.nan_to_num(out, nan=0.0), -LLR_CLIP, LLR_CLIP)


def _result_from_marginals(q: np.ndarray, constellation: Constellation, **kw) -> DetectionResult:
    return DetectionResult(
        soft=q @ constellation.points,
        marginals=q,
        llrs=compute_llrs(q, constellation),
        hard=np.argmax(q, axis=1),
        **kw,
    )


def _one_hot(idx: np.ndarray, Q: int) -> np.ndarray:
    q = np.zeros((idx.size, Q))
    q[np.arange(idx.size), idx] = 1.0
    return q


def one_tap_equalize(H: np.ndarray, y: np.ndarray, constellation: Constellation) -> DetectionResult:
    """Divide by the channel diagonal and slice; off-diagonal terms are ignored."""
    d = np.diag(H)
    if np.any(d == 0):
        raise ValueError("channel diagonal has a zero entry; symbol cannot be equalized")
    z = np.asarray(y) / d
    hard = constellation.slice(z)
    q = _one_hot(hard, constellation.size)
    res = _result_from_marginals(q, constellation, equalized=z)
    res.hard = hard
    return res


def _softmax_rows(g: np.ndarray) -> np.ndarray:
    g = g - g.max(axis=1, keepdims=True)
    e = np.exp(g)
    return e / e.sum(axis=1, keepdims=True)


def mmse_equalize(H: np.ndarray, y: np.ndarray, sigma2: float, constellation: Constellation) -> DetectionResult:
    """Linear MMSE estimate with Gaussian-approximation soft demapping.

    Each output ``x_hat_i = mu_i x_i + e_i`` is rescaled by its bias ``mu_i``
    and treated as an observation with noise variance ``(1 - mu_i) / mu_i``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    H = np.asarray(H)
    n = H.shape[1]
    W = np.linalg.solve(H.conj().T @ H + sigma2 * np.eye(n), H.conj().T)
    x_hat = W @ y
    bias = np.real(np.einsum("ij,ji->i", W, H))
    bias = np.clip(bias, 1e-12, 1 - 1e-12)
    z = x_hat / bias
    var = (1 - bias) / bias
    pts = constellation.points
    g = -np.abs(z[:, None] - pts[None, :]) ** 2 / var[:, None]
    q = _softmax_rows(g)
    return _result_from_marginals(q, constellation, equalized=x_hat)


def vssd(
    H: np.ndarray,
    y: np.ndarray,
    sigma2: float,
    constellation: Constellation,
    eps_conv: float = 1e-3,
    J_max: int = 50,
    schedule: str = "sequential",
    callback=None,
) -> DetectionResult:
    """Variational soft-symbol detection with a fully factorised posterior.

    ``schedule="sequential"`` refreshes one marginal at a time using the
    latest soft symbols (coordinate ascent, monotone in the variational
    bound); ``"parallel"`` updates every marginal from the previous sweep.
    ``callback(j, q, soft)`` is invoked after every sweep.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if schedule not in ("sequential", "parallel"):
        raise ValueError(f"unknown schedule {schedule!r}")
    H = np.asarray(H)
    pts = constellation.points
    energy = np.abs(pts) ** 2
    gram = H.conj().T @ H
    d = np.real(np.diag(gram))
    off = gram - np.diag(np.diag(gram))
    mf = H.conj().T @ y
    n = H.shape[1]
    soft = np.zeros(n, dtype=complex)
    q = np.full((n, pts.size), 1.0 / pts.size)
    converged = False
    j = 0
    for j in range(1, J_max + 1):
        prev = soft.copy()
        if schedule == "parallel":
            lin = mf - off @ soft
            g = -(d[:, None] * energy[None, :] - 2 * np.real(lin[:, None] * pts.conj()[None, :])) / sigma2
            q = _softmax_rows(g)
            soft = q @ pts
        else:
            lin = mf - off @ soft
            for i in range(n):
                g = -(d[i] * energy - 2 * np.real(lin[i] * pts.conj())) / sigma2
                e = np.exp(g - g.max())
                q[i] = e / e.sum()
                new = q[i] @ pts
                step = new - soft[i]
                if step != 0:
                    lin -= off[:, i] * step
                    soft[i] = new
        if callback is not None:
            callback(j, q, soft)
        change = np.linalg.norm(soft - prev)
        if change <= eps_conv * np.linalg.norm(prev) or change == 0:
            converged = True
            break
    return _result_from_marginals(q, constellation, iterations=j, converged=converged)


def exhaustive_posterior(H: np.ndarray, y: np.ndarray, sigma2: float, constellation: Constellation):
    """Exact posterior over all ``Q**n`` hypotheses (small ``n`` only).

    Returns ``(posterior_mean, map_indices)``.
    """
    n = H.shape[1]
    pts = constellation.points
    grids = np.array(np.meshgrid(*[np.arange(pts.size)] * n, indexing="ij")).reshape(n, -1).T
    X = pts[grids]
    ll = -np.sum(np.abs(y[None, :] - X @ H.T) ** 2, axis=1) / sigma2
    w = np.exp(ll - ll.max())
    w /= w.sum()
    return w @ X, grids[np.argmax(ll)]
