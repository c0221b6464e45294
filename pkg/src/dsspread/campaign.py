"""Seeded Monte Carlo campaigns: NMSE of channel estimators, BER of detectors, CRLB curves."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from .channel import (
    ChannelSpec,
    SamplingLayout,
    apply_channel,
    effective_channel,
    noise_variance,
    sample_paths,
    time_domain_channel_matrix,
)
from .config import ConfigError, ExperimentConfig
from .crlb import compute_crlb, genie_theta, sensitivity_gram
from .dsgrid import AtomContext, Dictionary, build_dictionary, build_grid, on_grid_paths
from .iced import detect, run_iced
from .vbce import ChannelEstimate, Refine, VbConfig, omp_baseline, run_ce
from .waveform import (
    Constellation,
    WaveformKind,
    WaveformMatrices,
    build_transmitter_matrix,
    make_constellation,
    reference_waveform,
)

_WAVEFORM_ORDER = [k.value for k in WaveformKind]


@dataclass(frozen=True)
class ResultRecord:
    snr_db: float
    metric: str
    value: float
    trials: int
    waveform: str
    estimator: str
    detector: str
    seed: int
    wall_ms: float

    def __post_init__(self):
        if self.metric in ("nmse", "crlb") and not self.value >= 0:
            raise ValueError(f"{self.metric} must be non-negative, got {self.value}")
        if self.metric == "ber" and not 0 <= self.value <= 1:
            raise ValueError(f"ber must lie in [0, 1], got {self.value}")


CSV_FIELDS = tuple(f.name for f in fields(ResultRecord))


def format_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        row = list(astuple(r))
        row[0] = repr(float(r.snr_db))
        row[2] = repr(float(r.value))
        row[8] = f"{r.wall_ms:.3f}"
        w.writerow(row)
    return buf.getvalue()


def write_csv(records, path: str | Path) -> None:
    try:
        Path(path).write_text(format_csv(records))
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


# -- seeding ------------------------------------------------------------------------


def _snr_key(snr_db: float) -> int:
    if np.isinf(snr_db):
        # noise-free runs get a fixed key outside the range of finite millidecibel keys
        return 0xFFFFFFFE if snr_db > 0 else 0xFFFFFFFD
    return int(round(snr_db * 1000)) & 0xFFFFFFFF


def trial_rng(seed: int, snr_db: float, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per ``(SNR, trial, stream)``; adding points leaves others untouched."""
    ss = np.random.SeedSequence(seed, spawn_key=(_snr_key(snr_db), trial, stream))
    return np.random.default_rng(ss)


def _waveform_stream(kind: str) -> int:
    return 1 + _WAVEFORM_ORDER.index(kind)


# -- per-waveform setup ---------------------------------------------------------------


@dataclass
class Setup:
    """Everything that is fixed for one data waveform during a campaign."""

    kind: str
    wm: WaveformMatrices
    layout: SamplingLayout
    pilot_wm: WaveformMatrices
    pilot_layout: SamplingLayout
    x_p: np.ndarray
    dictionary: Dictionary
    constellation: Constellation
    _gram: np.ndarray | None = None

    @property
    def grid(self):
        return self.dictionary.grid

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = sensitivity_gram(self.grid, self.wm, self.layout)
        return self._gram


def _setup_key(cfg: ExperimentConfig, kind: str) -> tuple:
    return (
        kind,
        cfg.pilot_waveform,
        cfg.M,
        cfg.N,
        cfg.B,
        cfg.f_L,
        cfg.M_p,
        cfg.N_p,
        cfg.tau_max,
        cfg.alpha_max,
        cfg.N_tau,
        cfg.M_alpha,
        cfg.constellation,
        cfg.seed,
    )


@lru_cache(maxsize=16)
def _cached_setup(key: tuple) -> Setup:
    kind, pilot_kind, M, N, B, f_L, M_p, N_p, tau_max, alpha_max, N_tau, M_alpha, const, seed = key
    data_cfg = reference_waveform(kind, M=M, N=N, B=B)
    wm = build_transmitter_matrix(data_cfg)
    pilot_kind = kind if pilot_kind in (None, "same") else pilot_kind
    pilot_cfg = reference_waveform(pilot_kind, M=M_p // N_p, N=N_p, B=B)
    pilot_wm = build_transmitter_matrix(pilot_cfg)
    if pilot_wm.M_d != M_p:
        raise ConfigError(f"{pilot_kind} preamble carries {pilot_wm.M_d} symbols, expected M_p={M_p}")
    constellation = make_constellation(const)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    x_p = constellation.points[rng.integers(0, constellation.size, M_p)]
    pilot_layout = SamplingLayout.for_waveform(pilot_cfg, f_L=f_L)
    layout = SamplingLayout.for_waveform(data_cfg, f_L=f_L)
    grid = build_grid(tau_max, alpha_max, N_tau, M_alpha)
    dictionary = build_dictionary(grid, AtomContext(pilot_wm, x_p, pilot_layout))
    return Setup(kind, wm, layout, pilot_wm, pilot_layout, x_p, dictionary, constellation)


def get_setup(cfg: ExperimentConfig, kind: str) -> Setup:
    return _cached_setup(_setup_key(cfg, kind))


def vb_config(cfg: ExperimentConfig, refine: str) -> VbConfig:
    return VbConfig(
        eps_conv=cfg.eps_conv,
        J_max=cfg.J_max,
        threshold_frac=cfg.threshold_frac,
        refine=Refine(refine),
        warmup=cfg.warmup,
    )


def estimate(cfg: ExperimentConfig, setup: Setup, name: str, y_p: np.ndarray) -> ChannelEstimate:
    if name == "OMP":
        return omp_baseline(y_p, setup.dictionary, cfg.P)
    refine = {"VB": "none", "FVB": "FVB", "SVB": "SVB"}[name]
    return run_ce(y_p, setup.dictionary, vb_config(cfg, refine))


def _draw_paths(cfg: ExperimentConfig, setup: Setup, rng):
    if cfg.channel == "ongrid":
        return on_grid_paths(setup.grid, cfg.P, rng)
    spec = ChannelSpec(cfg.tau_max, cfg.alpha_max, cfg.P, cfg.scale_model)
    return sample_paths(spec, rng), None


def nmse(H: np.ndarray, H_hat: np.ndarray) -> float:
    return float(np.linalg.norm(H - H_hat) ** 2 / np.linalg.norm(H) ** 2)


# -- NMSE campaign ---------------------------------------------------------------------


def nmse_trial(cfg: ExperimentConfig, snr_db: float, trial: int, with_crlb: bool = False) -> dict:
    """NMSE of every configured estimator on one channel draw, per waveform.

    Keys are ``(waveform, estimator)``; ICED variants are labelled
    ``ICED-<estimator>`` and the genie bound ``CRLB`` (normalised).
    """
    out: dict = {}
    rng_paths = trial_rng(cfg.seed, snr_db, trial, 0)
    first = get_setup(cfg, cfg.waveforms[0])
    paths, idx = _draw_paths(cfg, first, rng_paths)
    for kind in cfg.waveforms:
        setup = get_setup(cfg, kind)
        rng = trial_rng(cfg.seed, snr_db, trial, _waveform_stream(kind))
        Ht_p = time_domain_channel_matrix(paths, setup.pilot_layout).Ht
        s_p = setup.pilot_wm.G @ setup.x_p
        r_p, sigma_p2 = apply_channel(s_p, Ht_p, snr_db, rng)
        y_p = setup.pilot_wm.G.conj().T @ r_p
        Ht = time_domain_channel_matrix(paths, setup.layout).Ht
        H = effective_channel(setup.wm, Ht)
        if with_crlb:
            if idx is None:
                raise ConfigError("the CRLB benchmark needs on-grid channels")
            sigma2 = sigma_p2 if sigma_p2 > 0 else noise_variance(Ht_p @ s_p, snr_db)
            res = compute_crlb(
                setup.dictionary.A, setup.grid, setup.wm, setup.layout,
                genie_theta(setup.grid.L, idx), sigma2, gram=setup.gram(),
            )
            out[(kind, "CRLB")] = res.crlb_trace / float(np.linalg.norm(H) ** 2)
        y = x = None
        if cfg.iced:
            bits = rng.integers(0, 2, setup.wm.M_d * setup.constellation.bits_per_symbol)
            x = setup.constellation.map_bits(bits)
            r, _ = apply_channel(setup.wm.G @ x, Ht, snr_db, rng)
            y = setup.wm.G.conj().T @ r
        for name in cfg.estimators:
            if name == "none":
                out[(kind, name)] = nmse(H, H)
                continue
            est = estimate(cfg, setup, name, y_p)
            out[(kind, name)] = nmse(H, est.effective_channel(setup.wm, setup.layout))
            if cfg.iced and name != "OMP":
                res = run_iced(
                    y_p, y, setup.dictionary, setup.wm, setup.layout, setup.constellation,
                    vb_config(cfg, {"VB": "none"}.get(name, name)), cfg.iced_detector,
                    cfg.iced_rounds, initial=est,
                )
                out[(kind, f"ICED-{name}")] = nmse(H, res.estimate.Heff_hat)
    return out


def _call(args):
    fn, cfg, snr, trial, kw = args
    return fn(cfg, snr, trial, **kw)


def _map_trials(fn, cfg: ExperimentConfig, snr_db: float, workers: int, **kw) -> list:
    jobs = [(fn, cfg, snr_db, t, kw) for t in range(cfg.trials)]
    if workers <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs, chunksize=max(1, cfg.trials // (4 * workers))))


def nmse_samples(cfg: ExperimentConfig, workers: int = 1, with_crlb: bool = False) -> dict:
    """Per-trial NMSE arrays keyed by ``(snr_db, waveform, estimator)`` plus wall time per SNR."""
    cfg.validate()
    samples: dict = {}
    wall: dict = {}
    for snr in cfg.snr_db:
        t0 = time.perf_counter()
        results = _map_trials(nmse_trial, cfg, snr, workers, with_crlb=with_crlb)
        wall[snr] = 1e3 * (time.perf_counter() - t0)
        for key in results[0]:
            samples[(snr, *key)] = np.array([r[key] for r in results])
    return {"samples": samples, "wall_ms": wall}


def run_nmse_campaign(cfg: ExperimentConfig, workers: int = 1) -> list[ResultRecord]:
    data = nmse_samples(cfg, workers)
    records = []
    for (snr, kind, est), values in data["samples"].items():
        records.append(
            ResultRecord(snr, "nmse", _ordered_mean(values), cfg.trials, kind, est, "", cfg.seed, data["wall_ms"][snr])
        )
    return records


def run_crlb_curve(cfg: ExperimentConfig, workers: int = 1) -> list[ResultRecord]:
    """Mean normalised genie-support CRLB per SNR on on-grid channel draws."""
    cfg = cfg.with_overrides(channel="ongrid", estimators=[], iced=False)
    data = nmse_samples(cfg, workers, with_crlb=True)
    records = []
    for (snr, kind, est), values in data["samples"].items():
        records.append(
            ResultRecord(snr, "crlb", _ordered_mean(values), cfg.trials, kind, "genie", "", cfg.seed, data["wall_ms"][snr])
        )
    return records


def _ordered_mean(values: np.ndarray) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


# -- BER campaign -----------------------------------------------------------------------


def ber_trial(cfg: ExperimentConfig, snr_db: float, trial: int) -> dict:
    """Bit errors per ``(waveform, estimator, detector)`` on one frame; values are ``(errors, bits)``."""
    out: dict = {}
    rng_paths = trial_rng(cfg.seed, snr_db, trial, 0)
    first = get_setup(cfg, cfg.waveforms[0])
    paths, _ = _draw_paths(cfg, first, rng_paths)
    for kind in cfg.waveforms:
        setup = get_setup(cfg, kind)
        c = setup.constellation
        rng = trial_rng(cfg.seed, snr_db, trial, _waveform_stream(kind))
        bits = rng.integers(0, 2, setup.wm.M_d * c.bits_per_symbol)
        x = c.map_bits(bits)
        Ht = time_domain_channel_matrix(paths, setup.layout).Ht
        r, sigma2 = apply_channel(setup.wm.G @ x, Ht, snr_db, rng)
        y = setup.wm.G.conj().T @ r
        if cfg.csi == "PCSIR":
            H = effective_channel(setup.wm, Ht)
            s2 = sigma2 if sigma2 > 0 else 1e-12
            for det in cfg.detectors:
                res = detect(det, H, y, s2, c)
                out[(kind, "none", det)] = (int(np.sum(res.bits(c) != bits)), bits.size)
            continue
        Ht_p = time_domain_channel_matrix(paths, setup.pilot_layout).Ht
        r_p, _ = apply_channel(setup.pilot_wm.G @ setup.x_p, Ht_p, snr_db, rng)
        y_p = setup.pilot_wm.G.conj().T @ r_p
        for name in cfg.estimators:
            if name == "none":
                continue
            est = estimate(cfg, setup, name, y_p)
            H_hat = est.effective_channel(setup.wm, setup.layout)
            s2 = max(est.noise_variance, 1e-12)
            for det in cfg.detectors:
                res = detect(det, H_hat, y, s2, c)
                out[(kind, name, det)] = (int(np.sum(res.bits(c) != bits)), bits.size)
            if cfg.iced and name != "OMP":
                res = run_iced(
                    y_p, y, setup.dictionary, setup.wm, setup.layout, c,
                    vb_config(cfg, {"VB": "none"}.get(name, name)), cfg.iced_detector,
                    cfg.iced_rounds, initial=est,
                )
                out[(kind, f"ICED-{name}", cfg.iced_detector)] = (
                    int(np.sum(res.detection.bits(c) != bits)),
                    bits.size,
                )
    return out


def ber_counts(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Summed ``(errors, bits)`` keyed by ``(snr_db, waveform, estimator, detector)``."""
    cfg.validate("ber")
    counts: dict = {}
    wall: dict = {}
    for snr in cfg.snr_db:
        t0 = time.perf_counter()
        results = _map_trials(ber_trial, cfg, snr, workers)
        wall[snr] = 1e3 * (time.perf_counter() - t0)
        for key in results[0]:
            errs = sum(r[key][0] for r in results)
            nbits = sum(r[key][1] for r in results)
            counts[(snr, *key)] = (errs, nbits)
    return {"counts": counts, "wall_ms": wall}


def run_ber_campaign(cfg: ExperimentConfig, workers: int = 1) -> list[ResultRecord]:
    data = ber_counts(cfg, workers)
    return [
        ResultRecord(snr, "ber", errs / nbits, cfg.trials, kind, est, det, cfg.seed, data["wall_ms"][snr])
        for (snr, kind, est, det), (errs, nbits) in data["counts"].items()
    ]
