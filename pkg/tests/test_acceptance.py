"""End-to-end acceptance criteria on the reference configuration.

Each test records one PASS/FAIL line (see the "acceptance criteria" section
of the pytest summary) and then asserts the criterion at its stated
tolerance.  Monte Carlo criteria use 200 trials per point, or 1563 frames
(2 x 10^5 bits) for BER, on one CPU.
"""

import math
import time

import numpy as np
import pytest

from dsspread.campaign import (
    format_csv,
    nmse_samples,
    run_ber_campaign,
    run_crlb_curve,
    run_nmse_campaign,
)
from dsspread.channel import PathSet, SamplingLayout, time_domain_channel_matrix
from dsspread.config import config_from_dict
from dsspread.crlb import bim_direct, compute_bim
from dsspread.detect import exhaustive_posterior, vssd
from dsspread.dsgrid import atom, atom_derivatives
from dsspread.waveform import WaveformConfig, build_transmitter_matrix, make_constellation, reference_waveform

from conftest import crandn

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

TRIALS = 200
BER_FRAMES = 1563


def db(x):
    return 10 * math.log10(x)


@pytest.fixture(scope="module")
def on_grid_campaign():
    cfg = config_from_dict({"preset": "fig-nmse-ongrid", "snr_db": [0, 10, 20], "trials": TRIALS})
    t0 = time.perf_counter()
    data = nmse_samples(cfg, with_crlb=True)
    data["minutes"] = (time.perf_counter() - t0) / 60
    return data


def test_c01_waveform_algebra(report):
    errs = {}
    for kind in ("OTFS", "OFDM", "OCDM"):
        G = build_transmitter_matrix(reference_waveform(kind, M=64, N=2)).G
        errs[kind] = np.linalg.norm(G.conj().T @ G - np.eye(G.shape[1])) / np.sqrt(G.shape[1])
    M, N = 4, 3
    cfg = WaveformConfig("OTFS", M, N, B=4e3, f0=10e3)
    G = build_transmitter_matrix(cfg).G
    Gt = np.diag(np.exp(2j * np.pi * cfg.f0 * np.arange(M) * cfg.sample_period))
    FN = np.exp(-2j * np.pi * np.outer(np.arange(N), np.arange(N)) / N) / np.sqrt(N)
    kron_exact = np.array_equal(G, np.kron(FN.conj().T, Gt))
    ok = max(errs.values()) < 1e-9 and kron_exact
    report(1, ok, f"max unitarity error {max(errs.values()):.1e}; OTFS Kronecker exact={kron_exact}")
    assert ok


def test_c02_channel_identity_and_shift(report):
    B = 10e3
    lay = SamplingLayout(M=128, Ts=128 / B, f_L=10e3)
    eye_err = np.max(np.abs(time_domain_channel_matrix(PathSet([1.0], [0.0], [1.0]), lay).Ht - np.eye(128)))
    Ht = time_domain_channel_matrix(PathSet([1.0], [1 / B], [1.0]), lay).Ht
    m, n = np.indices(Ht.shape)
    d = m - 1 - n
    oracle = np.where(d % 128 == 0, np.exp(2j * np.pi * lay.f_L * d / B), 0)
    shift_err = np.max(np.abs(Ht - oracle))
    ok = eye_err < 1e-10 and shift_err < 1e-8
    report(2, ok, f"identity error {eye_err:.1e}; one-sample shift error {shift_err:.1e}")
    assert ok


def test_c03_derivative_oracle(report, default_setup):
    ctx, g = default_setup.dictionary.ctx, default_setup.grid
    q = g.q_alpha
    rng = np.random.default_rng(3)
    ht, ho = 1e-6 * g.r_tau, 1e-6 * g.r_omega
    worst = 0.0
    for tau, om in zip(rng.uniform(0, g.tau_max, 100), rng.uniform(-2.5, 2.5, 100)):
        b, c, b2, c2 = atom_derivatives(ctx, tau, om, q, order=2)
        fb = (atom(ctx, tau + ht, om, q) - atom(ctx, tau - ht, om, q)) / (2 * ht)
        fc = (atom(ctx, tau, om + ho, q) - atom(ctx, tau, om - ho, q)) / (2 * ho)
        fb2 = (atom_derivatives(ctx, tau + ht, om, q)[0] - atom_derivatives(ctx, tau - ht, om, q)[0]) / (2 * ht)
        fc2 = (atom_derivatives(ctx, tau, om + ho, q)[1] - atom_derivatives(ctx, tau, om - ho, q)[1]) / (2 * ho)
        for a, f in ((b, fb), (c, fc), (b2, fb2), (c2, fc2)):
            worst = max(worst, np.linalg.norm(a - f) / np.linalg.norm(a))
    ok = worst < 1e-5
    report(3, ok, f"worst relative error {worst:.1e} over 100 points x 4 derivatives")
    assert ok


def test_c04_crlb_algebra_and_bound(report, on_grid_campaign):
    rng = np.random.default_rng(0)
    algebra = 0.0
    for _ in range(50):
        A = crandn(rng, 32, 250)
        theta = rng.uniform(0.01, 1e3, 250)
        s2 = rng.uniform(1e-3, 1.0)
        algebra = max(algebra, np.max(np.abs(compute_bim(A, theta, s2) - bim_direct(A, theta, s2))))
    samples = on_grid_campaign["samples"]
    rows, bound_ok = [], True
    for snr in (0.0, 10.0, 20.0):
        vb = samples[(snr, "ODSS", "VB")].mean()
        crlb = samples[(snr, "ODSS", "CRLB")].mean()
        bound_ok &= vb >= 0.99 * crlb
        rows.append(f"{snr:g}dB VB {vb:.3g} / CRLB {crlb:.3g}")
    ok = algebra < 1e-10 and bound_ok
    report(4, ok, f"BIM split error {algebra:.1e}; " + "; ".join(rows))
    assert ok


def test_c05_on_grid_calibration(report, on_grid_campaign):
    s = on_grid_campaign["samples"]
    crlb_med = np.median(s[(20.0, "ODSS", "CRLB")])
    gaps = {e: db(np.median(s[(20.0, "ODSS", e)]) / crlb_med) for e in ("VB", "FVB", "SVB")}
    omp, vb = s[(20.0, "ODSS", "OMP")].mean(), s[(20.0, "ODSS", "VB")].mean()
    ok = all(abs(g) <= 3.0 for g in gaps.values()) and omp > vb
    detail = ", ".join(f"{e} {g:+.1f} dB" for e, g in gaps.items())
    report(5, ok, f"median NMSE vs median CRLB at 20 dB: {detail}; mean OMP {omp:.3g} vs VB {vb:.3g}; "
                  f"{on_grid_campaign['minutes']:.1f} min")
    assert ok


def test_c06_off_grid_ordering(report):
    cfg = config_from_dict({"preset": "fig-nmse-offgrid", "snr_db": [20], "trials": TRIALS})
    t0 = time.perf_counter()
    s = nmse_samples(cfg)["samples"]
    m = {e: s[(20.0, "ODSS", e)].mean() for e in ("SVB", "FVB", "VB", "OMP")}
    chain = ["SVB", "FVB", "VB", "OMP"]
    gaps = [db(m[b] / m[a]) for a, b in zip(chain, chain[1:])]
    ok = all(g >= 1.0 for g in gaps)
    detail = " < ".join(f"{e} {m[e]:.3g}" for e in chain)
    report(6, ok, f"{detail}; gaps {', '.join(f'{g:+.1f}' for g in gaps)} dB; {(time.perf_counter() - t0) / 60:.1f} min")
    assert ok


def test_c07_vssd(report):
    bpsk = make_constellation("BPSK")
    rng = np.random.default_rng(0)
    stochastic = True

    def check(j, q, soft):
        nonlocal stochastic
        stochastic &= bool(np.all(q >= 0) and np.allclose(q.sum(axis=1), 1.0, atol=1e-9))

    match = 0
    for _ in range(500):
        H = crandn(rng, 4, 4)
        x = bpsk.points[rng.integers(0, 2, 4)]
        y = H @ x + np.sqrt(0.5) * crandn(rng, 4)
        _, map_idx = exhaustive_posterior(H, y, 0.5, bpsk)
        match += np.array_equal(vssd(H, y, 0.5, bpsk, callback=check).hard, map_idx)
    scalar = vssd(np.array([[1.0 + 0j]]), np.array([0.5 + 0j]), 1.0, bpsk).soft[0].real
    ok = stochastic and match / 500 >= 0.95 and abs(scalar - np.tanh(1.0)) < 1e-6
    report(7, ok, f"row-stochastic={stochastic}; MAP agreement {match / 5:.1f}%; scalar <x> = {scalar:.7f}")
    assert ok


def test_c08_detector_ordering(report):
    cfg = config_from_dict(
        {"preset": "fig-ber-pcsir", "detectors": ["1tap", "VSSD"], "snr_db": [10, 15], "trials": BER_FRAMES}
    )
    t0 = time.perf_counter()
    rec = run_ber_campaign(cfg)
    ber = {(r.snr_db, r.waveform, r.detector): r.value for r in rec}
    bits = BER_FRAMES * 128
    waveforms = ("OTFS", "OFDM", "OCDM", "ODSS")
    vssd_better = all(ber[(10.0, w, "VSSD")] < ber[(10.0, w, "1tap")] for w in waveforms)
    one_tap_15 = {w: ber[(15.0, w, "1tap")] for w in waveforms}
    worst = max(one_tap_15, key=one_tap_15.get)
    ok = bits >= 2e5 and vssd_better and worst == "OFDM"
    at10 = ", ".join(f"{w} {ber[(10.0, w, 'VSSD')]:.2e}/{ber[(10.0, w, '1tap')]:.2e}" for w in waveforms)
    at15 = ", ".join(f"{w} {v:.3f}" for w, v in one_tap_15.items())
    report(8, ok, f"{bits} bits/point; 10 dB VSSD/1-tap: {at10}; 15 dB 1-tap: {at15} (worst {worst}); "
                  f"{(time.perf_counter() - t0) / 60:.1f} min")
    assert ok


def test_c09_iced_improvement(report):
    cfg = config_from_dict({"preset": "fig-nmse-iced", "estimators": ["SVB"], "snr_db": [8], "trials": TRIALS})
    t0 = time.perf_counter()
    s = nmse_samples(cfg)["samples"]
    pilot, iced = s[(8.0, "ODSS", "SVB")].mean(), s[(8.0, "ODSS", "ICED-SVB")].mean()
    minutes = (time.perf_counter() - t0) / 60
    zero = cfg.with_overrides(iced_rounds=0, trials=5)
    z = nmse_samples(zero)["samples"]
    bit_exact = np.array_equal(z[(8.0, "ODSS", "SVB")], z[(8.0, "ODSS", "ICED-SVB")])
    gain = db(pilot / iced)
    ok = gain >= 2.0 and bit_exact
    report(9, ok, f"pilot-only SVB {pilot:.3g}, ICED-SVB {iced:.3g} ({gain:+.2f} dB); "
                  f"max_rounds=0 bit-exact={bit_exact}; {minutes:.1f} min")
    assert ok


def test_c10_reproducibility(report):
    def strip(text):
        return [",".join(line.split(",")[:-1]) for line in text.splitlines()]

    runs = {
        "nmse": (run_nmse_campaign, {"preset": "fig-nmse-offgrid", "snr_db": [10, 20], "trials": 3}),
        "ber": (run_ber_campaign, {"preset": "fig-ber-ecsir", "snr_db": [10], "trials": 2, "iced": True}),
        "crlb": (run_crlb_curve, {"preset": "fig-nmse-ongrid", "snr_db": [0, 20], "trials": 3}),
    }
    same = {}
    for name, (fn, doc) in runs.items():
        cfg = config_from_dict({**doc, "seed": 42})
        same[name] = strip(format_csv(fn(cfg))) == strip(format_csv(fn(cfg)))
    ok = all(same.values())
    report(10, ok, ", ".join(f"{k} identical={v}" for k, v in same.items()))
    assert ok
