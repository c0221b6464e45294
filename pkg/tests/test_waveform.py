import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsspread.waveform import (
    WaveformConfig,
    WaveformKind,
    build_transmitter_matrix,
    chirp_matrix,
    demodulate,
    dft_matrix,
    make_constellation,
    modulate,
    reference_waveform,
)

from conftest import crandn

UNITARY = ["OTFS", "OFDM", "OCDM"]


def _gram_error(G):
    n = G.shape[1]
    return np.linalg.norm(G.conj().T @ G - np.eye(n)) / np.sqrt(n)


class TestBuildTransmitterMatrix:
    def test_ofdm_two_subcarriers(self):
        wm = build_transmitter_matrix(WaveformConfig("OFDM", 2, 1, B=2.0, f0=0.0))
        expected = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        np.testing.assert_allclose(wm.G, expected, atol=1e-15)

    def test_otfs_scalar(self):
        wm = build_transmitter_matrix(WaveformConfig("OTFS", 1, 1, B=1.0, f0=0.0))
        np.testing.assert_allclose(wm.G, [[1.0]])

    @pytest.mark.parametrize("kind", UNITARY)
    def test_reference_sizes_are_unitary(self, kind):
        cfg = reference_waveform(kind)
        assert cfg.delta_f == pytest.approx(156.25)
        wm = build_transmitter_matrix(cfg)
        assert wm.M_d == 128
        assert _gram_error(wm.G) < 1e-9

    def test_otfs_kronecker_structure(self):
        M, N = 4, 3
        cfg = WaveformConfig("OTFS", M, N, B=4e3, f0=1e3)
        G = build_transmitter_matrix(cfg).G
        t = np.arange(M) * cfg.sample_period
        Gt = np.diag(np.exp(2j * np.pi * cfg.f0 * t))
        FN = np.exp(-2j * np.pi * np.outer(np.arange(N), np.arange(N)) / N) / np.sqrt(N)
        # explicit Kronecker product, block by block
        K = np.zeros((M * N, M * N), dtype=complex)
        for i in range(N):
            for j in range(N):
                K[i * M : (i + 1) * M, j * M : (j + 1) * M] = FN.conj().T[i, j] * Gt
        assert np.array_equal(G, K)

    def test_odss_reference_atoms_unit_norm(self):
        cfg = WaveformConfig("ODSS", 64, 2, B=None, q=1.001, W=146.61, Ts=13.6e-3, f0=10e3)
        wm = build_transmitter_matrix(cfg)
        counts = np.floor(1.001 ** np.arange(64) * 146.61 * 13.6e-3 + 1e-9)
        assert wm.G.shape[1] == int(counts.sum())
        np.testing.assert_allclose(np.linalg.norm(wm.G, axis=0), 1.0, atol=1e-12)

    def test_odss_preset_is_unitary(self):
        wm = build_transmitter_matrix(reference_waveform("ODSS"))
        assert wm.M_d == 128
        assert _gram_error(wm.G) < 1e-9

    def test_deterministic(self):
        cfg = reference_waveform("OCDM")
        assert np.array_equal(build_transmitter_matrix(cfg).G, build_transmitter_matrix(cfg).G)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="OFDM", M=0, N=2),
            dict(kind="OFDM", M=4, N=0),
            dict(kind="OCDM", M=5, N=2),
            dict(kind="ODSS", M=8, N=2, B=10e3, q=1.001, W=100.0),
            dict(kind="ODSS", M=8, N=2, W=None),
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            WaveformConfig(**kwargs)


class TestChirp:
    @pytest.mark.parametrize("M", [2, 8, 64])
    def test_chirp_unitary(self, M):
        Psi = chirp_matrix(M)
        np.testing.assert_allclose(Psi.conj().T @ Psi, np.eye(M), atol=1e-9)

    def test_chirp_entries(self):
        M = 6
        Psi = chirp_matrix(M)
        m = np.arange(M)
        ref = np.exp(1j * np.pi / 4) * np.exp(-1j * np.pi * (m[None, :] - m[:, None]) ** 2 / M) / np.sqrt(M)
        np.testing.assert_allclose(Psi, ref, atol=1e-15)

    def test_dft_unitary(self):
        F = dft_matrix(16)
        np.testing.assert_allclose(F @ F.conj().T, np.eye(16), atol=1e-12)


class TestModulation:
    def test_identity_matrix(self, rng):
        wm = build_transmitter_matrix(WaveformConfig("OFDM", 1, 3, B=1.0, f0=0.0))
        x = crandn(rng, 3)
        np.testing.assert_allclose(modulate(wm, x), x)

    def test_first_column(self):
        wm = build_transmitter_matrix(WaveformConfig("OFDM", 2, 1, B=2.0, f0=0.0))
        np.testing.assert_allclose(modulate(wm, np.array([1, 0])), np.array([1, 1]) / np.sqrt(2))

    @pytest.mark.parametrize("kind", [k.value for k in WaveformKind])
    def test_round_trip(self, kind, rng):
        wm = build_transmitter_matrix(reference_waveform(kind))
        x = crandn(rng, wm.M_d)
        y = demodulate(wm, modulate(wm, x))
        assert np.max(np.abs(y - x)) < 1e-9
        assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-3

    def test_zero_in_zero_out(self):
        wm = build_transmitter_matrix(reference_waveform("OFDM"))
        assert not np.any(demodulate(wm, np.zeros(wm.M_d)))

    @pytest.mark.parametrize("fn", [modulate, demodulate])
    def test_dimension_mismatch(self, fn):
        wm = build_transmitter_matrix(reference_waveform("OFDM", M=8, N=1))
        with pytest.raises(ValueError):
            fn(wm, np.zeros(5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_norm_preserved(self, seed):
        wm = build_transmitter_matrix(reference_waveform("OTFS", M=8, N=2))
        x = crandn(np.random.default_rng(seed), wm.M_d)
        x /= np.linalg.norm(x)
        assert abs(np.linalg.norm(modulate(wm, x)) - 1) < 1e-9


class TestConstellation:
    @pytest.mark.parametrize("name,Q", [("BPSK", 2), ("QPSK", 4), ("16QAM", 16)])
    def test_unit_energy(self, name, Q):
        c = make_constellation(name)
        assert c.size == Q == 2**c.bits_per_symbol
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["BPSK", "QPSK", "16QAM"])
    def test_bits_round_trip(self, name, rng):
        c = make_constellation(name)
        bits = rng.integers(0, 2, 40 * c.bits_per_symbol)
        idx = c.slice(c.map_bits(bits))
        assert np.array_equal(c.indices_to_bits(idx), bits)

    def test_gray_neighbours_differ_by_one_bit(self):
        c = make_constellation("16QAM")
        d = np.abs(c.points[:, None] - c.points[None, :])
        nearest = np.isclose(d, d[d > 0].min())
        for i, j in zip(*np.nonzero(nearest)):
            assert np.sum(c.labels[i] != c.labels[j]) == 1

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_constellation("8PSK")
