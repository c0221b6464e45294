"""Transceiver simulation for delay-scale spread channels.

Waveform matrices, discrete channel model, variational-Bayes off-grid
channel estimation, soft symbol detection, iterative estimation/detection,
a sparsity-aware CRLB and a seeded Monte Carlo harness.
"""

from .channel import PathSet, SamplingLayout, apply_channel, effective_channel, time_domain_channel_matrix
from .crlb import compute_bim, compute_crlb
from .detect import DetectionResult, compute_llrs, mmse_equalize, one_tap_equalize, vssd
from .dsgrid import AtomContext, DsGrid, build_dictionary, build_grid
from .iced import build_extended_model, run_iced
from .vbce import ChannelEstimate, VbConfig, omp_baseline, run_ce
from .waveform import WaveformConfig, WaveformKind, build_transmitter_matrix, make_constellation

__version__ = "0.1.0"
