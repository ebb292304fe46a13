"""Forecasting high-dimensional chaotic dynamics with reservoir computers and gated RNNs."""

from .data import TimeSeriesDataset
from .dynamics import KSConfig, Lorenz96Config, simulate_ks, simulate_lorenz96, true_lyapunov_spectrum
from .forecasting import evaluate_many, iterative_forecast, warmup
from .gated_rnn import BpttConfig, GatedRnnModel, train_bptt
from .lyapunov import LyapunovRunParams, LyapunovSpectrum, kaplan_yorke, surrogate_spectrum
from .metrics import nrmse, power_spectrum, summarize, vpt
from .parallel import decompose, parallel_forecast, train_parallel
from .reduction import fit_svd, project, reconstruct, reduce_dataset
from .reservoir import ReservoirParams, build_reservoir, fit_readout, train_rc

__version__ = "0.1.0"
