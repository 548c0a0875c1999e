"""GLinear and linear baselines for long-term time-series forecasting, in pure numpy."""

from .core import gelu_exact, gelu_grad, gelu_tanh, finite_diff_grad, matmul
from .data import RawSeries, SplitSpec, WindowedDataset, load_csv, load_series, make_dataset, synth_generate
from .models import Model, ParamSet, PredictorConfig, backward, forward, init_params, param_count
from .training import TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"
