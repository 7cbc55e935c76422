"""icmlp: residual MLPs with IC (batch norm + dropout) whitening layers, in numpy.

Set ``ICMLP_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""
from ._kernels import BACKEND
from .data import (Dataset, FoldPlan, batches, holdout_split, load_csv,
                   make_dataset, make_folds, write_csv)
from .errors import *  # noqa: F401,F403
from .layers import BatchNorm, Dropout, Linear, Mode, ReLU, check_linearity, softmax, softmax_cross_entropy
from .model import (VARIANTS, AblationFlags, DownsampleBlock, IcMlpModel, ResidualBlock,
                    build_model, load_model, param_count, save_model)
from .numerics import Rng, add_row_broadcast, bernoulli_mask, matmul, transpose, uniform
from .optim import AdamW, ExponentialLR, kaiming_uniform_init
from .train import (PRESETS, EarlyStopping, EpochRecord, RunResult, SearchSpace, TrainConfig,
                    ablation_sweep, cross_validate, evaluate, fit, random_search, train_epoch)
from .uncertainty import PredictiveSummary, entropy, mc_dropout_predict, rank_by_entropy

__version__ = "0.1.0"
