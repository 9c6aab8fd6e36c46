"""Post-training compression and adaptive inference for HDC classifiers.

Decompose the random-projection encoder, prune trailing hypervector
dimensions, quantize every tensor with a per-row MSE scale search, and
classify with progressive class elimination plus early exit.
"""

from .adaptive_inference import (AdaptiveConfig, AdaptiveResult, OpsReduction,
                                 measure_ops_reduction, predict_adaptive,
                                 predict_adaptive_batch)
from .calibration import CalibrationPlan, CalibrationReport, calibrate, calibrate_threshold
from .compression import (FRESH_RANDOM, SVD_APPROX, CompressionConfig, PipelineArtifacts,
                          decompose_encoder, prune, quantize_mse, run_pipeline)
from .container import Artifact
from .cost_model import CostReport, account, speedup_proxy
from .errors import (ConfigError, DataError, DegenerateInputError, DimensionError,
                     DpqhdError, NumericError, ParseError, RangeError, TrainingError,
                     UsageError)
from .hdc_core import (Dataset, DecomposedEncoder, FullEncoder, HdcModel, Normalizer,
                       accuracy, encode, predict_full, train_adaptive, train_centroid)
from .kernels import BACKEND
from .tensor_core import (BitPackedBuffer, QuantizedTensor, derive_seed,
                          gen_gaussian_matrix, pack_bits, truncated_svd, unpack_bits)

__version__ = "0.1.0"
