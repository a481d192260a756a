from .errors import ConfigError, DataError, NumericalError
from .tensor import AllocationTracker, Tensor, no_grad, use_dtype
from .module import Module, ModuleList, Parameter
from .config import ExperimentConfig, ModelConfig, load_config
from .protocol import AttentionRecord, ClassScores, ComplexityReport, EncoderOutput
