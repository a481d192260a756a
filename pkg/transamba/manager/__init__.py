from .experiment import ArtifactRecord, ExperimentManager
from .trainer import Trainer, TrainResult
from .inference import load_model, run_evaluation, run_inference
