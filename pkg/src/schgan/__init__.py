"""Semi-supervised cross-modal hashing with an adversarial example selector."""
from .data import Dataset, SynthConfig, load_dataset, save_dataset, synth_generate
from .evaluate import MetricsReport
from .model import ModelConfig, TwoPathwayNet, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, lr_schedule, train

__version__ = "0.1.0"
