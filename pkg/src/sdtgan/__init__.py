"""Text-conditioned mel-spectrogram GAN with time-frequency cross-attention, built on a small numpy autodiff core."""

from .tensor import Tape, Tensor, backward
from .data import CorpusConfig, TextCond, encode_text, render_mel, sample_batch, alignment_energy
from .attention import MultiTFCAParams, SelfTFCAParams, axis_pool, multi_tfca, self_tfca
from .models import Discriminator, Generator, ModelConfig, count_params, discriminate, generate
from .losses import ContrastiveConfig, LossReport
from .train import TrainConfig, TrainState, adam_step, train, train_step

__version__ = "0.1.0"
