"""trilabel: three-level pseudo-label fusion for semi-supervised training.

The engine fuses semantic (classifier head), text-anchor and instance-memory
probabilities into pseudo-labels, aligns them against a target class
marginal, and trains a linear adapter + head with analytic gradients. A
synthetic benchmark generator and a binary embedding file format decouple the
engine from any particular encoder; an HTTP service and CLI wrap the runner.
"""

__version__ = "0.1.0"

from .buffer import InstanceMemoryBuffer
from .core import (cosine_similarity, cross_entropy, l2_normalize, one_hot,
                   softmax_temp)
from .data import (AugmentationConfig, Dataset, EmbeddingRecord, SyntheticConfig,
                   generate_synthetic, read_embeddings, write_embeddings)
from .errors import (BufferStateError, ConfigurationError, DataFormatError,
                     DomainError, EngineError, SampleLookupError)
from .harness import (DatasetFiles, TrainConfig, ablate, evaluate_checkpoint,
                      evaluate_params, sweep, train)
from .model import (AdamState, LossBreakdown, ModelParams, adam_step, forward,
                    gradients, load_checkpoint, save_checkpoint)
from .pseudolabel import (DistributionAligner, FusedPseudoLabel, fuse, generate,
                          instance_probability, text_probability, unsup_loss)
