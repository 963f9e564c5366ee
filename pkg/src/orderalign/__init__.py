"""Character-level convolutional text embeddings aligned with image features
in a non-negative order-embedding space."""

from .tensor import KernelTape, Tensor, backward
from .text import Alphabet, CharText, CttModel, build_ctt, count_params, embed_text, encode_chars
from .image import ImageFeatures, ImageProjector, build_projector, embed_image, load_features, save_features
from .loss import LossConfig, contrastive_loss, order_penalty
from .optim import AdamState, PlateauSchedule, adam_step, plateau_update
from .retrieval import (RetrievalReport, SimilarityMatrix, kfold_report, rank_matrix, rank_stats,
                        recall_at_k)
from .train import RunConfig, evaluate, train
from .estimator import OrderEmbeddingAligner

__version__ = "0.1.0"
