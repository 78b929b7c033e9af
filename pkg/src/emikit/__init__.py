"""Two-stage trimodal emotional mimicry intensity estimation on synthetic
feature streams: contrastive modality-text alignment, then temporal-aware,
quality-weighted fusion, all on a from-scratch float64 autograd core."""

from . import autograd
from .align import (EmbeddingBatch, ToyEncoder, confidence_weights,
                    encode_text_tokens, infonce_weighted, pretrain_align,
                    random_frozen_encoders, retrieval_top1)
from .autograd import GradTape, Tensor, backward
from .checkpoint import (Checkpoint, checkpoint_from_align, checkpoint_from_stage2,
                         fusion_from_checkpoint, align_from_checkpoint,
                         load_checkpoint, save_checkpoint)
from .config import Config, load_config
from .corpus import (AnnotationRecord, CorruptionSpec, FeatureSequence,
                     SampleBundle, corrupt, generate_annotations, generate_corpus,
                     read_annotations, read_features, render_prompt,
                     write_annotations, write_features)
from .fusion import (BiLstm, FusionModel, GatedAttention, ModalityMap,
                     QualityScorer, QualityWeights, SegmentPlan, TcnStack,
                     TransformerEncoder, quality_weights, segment_pool)
from .metrics import PearsonReport, evaluate, pearson
from .training import (CosineRestartSchedule, EmaAverage, SgdMomentum,
                       Stage2Result, cosine_eta, mse_loss, train_stage2)

__version__ = "0.1.0"
