"""Desk-scale multilingual translation laboratory with cross-lingual
consistency regularization."""

from .bpe import MergeTable, MiniBpe, Vocab
from .corpus import (LanguageId, MultiwayCorpus, SynthSpec, TaggedPair,
                     english_centric_pairs, generate_synthetic_corpus,
                     make_batches)
from .decoding import BeamConfig, Hypothesis, beam_search, greedy_decode, pivot_translate
from .estimator import ZeroShotTranslator
from .evaluation import (BleuScore, RepresentationDump, corpus_bleu, evaluate_run,
                         export_representations, similarity_search)
from .losses import (LossBreakdown, consistency_loss, cross_entropy_loss,
                     kl_divergence_rows, make_copied_pair, smoothed_targets)
from .model import (EncoderOutput, ModelConfig, encode, forward_logits, forward_probs,
                    init_params, load_checkpoint, pooled_representation, save_checkpoint)
from .theory import (BoundReport, DiscreteWorld, crossconst_effect_probe, gap_identity,
                     log_likelihood, lower_bound, make_factorized_world, verify_theory)
from .trainer import StageResult, TrainConfig, run_stage

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
