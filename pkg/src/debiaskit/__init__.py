"""Ensemble-based dataset-bias mitigation with bias-model capacity selection.

The package trains a ladder of bias models of increasing capacity on a
bias training set, fuses each into a main model by product-of-experts,
and selects the bias model whose ensemble is most robust on a challenge
set. Reweighting and self-distillation are provided as alternative
debiasing losses, and a synthetic-corpus generator with planted spurious
correlations makes the whole pipeline verifiable at desk scale.
"""

from .bias_features import (BiasFeatureSpec, FeatureConfig, FeatureKind,
                            all_in_p, feature_vector, h_is_subseq, neg_in_h,
                            percent_in_p)
from .corpus import (Dataset, Example, JsonlSchema, Vocab, build_vocab,
                     load_jsonl, save_jsonl, tokenize)
from .ensemble import (BiasSource, EnsembleContext, conditional_bias_vector,
                       poe_fuse, poe_loss_and_grad, reweight_weight,
                       self_distill_targets)
from .errors import DebiasError, NumericError, ValidationError
from .models import (Arch, InputMode, LossAdapter, Model, ModelSpec,
                     OptimizerKind, TrainConfig, forward, load, predict_proba,
                     save, train)
from .selection import (FusionSource, SelectionConfig, SelectionReport,
                        aggregate_runs, evaluate, fuse_best, select_bias_model)
from .splits import SplitResult, dev_easy_challenge, family_split, feature_split, \
    model_based_split
from .synth import BiasKind, SynthConfig, bias_label_correlation, generate, \
    planted_feature_families

__version__ = "0.1.0"
