"""Statistical evaluation toolkit for membership-inference attacks."""

from .features import (FeatureScore, MethodConfig, METHODS, ScoringInputs,
                       score_split)
from .probes import db_index, entropy_curves, layer_separability_profile, memorization_score
from .records import (Example, EvalResult, GenerationRecord, LayerEmbedding,
                      TokenFrequencyTable, TokenTrace, ingest_corpus,
                      serialize_results, validate_trace)
from .splits import (SplitRejection, SplitSet, SplitSpec, build_complete_split,
                     build_relative_split, build_truncate_split)
from .stats import (boxplot_stats, js_divergence, ks_test, roc_auc,
                    select_threshold, seven_gram_overlap, spearman)

__version__ = "0.1.0"
