"""Entity- and relation-alignment scoring for clinical reports.

Scores candidate reports against references by aligning extracted entities
and relations in embedding space, and validates metric outputs against
expert ratings with correlation and regression statistics.
"""

__version__ = "0.1.0"

from .corpus import (
    AnnotationSet,
    CorpusError,
    EntityMention,
    ExpertScore,
    MarkedPairSample,
    RelationInstance,
    Report,
    build_relation_pairs,
    chunk_sentence,
    load_annotations,
    load_expert_scores,
    load_reports,
    split_sentences,
)
from .embed import HashedEmbedder, HashedEmbedderConfig, VectorStore, cosine, cosine_clamped, normalize_key
from .extract import Gazetteer, LinkerConfig, filter_by_confidence, link_relations, tag_entities
from .score import HareBreakdown, ScoringConfig, ablate, entity_prf, hare_score, match_relations, relation_prf
from .stats import (
    CorrelationResult,
    RegressionResult,
    StatsError,
    compare_metrics,
    filter_zero_expert,
    kendall_tau_b,
    normalize,
    ols_simple,
    pearson,
    spearman,
)
