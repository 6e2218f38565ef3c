"""Structure search, causal-effect estimation and relevance stratification."""
from .effects import (CausalEffectMatrix, cooccurrence_effects, estimate_causal_effects,
                      fit_logistic, read_effects, write_effects)
from .graph import (CATEGORIES, CausalGraph, VisitCausalSubgraph, classify, read_graph,
                    visit_causal_subgraph, write_graph)
from .scoring import ScoreCache, local_score, total_score
from .search import SearchConfig, greedy_equivalence_search
from .strata import RelevanceStrata, pyramid_sizes, read_strata, stratify, write_strata

__all__ = [
    "CATEGORIES", "CausalEffectMatrix", "CausalGraph", "RelevanceStrata", "ScoreCache",
    "SearchConfig", "VisitCausalSubgraph", "classify", "cooccurrence_effects",
    "estimate_causal_effects", "fit_logistic", "greedy_equivalence_search", "local_score",
    "pyramid_sizes", "read_effects", "read_graph", "read_strata", "stratify", "total_score",
    "visit_causal_subgraph", "write_effects", "write_graph", "write_strata",
]
