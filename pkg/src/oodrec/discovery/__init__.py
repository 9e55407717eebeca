"""LLM-guided confounder discovery: proposal, annotation, refinement,
extraction, feedback, and subspace construction."""

from .annotate import AnnotationMatrix, annotate_reviews, collect_reviews, sample_reviews
from .blanket import markov_blanket
from .citest import ci_filter, g2_test
from .fci import ARROW, CIRCLE, TAIL, Pag, fci_discover
from .llm import HttpLlm, LlmPort, ReplayLlm, ReplayLogger
from .loop import (
    DiscoveryError,
    DiscoveryResult,
    causal_feedback,
    direct_llm_pool,
    extract_confounders,
    load_pool,
    propose_variables,
    run_discovery,
)
from .mock import KeywordMockLlm
from .subspace import ConfounderSubspace, build_subspace
from .types import CausalVariable, ConfounderRecord, ReviewRecord, normalize_name

__all__ = [
    "ARROW", "CIRCLE", "TAIL", "AnnotationMatrix", "CausalVariable",
    "ConfounderRecord", "ConfounderSubspace", "DiscoveryError",
    "DiscoveryResult", "HttpLlm", "KeywordMockLlm", "LlmPort", "Pag",
    "ReplayLlm", "ReplayLogger", "ReviewRecord", "annotate_reviews",
    "build_subspace", "causal_feedback", "ci_filter", "collect_reviews",
    "direct_llm_pool", "extract_confounders", "fci_discover", "g2_test",
    "load_pool", "markov_blanket", "normalize_name", "propose_variables",
    "run_discovery", "sample_reviews",
]
