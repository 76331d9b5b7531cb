"""P4R: graph recommendation with LLM item profiles injected into LightGCN-style propagation."""

from ._core import (
    Dataset,
    DomainError,
    Embeddings,
    Error,
    Model,
    NumericError,
    ParseError,
    ValidationError,
    evaluate_random,
    evaluate_wt,
    forward,
    hit_at_k,
    mrr_at_k,
    ndcg_at_k,
    norm_coeff,
    propagate_layer,
    recall_at_k,
    rouge1,
    rouge_tokens,
    run_cli,
    sparsity,
    sparsity_percent,
)

__all__ = [
    "Dataset",
    "DomainError",
    "Embeddings",
    "Error",
    "Model",
    "NumericError",
    "ParseError",
    "ValidationError",
    "evaluate_random",
    "evaluate_wt",
    "forward",
    "hit_at_k",
    "mrr_at_k",
    "ndcg_at_k",
    "norm_coeff",
    "propagate_layer",
    "recall_at_k",
    "rouge1",
    "rouge_tokens",
    "run_cli",
    "sparsity",
    "sparsity_percent",
]
