"""Context repetition (CoRe) for misordered multi-hop contexts."""

from corerep.context_model import (
    ContextSpec,
    Document,
    OrderPermutation,
    OrderWitness,
    Role,
    apply_order,
    build_context,
    enumerate_orders,
    extract_order_witness,
    is_in_order_set,
    repeat_context,
    verify_order_coverage,
)
from corerep.synthetic_chains import ChainList, SyntheticSample, generate_dataset

__all__ = [
    "ChainList",
    "ContextSpec",
    "Document",
    "OrderPermutation",
    "OrderWitness",
    "Role",
    "SyntheticSample",
    "apply_order",
    "build_context",
    "enumerate_orders",
    "extract_order_witness",
    "generate_dataset",
    "is_in_order_set",
    "repeat_context",
    "verify_order_coverage",
]

__version__ = "0.1.0"
