"""Python bindings for the sdkd distillation library."""

from sdkd._core import (  # noqa: F401
    AliasTable,
    Model,
    build_mixture_pmf,
    cli,
    full_distill_grad,
    gen_blobs,
    is_distill_grad,
    pdbs_select,
    relabel,
    softmax_t,
)

__all__ = [
    "AliasTable",
    "Model",
    "build_mixture_pmf",
    "cli",
    "full_distill_grad",
    "gen_blobs",
    "is_distill_grad",
    "pdbs_select",
    "relabel",
    "softmax_t",
]
