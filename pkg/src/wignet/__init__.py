"""Weighted sigmoid gate units, a small training stack, and estimator wrappers."""

from .tensor import Tensor, no_grad
from .activations import (
    ACTIVATIONS,
    WiGConvParams,
    WiGDenseParams,
    fuse_reparameterize,
    make_activation,
    scalar_wig,
    scalar_wig_derivative,
    wig_conv_forward,
    wig_dense_forward,
    wig_dense_jacobian,
)
from .layers import (
    LayerSpec,
    NetworkSpec,
    build_network,
    reference_classifier,
    reference_denoiser,
)
from .init import InitPolicy

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "InitPolicy",
    "LayerSpec",
    "NetworkSpec",
    "Tensor",
    "WiGClassifier",
    "WiGConvParams",
    "WiGDenoiser",
    "WiGDenseParams",
    "build_network",
    "fuse_reparameterize",
    "make_activation",
    "no_grad",
    "reference_classifier",
    "reference_denoiser",
    "scalar_wig",
    "scalar_wig_derivative",
    "wig_conv_forward",
    "wig_dense_forward",
    "wig_dense_jacobian",
    "__version__",
]


def __getattr__(name):
    # estimators pull in sklearn; import lazily so the core stays light
    if name in ("WiGClassifier", "WiGDenoiser"):
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
