"""Gram-MMD: texture-level distributional realism scores for image sets.

Images are embedded as standardized upper-triangle Gram vectors of
intermediate backbone activations, and sets are compared with the
unbiased MMD^2 estimator. The package also ships the controlled
degradation suite, the monotonicity meta-metric protocol with its
hyperparameter grid search, and the grouped-dataset and inversion
experiment harnesses.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CacheCorruptionError,
    DegenerateBandwidthError,
    FitError,
    GmmdError,
    InferenceError,
    InputError,
    SampleSizeError,
    UndefinedCorrelationError,
)
from .gram import (  # noqa: F401
    ActivationTensor,
    GramMatrix,
    GramVector,
    Layout,
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    gram_from_cnn,
    gram_from_tokens,
    gram_vector,
    vectorize_upper_tri,
)
from .mmd import (  # noqa: F401
    KernelKind,
    KernelSpec,
    MmdResult,
    kernel_eval,
    median_heuristic_gamma,
    mmd2_biased,
    mmd2_unbiased,
)
