"""Contrastive latent world models for pixel control.

A small numpy stack for learning latent dynamics from pixels with a
mutual-information (noise-contrastive) objective, planning in the latent
space with CEM-based model-predictive control, and measuring robustness
against visual distractors, with a pixel-reconstruction baseline for
comparison.
"""

from .diffcore import (
    DiagGaussian,
    ParamStore,
    Tensor,
    backward,
    grad_check,
    kl_diag_gaussian,
    no_grad,
    reparam_sample,
)

__version__ = "0.1.0"
