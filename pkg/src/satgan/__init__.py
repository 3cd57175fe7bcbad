"""Attention-masked multi-domain image translation GAN.

A self-contained research package: a small reverse-mode autodiff engine
with second-order support, the conv/norm layer zoo it needs, the
two-branch masked generator and critic, the full training objective
(Wasserstein adversarial term with gradient penalty, classification,
cycle and identity reconstruction), binary checkpoints, a procedural
attribute dataset, and a classifier-based evaluation harness.
"""

from .tensor import (
    Tensor,
    GradMap,
    backward,
    finite_diff_gradient,
    no_grad,
    enable_grad,
    set_finite_checks,
    zeros,
    ones,
    full,
    uniform,
    xavier_init,
)

__all__ = [
    "Tensor",
    "GradMap",
    "backward",
    "finite_diff_gradient",
    "no_grad",
    "enable_grad",
    "set_finite_checks",
    "zeros",
    "ones",
    "full",
    "uniform",
    "xavier_init",
]

__version__ = "0.1.0"
