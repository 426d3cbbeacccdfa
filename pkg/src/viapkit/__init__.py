"""View-invariant adversarial perturbations on a self-contained render/train/attack stack."""

from viapkit import attacks, evaluate, nn, render, train

__all__ = ["attacks", "evaluate", "nn", "render", "train"]
__version__ = "0.1.0"
