"""Random-mask video diffusion for scene transitions, prediction and animation.

A desk-scale re-implementation: a compact spatio-temporal denoiser trained on
procedurally rendered shape videos, DDIM/DDPM samplers, the frame-mask
conditioning scheme, classic transition baselines, and similarity metrics.
"""

__version__ = "0.1.0"
