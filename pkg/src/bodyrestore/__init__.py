"""Desk-scale human body image restoration.

Two-stage pipeline: a regression pre-restorer cleans up a degraded input,
then a structurally conditioned diffusion model (pose map, foreground
attention map, structured caption) re-synthesizes detail, with an optional
body-part feature loss steering the reverse sampler.
"""

__version__ = "0.1.0"
