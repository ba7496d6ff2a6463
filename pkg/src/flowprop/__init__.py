"""Edit-propagation training on synthetic video latents.

A frozen velocity backbone supplies on-the-fly supervision pairs through
guidance-scale modulation of one-step clean-latent estimates; a small
adapter learns to propagate a first-frame edit across a clip by matching
the backbone's high-guidance velocity. Everything runs on float64 numpy
against analytic oracles.
"""

__version__ = "0.1.0"
