"""Few-step adversarial diffusion for conditional motion sequences.

Modules: ``numerics`` (autodiff, losses, optimizers), ``schedule``
(diffusion algebra), ``oracle`` (exact Gaussian-mixture posteriors),
``synthdata`` (synthetic beat-driven gesture clips), ``models``,
``training``, ``sampling``, ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"
