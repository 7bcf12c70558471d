"""Multi-scale neural texture transfer for image-to-image translation.

Feature-space patch matching and swapping, a recursive fusion generator,
Gram-matrix texture loss, cycle-consistent adversarial training at toy
scale, and the matching evaluation-metric suite. Hot kernels run on numba
with a pure-numpy fallback (NTG_BACKEND=numpy).
"""

__version__ = "0.1.0"

from .backend import ACTIVE as active_backend  # noqa: F401
