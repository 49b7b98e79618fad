"""Frequency-selective score-distillation editing toolkit.

Decomposes 2-D latents and triplane texture planes into wavelet subbands,
routes optimization gradients through exact adjoint transforms, and
freezes chosen frequency bands during iterative score-driven editing.
"""

__version__ = "0.1.0"

from .subband import FreezePolicy, FrequencyState, decompose_latent, reconstruct_latent
from .edit2d import EditConfig, run_edit_2d
from .wavelet import daubechies_filters, dwt2, idwt2, wavedec2, waverec2, waverec2_adjoint

__all__ = [
    "FreezePolicy",
    "FrequencyState",
    "EditConfig",
    "decompose_latent",
    "reconstruct_latent",
    "run_edit_2d",
    "daubechies_filters",
    "dwt2",
    "idwt2",
    "wavedec2",
    "waverec2",
    "waverec2_adjoint",
    "__version__",
]
