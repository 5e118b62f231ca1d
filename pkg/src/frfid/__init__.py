"""Nonparametric FRF estimation for closed-loop MIMO systems and gray-box
stiffness/damping identification of a flexible-joint arm."""

from .classical import FrfEstimate, h1_estimate, ari_estimate, log_estimate, jio_classical
from .local import LocalFitConfig, local_estimate, lpm_fit, lrm_miso_fit, lrm_mimo_fit, jio_lrm
from .sigproc import MultisineSpec, design_multisine, to_spectral, stack_spectral, TimeRecord, SpectralRecord

__version__ = "0.1.0"

__all__ = ["FrfEstimate", "h1_estimate", "ari_estimate", "log_estimate", "jio_classical", "LocalFitConfig",
           "local_estimate", "lpm_fit", "lrm_miso_fit", "lrm_mimo_fit", "jio_lrm", "MultisineSpec",
           "design_multisine", "to_spectral", "stack_spectral", "TimeRecord", "SpectralRecord"]
