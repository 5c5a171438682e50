"""Anisotropic osmosis filtering for shadow removal."""

from .anisotropy import (NotPositiveDefiniteError, anisotropy_ratio, build_weight_field,
                         identity_field, selling_superbase, stencil_field, stencil_weights)
from .expm import (EvolutionTrace, ExpmConvergenceError, StepperConfig, dense_expm_reference,
                   evolve, expm_action)
from .grid_image import (ImageBuffer, ImageDecodeError, MaskField, dilate_mask, lift_positive,
                         load_image, load_mask, save_image)
from .operator import SparseOperator, assemble, osmosis_energy, validate_generator
from .pipeline import PipelineConfig, PipelineError, remove_shadow, run_shadow_removal
from .scc import tarjan_scc
from .structure import encode, estimate_directions, structure_tensor

__version__ = "0.1.0"
