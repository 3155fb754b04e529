"""Differentiable feature extractors, masks, and control objectives."""

from .scaling import (DB_RANGE, amp_coeff, db_to_unit, unit_to_amp_np,
                      unit_to_db, unit_to_power)
from .pitch import (LOW_CUT, N_CLASSES, class_of_row, fold_matrix,
                    fundamental_row, partial_offsets)
from .masks import (RegionMask, inpaint_mask, loop_mask, masked_l2,
                    outpaint_mask, ref_free_loop_regions)
from .intensity import (IntensityExtractorSpec, intensity_corr_loss,
                        intensity_curve, intensity_mse, smooth_1d)
from .chroma import UNIFORM_NLL, chroma, melody_accuracy, melody_nll
from .structure import (mfcc_ss, structure_mse, structure_target_from_diagram,
                        structure_transfer_target)
from .tasks import (FEATURES, ControlTask, as_grid, batched_multi_loss,
                    inversion_loss, multi_loss, self_loop_loss)

__all__ = [
    "DB_RANGE", "amp_coeff", "unit_to_db", "db_to_unit", "unit_to_amp_np",
    "unit_to_power",
    "N_CLASSES", "LOW_CUT", "partial_offsets", "fundamental_row",
    "class_of_row", "fold_matrix",
    "RegionMask", "outpaint_mask", "inpaint_mask", "loop_mask",
    "ref_free_loop_regions", "masked_l2",
    "IntensityExtractorSpec", "intensity_curve", "intensity_mse",
    "intensity_corr_loss", "smooth_1d",
    "chroma", "melody_nll", "melody_accuracy", "UNIFORM_NLL",
    "mfcc_ss", "structure_mse", "structure_target_from_diagram",
    "structure_transfer_target",
    "ControlTask", "multi_loss", "batched_multi_loss", "inversion_loss",
    "self_loop_loss", "as_grid", "FEATURES",
]
