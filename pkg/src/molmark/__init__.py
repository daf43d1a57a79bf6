"""Digital watermarking for 3D molecules.

An encoder perturbs atom positions to carry a short binary payload; a decoder
reads the payload back from rigid-motion-invariant features (pairwise
distances projected to canonical coordinates), so rotation, translation, and
reflection of a watermarked molecule never change the extracted bits.
"""

from .codec import CodecConfig, Watermark, WatermarkCodec
from .geometry import DistanceMatrix, MdsResult, canonicalize, distance_matrix, mds_embed
from .metrics import QualityReport, bit_accuracy, evaluate_corpus
from .molecule import Molecule, MoleculeBatch, batch_molecules, load_corpus, parse_xyz, write_xyz
from .reports import DistributionStats, stats
from .training import (Checkpoint, ScheduleParams, Trainer, load_checkpoint,
                       loss_decoder, loss_encoder, save_checkpoint, schedule)
from .transforms import (RigidTransform, SweepSpec, apply, default_sweeps,
                         reflection_across_axis, rotation_about_axis, sweep,
                         translation_along_axis)

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "Watermark", "WatermarkCodec",
    "DistanceMatrix", "MdsResult", "canonicalize", "distance_matrix", "mds_embed",
    "QualityReport", "bit_accuracy", "evaluate_corpus",
    "Molecule", "MoleculeBatch", "batch_molecules", "load_corpus", "parse_xyz", "write_xyz",
    "DistributionStats", "stats",
    "Checkpoint", "ScheduleParams", "Trainer", "load_checkpoint",
    "loss_decoder", "loss_encoder", "save_checkpoint", "schedule",
    "RigidTransform", "SweepSpec", "apply", "default_sweeps",
    "reflection_across_axis", "rotation_about_axis", "sweep", "translation_along_axis",
    "__version__",
]
