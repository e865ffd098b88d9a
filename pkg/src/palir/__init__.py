"""Palette-aware text-to-image retrieval engine.

Modules cover the full pipeline: perceptual color math (`color`),
palette-query extraction from images (`palette`), embedding-bundle IO
and synthetic data (`data`), the trainable fusion heads (`model`),
confidence-relaxed contrastive alignment (`crc`), training and ranking
metrics (`training`), and the interactive search service (`service`).
"""

from palir.color import LabColor, SrgbColor, ciede2000, lab_to_srgb, srgb_to_lab
from palir.crc import CrcWeights, UnlabeledPositiveSet, build_Z, crc_loss, prefilter_candidates
from palir.data import DatasetBundle, SyntheticConfig, generate_synthetic, load_bundle, save_bundle
from palir.model import (
    FusionParameters,
    ModelConfig,
    encode_palette,
    fuse_text,
    fuse_visual,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    similarity,
    similarity_matrix,
)
from palir.palette import MaskedImage, PaletteConfig, PaletteQuery, extract_palette
from palir.service import SearchRequest, SearchService, create_app
from palir.training import TrainConfig, adam_step, evaluate, mrr, rank, recall_at_k, train

__all__ = [
    "LabColor",
    "SrgbColor",
    "ciede2000",
    "lab_to_srgb",
    "srgb_to_lab",
    "CrcWeights",
    "UnlabeledPositiveSet",
    "build_Z",
    "crc_loss",
    "prefilter_candidates",
    "DatasetBundle",
    "SyntheticConfig",
    "generate_synthetic",
    "load_bundle",
    "save_bundle",
    "FusionParameters",
    "ModelConfig",
    "encode_palette",
    "fuse_text",
    "fuse_visual",
    "init_parameters",
    "load_checkpoint",
    "save_checkpoint",
    "similarity",
    "similarity_matrix",
    "MaskedImage",
    "PaletteConfig",
    "PaletteQuery",
    "extract_palette",
    "SearchRequest",
    "SearchService",
    "create_app",
    "TrainConfig",
    "adam_step",
    "evaluate",
    "mrr",
    "rank",
    "recall_at_k",
    "train",
]
