"""Synthetic sources, room simulation and mixture construction."""

from sepderev.mixing.sample import (
    MixConfig, MixtureSample, ProgressiveLadder, SourceBank, VisualFeatureSequence,
    build_ladder, build_sample, draw_sample, generate_samples, gen_visual_features,
)

__all__ = ["MixConfig", "MixtureSample", "ProgressiveLadder", "SourceBank", "VisualFeatureSequence",
           "build_ladder", "build_sample", "draw_sample", "generate_samples", "gen_visual_features"]
