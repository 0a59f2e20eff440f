"""Procedural stand-in for an element/glyph dataset."""

from glyphfill.synth.elements import (
    ElementKind,
    ElementSpec,
    ObjectInstance,
    ShapeFamily,
    gen_amorphous_texture,
    gen_object_instances,
    random_element_spec,
    synth_ground_truth,
    synth_ground_truth_full,
)
from glyphfill.synth.glyphs import ALPHABET, render_glyph_mask
from glyphfill.synth.morph import refine_mask, segment_foreground
from glyphfill.synth.triplets import (
    ReferenceRegion,
    TrainingTriplet,
    build_reference_region,
    build_training_triplet,
    edge_band,
    edge_repaint_triplet,
)
