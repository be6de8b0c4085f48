"""Beam-alignment simulation: arrays, codebooks, environments and the CKM labeler."""

from .arrays import (
    ArrayGeometry,
    Codebook,
    PathSet,
    beam_gains,
    capacity,
    channel_from_paths,
    make_upa_codebook,
    optimal_beam,
    pair_capacity,
    trivial_codebook,
    ula_response,
    upa_steering,
)
from .ckm import (
    CkmLabeler,
    beam_dataset,
    best_pairs,
    capacities,
    ckm_labeler_fit,
    default_codebooks,
    read_beam_csv,
    write_beam_csv,
)
from .environment import Environment, Region, gen_environment

__all__ = [
    "ArrayGeometry", "CkmLabeler", "Codebook", "Environment", "PathSet", "Region",
    "beam_dataset", "beam_gains", "best_pairs", "capacities", "capacity",
    "channel_from_paths", "ckm_labeler_fit", "default_codebooks", "gen_environment",
    "make_upa_codebook", "optimal_beam", "pair_capacity", "read_beam_csv",
    "trivial_codebook", "ula_response", "upa_steering", "write_beam_csv",
]
