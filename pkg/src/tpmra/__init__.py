"""Tree Parity Machine key exchange with continuous rekeying."""

from .tpm import (Evaluation, KeyMaterial, Role, TieBreak, TpmParams, clip_weight, evaluate, extract_key,
                  hebbian_update, init_weights, overlap)
from .lfsr import SharedInputGenerator, next_bit, next_input, seed_generator
from .session import BitPackage, Phase, Session, Status, run_key_exchange
from .kernel import backend

__all__ = [
    "Evaluation", "KeyMaterial", "Role", "TieBreak", "TpmParams", "clip_weight", "evaluate", "extract_key",
    "hebbian_update", "init_weights", "overlap", "SharedInputGenerator", "next_bit", "next_input",
    "seed_generator", "BitPackage", "Phase", "Session", "Status", "run_key_exchange", "backend",
]
