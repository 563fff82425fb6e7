"""Movement taxonomy and the 7-bit multi-label action encoding.

13 movement identities: rest, six single-DOF finger movements
(thumb/index/middle x extend/flex) and six congruent multi-DOF
combinations (no mixed flex+extend).  Actions are 7-bit vectors ordered
[thumb_ext, thumb_flex, index_ext, index_flex, middle_ext, middle_flex,
rest].  Arbitrary 7-bit vectors are representable (a decoder may emit
any of the 128 patterns) but only 13 of them are canonical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

N_MOVEMENTS = 13
VECTOR_BITS = 7
REST_ID = 0
REST_BIT = 6

DOF_NAMES = ("thumb", "index", "middle")

BIT_NAMES = (
    "thumb_ext",
    "thumb_flex",
    "index_ext",
    "index_flex",
    "middle_ext",
    "middle_flex",
    "rest",
)

MOVEMENT_NAMES = (
    "rest",
    "thumb_ext",
    "thumb_flex",
    "index_ext",
    "index_flex",
    "middle_ext",
    "middle_flex",
    "thumb_index_ext",
    "thumb_index_flex",
    "index_middle_ext",
    "index_middle_flex",
    "thumb_index_middle_ext",
    "thumb_index_middle_flex",
)

# Canonical encodings, row i = movement id i.
_ENCODING = np.array(
    [
        [0, 0, 0, 0, 0, 0, 1],  # rest
        [1, 0, 0, 0, 0, 0, 0],  # thumb ext
        [0, 1, 0, 0, 0, 0, 0],  # thumb flex
        [0, 0, 1, 0, 0, 0, 0],  # index ext
        [0, 0, 0, 1, 0, 0, 0],  # index flex
        [0, 0, 0, 0, 1, 0, 0],  # middle ext
        [0, 0, 0, 0, 0, 1, 0],  # middle flex
        [1, 0, 1, 0, 0, 0, 0],  # thumb+index ext
        [0, 1, 0, 1, 0, 0, 0],  # thumb+index flex
        [0, 0, 1, 0, 1, 0, 0],  # index+middle ext
        [0, 0, 0, 1, 0, 1, 0],  # index+middle flex
        [1, 0, 1, 0, 1, 0, 0],  # thumb+index+middle ext
        [0, 1, 0, 1, 0, 1, 0],  # thumb+index+middle flex
    ],
    dtype=np.uint8,
)

_DECODING = {row.tobytes(): i for i, row in enumerate(_ENCODING)}


@dataclass(frozen=True)
class NonCanonical:
    """A 7-bit vector outside the taxonomy, with its per-DOF reading.

    ``dof_states`` maps each DOF to one of "ext", "flex", "idle" or
    "conflict" (both directions set).  ``rest_conflict`` is True when the
    rest bit is set together with at least one movement bit.
    """

    bits: tuple[int, ...]
    dof_states: tuple[tuple[str, str], ...]
    rest_conflict: bool


def encode(movement_id: int) -> np.ndarray:
    """Canonical 7-bit vector for a movement id."""
    if not 0 <= movement_id < N_MOVEMENTS:
        raise ValueError(f"movement id out of range [0, 12]: {movement_id}")
    return _ENCODING[movement_id].copy()


def all_encodings() -> np.ndarray:
    """All 13 canonical vectors, row i = movement id i."""
    return _ENCODING.copy()


def decode(vector) -> int | NonCanonical:
    """Inverse of :func:`encode`; non-canonical vectors come back annotated."""
    bits = np.asarray(vector, dtype=np.uint8).reshape(-1)
    if bits.shape != (VECTOR_BITS,):
        raise ValueError(f"expected 7 bits, got shape {bits.shape}")
    movement_id = _DECODING.get(bits.tobytes())
    if movement_id is not None:
        return movement_id

    states = []
    for d, dof in enumerate(DOF_NAMES):
        ext, flex = bits[2 * d], bits[2 * d + 1]
        if ext and flex:
            state = "conflict"
        elif ext:
            state = "ext"
        elif flex:
            state = "flex"
        else:
            state = "idle"
        states.append((dof, state))
    rest_conflict = bool(bits[REST_BIT]) and bool(bits[:REST_BIT].any())
    return NonCanonical(tuple(int(b) for b in bits), tuple(states), rest_conflict)


def is_canonical(vector) -> bool:
    bits = np.asarray(vector, dtype=np.uint8).reshape(-1)
    return bits.tobytes() in _DECODING


def is_rest(vector) -> bool:
    """True only for the canonical rest vector."""
    bits = np.asarray(vector, dtype=np.uint8).reshape(-1)
    return bits.tobytes() == _ENCODING[REST_ID].tobytes()


def uniform_random_movement(rng: np.random.Generator) -> int:
    """Uniform draw over all 13 movement ids."""
    return int(rng.integers(0, N_MOVEMENTS))


def movement_table() -> list[dict]:
    """Movement table for the UI and reports."""
    return [
        {"id": i, "name": MOVEMENT_NAMES[i], "bits": [int(b) for b in _ENCODING[i]]}
        for i in range(N_MOVEMENTS)
    ]


def movement_table_json() -> str:
    return json.dumps(movement_table(), indent=2)
