"""Synthetic subject: the human side of the decoding loop.

A profile holds one 32-dim feature prototype per movement, built from a
channel-activation table (each elementary movement excites two or three of
the eight channels; combinations superpose).  Knobs control consistency
(noise scale), mistake rate (wrong movement executed), slow drift of the
prototypes across repetitions and adaptation (noise and mistakes shrink as
the subject practices).  Noise and drift are expressed relative to the
per-coordinate spread of the prototypes, so the knobs stay dimensionless.

The same profile backs the live human adapter: keyboard chords map to
intended movements and are rendered through the identical feature path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import movements, sigproc

N_CHANNELS = 8
FEATURE_DIM = 32
COUNT_MAX = 199  # ZC/SLPCH cannot exceed window length - 1

REST_BASELINE = 0.06
TWL_FACTOR = 40.0
ZC_BASE, ZC_SPAN = 60.0, 55.0
SLPCH_BASE, SLPCH_SPAN = 90.0, 45.0

# Channel activation per elementary movement (rows: thumb/index/middle x
# ext/flex).  Each movement drives one primary and one shared channel.
_ELEMENTARY_ACTIVATION = np.array(
    [
        # ch0   ch1   ch2   ch3   ch4   ch5   ch6   ch7
        [1.00, 0.50, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],  # thumb ext
        [0.00, 0.00, 1.00, 0.50, 0.00, 0.00, 0.00, 0.00],  # thumb flex
        [0.00, 0.40, 0.00, 0.00, 1.00, 0.00, 0.00, 0.00],  # index ext
        [0.00, 0.00, 0.00, 0.40, 0.00, 1.00, 0.00, 0.00],  # index flex
        [0.00, 0.30, 0.00, 0.00, 0.35, 0.00, 1.00, 0.00],  # middle ext
        [0.00, 0.00, 0.00, 0.30, 0.00, 0.35, 0.00, 1.00],  # middle flex
    ]
)

_COUNT_COLS = np.array([j for j in range(FEATURE_DIM) if j % 4 in (2, 3)])
_AMPLITUDE_COLS = np.array([j for j in range(FEATURE_DIM) if j % 4 in (0, 1)])


def channel_activations(movement_id: int) -> np.ndarray:
    """Per-channel activation amplitude for a movement (rest = baseline)."""
    bits = movements.encode(movement_id)[: 2 * len(movements.DOF_NAMES)]
    active = _ELEMENTARY_ACTIVATION[bits.astype(bool)]
    return REST_BASELINE + (active.sum(axis=0) if active.size else np.zeros(N_CHANNELS))


def _prototype(movement_id: int) -> np.ndarray:
    act = channel_activations(movement_id)
    proto = np.empty(FEATURE_DIM)
    for ch in range(N_CHANNELS):
        a = act[ch]
        proto[4 * ch + 0] = a  # MAV
        proto[4 * ch + 1] = a * TWL_FACTOR  # TWL
        proto[4 * ch + 2] = ZC_BASE + ZC_SPAN * np.tanh(a)  # ZC
        proto[4 * ch + 3] = SLPCH_BASE + SLPCH_SPAN * np.tanh(a)  # SLPCH
    return proto


def base_prototypes() -> np.ndarray:
    return np.stack([_prototype(i) for i in range(movements.N_MOVEMENTS)])


@dataclass(frozen=True)
class IntentionEvent:
    intended: int
    executed: int
    tick: int = 0


@dataclass(frozen=True)
class SubjectProfile:
    """Feature-emitting synthetic subject; immutable, evolved functionally."""

    prototypes: np.ndarray  # (13, 32)
    noise_scale: float
    error_rate: float
    drift_rate: float
    adaptation_rate: float
    drift_decay: float
    seed: int
    feature_scale: np.ndarray  # (32,) fixed spread used by noise and drift


def _validate_prototypes(prototypes: np.ndarray) -> None:
    """Construction-time invariants; drifted profiles may leave them."""
    norms = np.linalg.norm(prototypes, axis=1)
    if np.argmin(norms) != movements.REST_ID:
        raise ValueError("rest prototype must have the smallest norm")
    for i in range(movements.N_MOVEMENTS):
        for j in range(i + 1, movements.N_MOVEMENTS):
            if np.allclose(prototypes[i], prototypes[j]):
                raise ValueError(f"prototypes {i} and {j} coincide")


def make_profile(
    noise_scale: float = 0.0,
    error_rate: float = 0.0,
    drift_rate: float = 0.0,
    adaptation_rate: float = 0.0,
    drift_decay: float = 0.5,
    seed: int = 0,
) -> SubjectProfile:
    protos = base_prototypes()
    _validate_prototypes(protos)
    scale = np.maximum(protos.std(axis=0), 1e-3)
    return SubjectProfile(
        prototypes=protos,
        noise_scale=float(noise_scale),
        error_rate=float(error_rate),
        drift_rate=float(drift_rate),
        adaptation_rate=float(adaptation_rate),
        drift_decay=float(drift_decay),
        seed=int(seed),
        feature_scale=scale,
    )


def profile_to_json(profile: SubjectProfile) -> str:
    return json.dumps(
        {
            "noise_scale": profile.noise_scale,
            "error_rate": profile.error_rate,
            "drift_rate": profile.drift_rate,
            "adaptation_rate": profile.adaptation_rate,
            "drift_decay": profile.drift_decay,
            "seed": profile.seed,
        },
        sort_keys=True,
        indent=2,
    )


def profile_from_json(text: str) -> SubjectProfile:
    return make_profile(**json.loads(text))


# ---------------------------------------------------------------------------
# feature emission


def _finalize_features(raw: np.ndarray) -> np.ndarray:
    """Clamp amplitudes at zero, round and clamp the count features."""
    out = raw.copy()
    amp = out[..., _AMPLITUDE_COLS]
    out[..., _AMPLITUDE_COLS] = np.maximum(amp, 0.0)
    counts = np.rint(out[..., _COUNT_COLS])
    out[..., _COUNT_COLS] = np.clip(counts, 0, COUNT_MAX)
    return out


def emit_features(profile: SubjectProfile, executed: int, rng: np.random.Generator) -> np.ndarray:
    """One feature state for an executed movement."""
    if not 0 <= executed < movements.N_MOVEMENTS:
        raise ValueError(f"movement id out of range: {executed}")
    if profile.noise_scale == 0:
        return profile.prototypes[executed].copy()
    raw = profile.prototypes[executed] + profile.noise_scale * profile.feature_scale * (
        rng.standard_normal(FEATURE_DIM)
    )
    return _finalize_features(raw)


def emit_features_batch(
    profile: SubjectProfile, executed_ids, rng: np.random.Generator
) -> np.ndarray:
    """Feature states for a sequence of executed movements, one per tick."""
    ids = np.asarray(executed_ids, dtype=int)
    raw = profile.prototypes[ids]
    if profile.noise_scale == 0:
        return raw.copy()
    raw = raw + profile.noise_scale * profile.feature_scale * rng.standard_normal(
        (ids.size, FEATURE_DIM)
    )
    return _finalize_features(raw)


def execute_intention(
    profile: SubjectProfile, intended: int, rng: np.random.Generator, tick: int = 0
) -> IntentionEvent:
    """The subject attempts a movement; sometimes a wrong one comes out."""
    executed = intended
    if profile.error_rate > 0 and rng.random() < profile.error_rate:
        draw = int(rng.integers(0, movements.N_MOVEMENTS - 1))
        executed = draw + (draw >= intended)
    return IntentionEvent(intended=intended, executed=executed, tick=tick)


def execute_intentions_batch(
    profile: SubjectProfile, intended_ids, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized intention execution for a whole episode."""
    intended = np.asarray(intended_ids, dtype=int)
    executed = intended.copy()
    if profile.error_rate > 0:
        wrong = rng.random(intended.size) < profile.error_rate
        draws = rng.integers(0, movements.N_MOVEMENTS - 1, size=intended.size)
        substituted = draws + (draws >= intended)
        executed[wrong] = substituted[wrong]
    return executed


def evolve(profile: SubjectProfile, repetition: int) -> SubjectProfile:
    """Profile state before gameplay repetition ``repetition`` (1-based).

    Prototypes shift by a seeded random unit direction whose magnitude
    decays geometrically with the repetition index; noise and mistake rate
    shrink by the adaptation rate.  All rates zero -> identity.
    """
    if repetition < 1:
        raise ValueError("repetition must be >= 1")
    protos = profile.prototypes
    if profile.drift_rate > 0:
        rng = np.random.default_rng([profile.seed, 7919, repetition])
        decay = profile.drift_decay ** (repetition - 1)
        direction = rng.standard_normal(protos.shape)
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        protos = protos + profile.drift_rate * decay * profile.feature_scale * direction
    shrink = 1.0 - profile.adaptation_rate
    return replace(
        profile,
        prototypes=protos,
        noise_scale=profile.noise_scale * shrink,
        error_rate=profile.error_rate * shrink,
    )


def scale_contraction(profile: SubjectProfile, factor: float) -> SubjectProfile:
    """Scale the amplitude features (MAV/TWL) by a contraction level."""
    protos = profile.prototypes.copy()
    protos[:, _AMPLITUDE_COLS] *= factor
    return replace(profile, prototypes=protos)


# ---------------------------------------------------------------------------
# raw EMG emission


def emit_raw(
    profile: SubjectProfile, executed: int, duration_ms: int, rng: np.random.Generator
) -> np.ndarray:
    """(duration_ms, 8) of zero-mean band-limited noise at 1 kHz.

    Per-channel amplitude follows the movement's activation template, so
    running the stream through the signal chain reproduces the template's
    MAV ordering.
    """
    if duration_ms < sigproc.WINDOW_MS:
        raise ValueError(f"duration must cover a window ({sigproc.WINDOW_MS} ms)")
    amp = channel_activations(executed)
    white = rng.standard_normal((duration_ms + 2, N_CHANNELS))
    # Mild 3-tap smoothing band-limits the white noise.
    smoothed = 0.25 * white[:-2] + 0.5 * white[1:-1] + 0.25 * white[2:]
    return smoothed * amp


# ---------------------------------------------------------------------------
# live human adapter


DEFAULT_KEYMAP = {
    "q": 0,  # thumb ext
    "a": 1,  # thumb flex
    "w": 2,  # index ext
    "s": 3,  # index flex
    "e": 4,  # middle ext
    "d": 5,  # middle flex
}


class HumanAdapter:
    """Maps keyboard chords to intentions and renders them as features.

    Conflicting keys on one DOF cancel out; chords outside the taxonomy
    fall back to rest.  The feature path is the same one the synthetic
    subject uses, so a live session keeps the decoding problem intact.
    """

    def __init__(self, profile: SubjectProfile, keymap: dict[str, int] | None = None):
        self.profile = profile
        self.keymap = dict(keymap or DEFAULT_KEYMAP)

    def intention_from_keys(self, keys) -> int:
        bits = np.zeros(movements.VECTOR_BITS, dtype=np.uint8)
        for key in keys:
            bit = self.keymap.get(str(key).lower())
            if bit is not None:
                bits[bit] = 1
        for dof in range(len(movements.DOF_NAMES)):
            if bits[2 * dof] and bits[2 * dof + 1]:
                bits[2 * dof] = bits[2 * dof + 1] = 0
        if not bits[: movements.REST_BIT].any():
            return movements.REST_ID
        bits[movements.REST_BIT] = 0
        decoded = movements.decode(bits)
        return decoded if isinstance(decoded, int) else movements.REST_ID

    def emit(self, keys, rng: np.random.Generator, tick: int = 0):
        """(IntentionEvent, feature state) for the current chord."""
        intended = self.intention_from_keys(keys)
        event = execute_intention(self.profile, intended, rng, tick=tick)
        return event, emit_features(self.profile, event.executed, rng)
