"""Rhythm-game environment: note charts, 20 Hz episodes, rewards, scoring.

A chart holds 48 notes (each of the 12 non-rest movements at each of the
four durations), filling 60 s of a 137 s episode; the remaining 77 s is
rest, distributed as gaps of at least 0.25 s.  Ticks are 50 ms, half-open
intervals snapped to the tick grid, giving 2740 ticks per episode.  A step
earns +1 for matching a non-rest target, 0 for matching rest and -1
otherwise; the display score accumulates only the positive rewards so it
never decreases.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import movements

TICK_HZ = 20
TICK_S = 0.05
EPISODE_S = 137.0
EPISODE_TICKS = 2740
NOTE_TIME_S = 60.0
NOTE_DURATIONS_S = (0.5, 1.0, 1.5, 2.0)
MIN_GAP_S = 0.25
ORACLE_RETURN = 1200
MIN_RETURN = -2740
RETURN_SPAN = 3940
IDEAL_ACTION_CHANGES = 96

CHART_SCHEMA = 1


@dataclass(frozen=True)
class Note:
    movement: int  # 1..12, never rest
    start_s: float
    duration_s: float


@dataclass(frozen=True)
class NoteChart:
    seed: int
    notes: tuple[Note, ...]
    ideal_ids: np.ndarray  # (EPISODE_TICKS,) movement id per tick

    def ideal_id(self, tick: int) -> int:
        if not 0 <= tick < EPISODE_TICKS:
            raise ValueError(f"tick out of range [0, {EPISODE_TICKS}): {tick}")
        return int(self.ideal_ids[tick])

    def ideal_action(self, tick: int) -> np.ndarray:
        return movements.encode(self.ideal_id(tick))

    def ideal_action_sequence(self) -> np.ndarray:
        """(EPISODE_TICKS, 7) canonical target per tick."""
        return movements.all_encodings()[self.ideal_ids]

    def note_ticks(self) -> int:
        return int(np.sum(self.ideal_ids != movements.REST_ID))

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": CHART_SCHEMA,
                "seed": self.seed,
                "notes": [
                    {"movement": n.movement, "start_s": n.start_s, "duration_s": n.duration_s}
                    for n in self.notes
                ],
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "NoteChart":
        data = json.loads(text)
        notes = tuple(
            Note(movement=n["movement"], start_s=n["start_s"], duration_s=n["duration_s"])
            for n in data["notes"]
        )
        return cls(seed=data["seed"], notes=notes, ideal_ids=_ideal_ids_from_notes(notes))


def _ideal_ids_from_notes(notes) -> np.ndarray:
    ids = np.full(EPISODE_TICKS, movements.REST_ID, dtype=int)
    for note in notes:
        start = int(round(note.start_s * TICK_HZ))
        length = int(round(note.duration_s * TICK_HZ))
        if ids[start : start + length].any():
            raise ValueError("overlapping notes")
        ids[start : start + length] = note.movement
    return ids


def build_chart(seed: int) -> NoteChart:
    """48 shuffled (movement, duration) notes with seeded rest gaps.

    Gaps (one before each note plus a trailing one) get at least 0.25 s
    each; the remaining rest time is split by a Dirichlet draw and rounded
    to the tick grid with largest remainders so the total is exact.
    """
    rng = np.random.default_rng(seed)
    pairs = [
        (m, d)
        for m in range(1, movements.N_MOVEMENTS)
        for d in NOTE_DURATIONS_S
    ]
    order = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in order]

    n_gaps = len(pairs) + 1
    total_gap_ticks = int(round((EPISODE_S - NOTE_TIME_S) * TICK_HZ))
    min_gap_ticks = int(round(MIN_GAP_S * TICK_HZ))
    spare = total_gap_ticks - n_gaps * min_gap_ticks
    if spare < 0:
        raise ValueError("cannot fit minimum gaps into the episode")
    weights = rng.dirichlet(np.ones(n_gaps))
    raw = weights * spare
    base = np.floor(raw).astype(int)
    remainder = spare - int(base.sum())
    # Largest fractional remainders get the leftover ticks (stable order).
    frac_order = np.argsort(-(raw - base), kind="stable")
    base[frac_order[:remainder]] += 1
    gap_ticks = base + min_gap_ticks

    notes = []
    tick = 0
    for (movement, duration), gap in zip(pairs, gap_ticks[:-1]):
        tick += int(gap)
        notes.append(Note(movement=movement, start_s=tick * TICK_S, duration_s=duration))
        tick += int(round(duration * TICK_HZ))
    tick += int(gap_ticks[-1])
    assert tick == EPISODE_TICKS, f"chart layout drifted: {tick} ticks"

    notes = tuple(notes)
    return NoteChart(seed=seed, notes=notes, ideal_ids=_ideal_ids_from_notes(notes))


# ---------------------------------------------------------------------------
# rewards


def reward(action, ideal) -> int:
    """+1 exact non-rest match, 0 exact rest match, -1 otherwise."""
    a = np.asarray(action, dtype=np.uint8)
    b = np.asarray(ideal, dtype=np.uint8)
    if not np.array_equal(a, b):
        return -1
    return 0 if movements.is_rest(b) else 1


def reward_vector(actions, ideals) -> np.ndarray:
    """Vectorized rewards for (n, 7) action/ideal arrays."""
    a = np.asarray(actions, dtype=np.uint8)
    b = np.asarray(ideals, dtype=np.uint8)
    equal = np.all(a == b, axis=-1)
    rest = b[..., movements.REST_BIT].astype(bool) & (
        b[..., : movements.REST_BIT].sum(axis=-1) == 0
    )
    return np.where(equal, np.where(rest, 0, 1), -1).astype(int)


def normalized_return(g0: float) -> float:
    """Map an episode return from [-2740, 1200] onto [0, 1]."""
    if not MIN_RETURN <= g0 <= ORACLE_RETURN:
        raise ValueError(f"return {g0} outside [{MIN_RETURN}, {ORACLE_RETURN}]")
    return (g0 - MIN_RETURN) / RETURN_SPAN


# ---------------------------------------------------------------------------
# episode session


class EpisodeOverError(RuntimeError):
    """step() called after the final tick."""


@dataclass
class EpisodeLog:
    """Per-tick record of one played episode."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    ideals: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    def as_arrays(self) -> dict:
        states = [s if s is not None else np.full(32, np.nan) for s in self.states]
        return {
            "states": np.asarray(states, dtype=float),
            "actions": np.asarray(self.actions, dtype=np.uint8),
            "ideals": np.asarray(self.ideals, dtype=np.uint8),
            "rewards": np.asarray(self.rewards, dtype=int),
            "scores": np.asarray(self.scores, dtype=int),
        }

    def total_return(self) -> int:
        return int(sum(self.rewards))


class GameSession:
    """Sequential 20 Hz episode state machine with per-tick logging."""

    def __init__(self, chart: NoteChart):
        self.chart = chart
        self.tick = 0
        self.score = 0
        self.log = EpisodeLog()

    @property
    def done(self) -> bool:
        return self.tick >= EPISODE_TICKS

    def ideal_now(self) -> np.ndarray:
        if self.done:
            raise EpisodeOverError("episode finished")
        return self.chart.ideal_action(self.tick)

    def step(self, action, features=None) -> tuple[int, int, int]:
        """Advance one tick with the given action.

        Returns (reward, display_score, tick_index).  ``features`` is the
        state the action was decoded from; it is stored in the log.
        """
        if self.done:
            raise EpisodeOverError("episode finished")
        ideal = self.chart.ideal_action(self.tick)
        r = reward(action, ideal)
        self.score += max(0, r)
        self.log.states.append(None if features is None else np.asarray(features, dtype=float))
        self.log.actions.append(np.asarray(action, dtype=np.uint8))
        self.log.ideals.append(ideal)
        self.log.rewards.append(r)
        self.log.scores.append(self.score)
        t = self.tick
        self.tick += 1
        return r, self.score, t


def play_episode(chart: NoteChart, states: np.ndarray, actions: np.ndarray) -> GameSession:
    """Run a full episode from precomputed per-tick states and actions."""
    if len(actions) != EPISODE_TICKS:
        raise ValueError(f"need {EPISODE_TICKS} actions, got {len(actions)}")
    session = GameSession(chart)
    for t in range(EPISODE_TICKS):
        session.step(actions[t], None if states is None else states[t])
    return session
