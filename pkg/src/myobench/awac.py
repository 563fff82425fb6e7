"""Offline-RL fine-tuning of the movement decoder.

Episodic replay buffer with one-time reward-conditioned action
randomization, twin Q critics with Polyak-averaged targets, advantage
weighted actor updates (weights exp(A/lambda), clipped), and model
selection by simulating the song on the recorded data every few gradient
steps.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import game, movements, persist
from .nn import Adam, Mlp, polyak_update
from .policy import PolicyNet

BUFFER_SCHEMA = 1


@dataclass(frozen=True)
class AwacConfig:
    gamma: float = 0.8935
    lam: float = 0.95
    batch_size: int = 512
    policy_lr: float = 9.844e-4
    q_lr: float = 7.627e-4
    policy_weight_decay: float = 1e-4
    q_weight_decay: float = 0.0
    tau: float = 8.948e-3
    actor_interval: int = 4
    advantage_samples: int = 1
    n_step: int = 1
    epsilon: float = 0.9
    gradient_steps: int = 2000
    eval_interval: int = 10
    exp_adv_clip: float = 20.0
    reward_scale: float = 1.0
    critic_hidden: tuple[int, ...] = (256, 256)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        for name in ("lam", "batch_size", "policy_lr", "q_lr", "tau",
                     "actor_interval", "gradient_steps", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: int
    next_state: np.ndarray
    done: bool
    ideal: np.ndarray
    repetition: int


@dataclass
class Episode:
    """One played song: per-tick arrays plus the repetition tag."""

    states: np.ndarray  # (T, 32)
    actions: np.ndarray  # (T, 7)
    rewards: np.ndarray  # (T,)
    ideals: np.ndarray  # (T, 7)
    repetition: int

    def __post_init__(self):
        t = self.states.shape[0]
        if not (self.actions.shape[0] == self.rewards.shape[0] == self.ideals.shape[0] == t):
            raise ValueError("episode arrays disagree on length")

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def next_states(self) -> np.ndarray:
        nxt = np.roll(self.states, -1, axis=0)
        nxt[-1] = self.states[-1]
        return nxt

    def dones(self) -> np.ndarray:
        d = np.zeros(self.length)
        d[-1] = 1.0
        return d

    @classmethod
    def from_session(cls, session: game.GameSession, repetition: int) -> "Episode":
        arrays = session.log.as_arrays()
        return cls(
            states=arrays["states"],
            actions=arrays["actions"],
            rewards=arrays["rewards"],
            ideals=arrays["ideals"],
            repetition=repetition,
        )


def augment_episode(episode: Episode, epsilon: float, rng: np.random.Generator) -> Episode:
    """Randomize negative-reward actions with probability epsilon.

    Selected ticks get a uniformly random movement and a freshly computed
    reward against the stored ideal; zero/positive ticks are untouched.
    """
    actions = episode.actions.copy()
    rewards = episode.rewards.copy()
    neg = np.flatnonzero(rewards == -1)
    if neg.size and epsilon > 0:
        triggered = neg[rng.random(neg.size) < epsilon]
        if triggered.size:
            ids = rng.integers(0, movements.N_MOVEMENTS, size=triggered.size)
            actions[triggered] = movements.all_encodings()[ids]
            rewards[triggered] = game.reward_vector(
                actions[triggered], episode.ideals[triggered]
            )
    return replace(episode, actions=actions, rewards=rewards)


class ReplayBuffer:
    """Append-only store of gameplay episodes, cumulative across repetitions."""

    def __init__(self):
        self.episodes: list[Episode] = []
        self._flat: dict | None = None

    def __len__(self) -> int:
        return sum(ep.length for ep in self.episodes)

    def append(self, episode: Episode, epsilon: float = 0.0,
               rng: np.random.Generator | None = None) -> Episode:
        """Augment (once) and store an episode; returns the stored version."""
        if epsilon > 0:
            if rng is None:
                raise ValueError("augmentation needs an rng")
            episode = augment_episode(episode, epsilon, rng)
        self.episodes.append(episode)
        self._flat = None
        return episode

    def _flatten(self) -> dict:
        if self._flat is None:
            self._flat = {
                "states": np.concatenate([ep.states for ep in self.episodes]),
                "actions": np.concatenate([ep.actions for ep in self.episodes]),
                "rewards": np.concatenate([ep.rewards for ep in self.episodes]).astype(float),
                "next_states": np.concatenate([ep.next_states() for ep in self.episodes]),
                "dones": np.concatenate([ep.dones() for ep in self.episodes]),
            }
        return self._flat

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if not self.episodes:
            raise ValueError("empty buffer")
        flat = self._flatten()
        idx = rng.integers(0, flat["states"].shape[0], size=batch_size)
        return {key: val[idx] for key, val in flat.items()}

    def save_jsonl(self, path) -> None:
        records = [{"schema": BUFFER_SCHEMA, "kind": "replay_buffer"}]
        for ep in self.episodes:
            for t in range(ep.length):
                records.append(
                    {
                        "t": t,
                        "repetition": ep.repetition,
                        "state": [float(v) for v in ep.states[t]],
                        "action": [int(v) for v in ep.actions[t]],
                        "reward": int(ep.rewards[t]),
                        "ideal": [int(v) for v in ep.ideals[t]],
                        "done": bool(t == ep.length - 1),
                    }
                )
        persist.write_jsonl(path, records)

    @classmethod
    def load_jsonl(cls, path) -> "ReplayBuffer":
        records = persist.read_jsonl(path)
        header = records[0]
        if header.get("kind") != "replay_buffer":
            raise ValueError("not a replay buffer file")
        buf = cls()
        per_rep: dict[int, list] = {}
        for rec in records[1:]:
            per_rep.setdefault(rec["repetition"], []).append(rec)
        for rep in sorted(per_rep):
            rows = sorted(per_rep[rep], key=lambda r: r["t"])
            buf.episodes.append(
                Episode(
                    states=np.array([r["state"] for r in rows], dtype=float),
                    actions=np.array([r["action"] for r in rows], dtype=np.uint8),
                    rewards=np.array([r["reward"] for r in rows], dtype=int),
                    ideals=np.array([r["ideal"] for r in rows], dtype=np.uint8),
                    repetition=rep,
                )
            )
        return buf


# ---------------------------------------------------------------------------
# critics


class CriticPair:
    """Two Q networks over (standardized state, action) with Polyak targets."""

    def __init__(self, standardizer, hidden=(256, 256), rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        in_dim = 32 + movements.VECTOR_BITS
        self.standardizer = standardizer
        self.q1 = Mlp((in_dim, *hidden, 1), output="linear", rng=rng, dtype=dtype)
        self.q2 = Mlp((in_dim, *hidden, 1), output="linear", rng=rng, dtype=dtype)
        self.t1 = self.q1.copy()
        self.t2 = self.q2.copy()

    def inputs(self, states, actions) -> np.ndarray:
        s = self.standardizer.transform(np.atleast_2d(states))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        return np.concatenate([s, a], axis=1)

    def q_min(self, states, actions) -> np.ndarray:
        x = self.inputs(states, actions)
        return np.minimum(self.q1.forward(x), self.q2.forward(x)).ravel()

    def target_q_min(self, states, actions) -> np.ndarray:
        x = self.inputs(states, actions)
        return np.minimum(self.t1.forward(x), self.t2.forward(x)).ravel()

    def polyak(self, tau: float) -> None:
        polyak_update(self.t1.parameters(), self.q1.parameters(), tau)
        polyak_update(self.t2.parameters(), self.q2.parameters(), tau)


def critic_loss_and_grads(net: Mlp, inputs: np.ndarray, targets: np.ndarray):
    """Mean squared TD error of one critic against fixed targets."""
    q, cache = net.forward_cached(inputs)
    err = q.ravel() - targets
    loss = float(np.mean(err**2))
    grad_out = (2.0 * err / err.size)[:, None]
    grads, _ = net.backward(cache, grad_out)
    return loss, grads


def critic_update(
    batch: dict,
    critics: CriticPair,
    policy: PolicyNet,
    config: AwacConfig,
    rng: np.random.Generator,
    opt1: Adam,
    opt2: Adam,
) -> float:
    """One TD(1-step) regression step for both critics, plus Polyak."""
    next_actions = policy.sample(batch["next_states"], rng)
    target_q = critics.target_q_min(batch["next_states"], next_actions)
    y = batch["rewards"] * config.reward_scale + config.gamma * (1.0 - batch["dones"]) * target_q
    x = critics.inputs(batch["states"], batch["actions"])
    loss1, grads1 = critic_loss_and_grads(critics.q1, x, y)
    opt1.step(critics.q1.parameters(), grads1)
    loss2, grads2 = critic_loss_and_grads(critics.q2, x, y)
    opt2.step(critics.q2.parameters(), grads2)
    critics.polyak(config.tau)
    return 0.5 * (loss1 + loss2)


def advantage_weights(
    batch: dict,
    critics: CriticPair,
    policy: PolicyNet,
    config: AwacConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """exp(A/lambda) with A = minQ(s,a) - mean_k minQ(s, a~pi), clipped."""
    q_data = critics.q_min(batch["states"], batch["actions"])
    baseline = np.zeros_like(q_data)
    for _ in range(config.advantage_samples):
        sampled = policy.sample(batch["states"], rng)
        baseline += critics.q_min(batch["states"], sampled)
    baseline /= config.advantage_samples
    advantage = q_data - baseline
    return np.exp(np.minimum(advantage / config.lam, config.exp_adv_clip))


def actor_update(
    batch: dict,
    critics: CriticPair,
    policy: PolicyNet,
    config: AwacConfig,
    rng: np.random.Generator,
    opt: Adam,
) -> tuple[float, float]:
    """Advantage-weighted log-likelihood ascent on the batch actions."""
    weights = advantage_weights(batch, critics, policy, config, rng)
    loss, grads = policy.weighted_log_prob_loss_and_grads(
        batch["states"], batch["actions"], weights
    )
    opt.step(policy.net.parameters(), grads)
    return loss, float(weights.mean())


# ---------------------------------------------------------------------------
# offline evaluation and per-repetition fine-tuning


def simulate_song(policy: PolicyNet, states: np.ndarray, ideals: np.ndarray) -> int:
    """Undiscounted return of re-predicting a recorded episode."""
    if states.shape[0] != ideals.shape[0]:
        raise ValueError("states and ideals disagree on length")
    preds = policy.predict(states)
    return int(game.reward_vector(preds, ideals).sum())


@dataclass
class FinetuneHistory:
    steps: list[int] = field(default_factory=list)
    td_loss: list[float] = field(default_factory=list)
    actor_loss: list[float | None] = field(default_factory=list)
    mean_weight: list[float | None] = field(default_factory=list)
    sim_return: list[float | None] = field(default_factory=list)
    best_step: int = 0
    best_return: float = -np.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "td_loss", "actor_loss", "mean_weight", "sim_return"])
            for i, step in enumerate(self.steps):
                writer.writerow(
                    [
                        step,
                        repr(self.td_loss[i]),
                        "" if self.actor_loss[i] is None else repr(self.actor_loss[i]),
                        "" if self.mean_weight[i] is None else repr(self.mean_weight[i]),
                        "" if self.sim_return[i] is None else repr(self.sim_return[i]),
                    ]
                )


def finetune_repetition(
    buffer: ReplayBuffer,
    start_policy: PolicyNet,
    config: AwacConfig,
    seed: int = 0,
) -> tuple[PolicyNet, FinetuneHistory]:
    """Run one repetition of AWAC training and return the best snapshot.

    Critics start fresh; the actor starts from ``start_policy``.  Every
    ``eval_interval`` steps the song is re-simulated over every recorded
    episode, and the snapshot with the highest summed return wins.  The
    incoming policy participates as the step-0 snapshot, so the selected
    policy never regresses under the selection metric.
    """
    if not buffer.episodes:
        raise ValueError("empty buffer")
    rng = np.random.default_rng([seed, 151])
    policy = start_policy.copy()
    dtype = policy.net.dtype
    critics = CriticPair(
        policy.standardizer, hidden=config.critic_hidden, rng=rng, dtype=dtype
    )
    opt_q1 = Adam(critics.q1.parameters(), lr=config.q_lr, weight_decay=config.q_weight_decay)
    opt_q2 = Adam(critics.q2.parameters(), lr=config.q_lr, weight_decay=config.q_weight_decay)
    opt_pi = Adam(
        policy.net.parameters(), lr=config.policy_lr, weight_decay=config.policy_weight_decay
    )

    eval_states = np.concatenate([ep.states for ep in buffer.episodes])
    eval_ideals = np.concatenate([ep.ideals for ep in buffer.episodes])

    history = FinetuneHistory()
    best_params = [p.copy() for p in policy.net.parameters()]
    history.best_return = float(simulate_song(policy, eval_states, eval_ideals))
    history.best_step = 0

    for step in range(1, config.gradient_steps + 1):
        batch = buffer.sample(config.batch_size, rng)
        td = critic_update(batch, critics, policy, config, rng, opt_q1, opt_q2)
        a_loss = mean_w = None
        if step % config.actor_interval == 0:
            a_loss, mean_w = actor_update(batch, critics, policy, config, rng, opt_pi)
        sim = None
        if step % config.eval_interval == 0:
            sim = float(simulate_song(policy, eval_states, eval_ideals))
            if sim > history.best_return:
                history.best_return = sim
                history.best_step = step
                best_params = [p.copy() for p in policy.net.parameters()]
        history.steps.append(step)
        history.td_loss.append(td)
        history.actor_loss.append(a_loss)
        history.mean_weight.append(mean_w)
        history.sim_return.append(sim)

    best = policy.copy()
    best.net.load_parameters(best_params)
    return best, history
