"""The actor: a small fully-connected multi-label movement decoder.

32 standardized features -> 6 hidden ReLU layers of 128 units -> 7 sigmoid
outputs, one per movement bit.  Supports deterministic rounding to actions,
factorized Bernoulli log-probabilities for the RL fine-tuner, RMSE training
with hand-computed gradients, and supervised pretraining with per-epoch
validation-F1 model selection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, persist
from .nn import Adam, Mlp

STATE_DIM = 32
ACTION_BITS = 7
HIDDEN_LAYERS = (128,) * 6
PROB_CLAMP = 1e-6
STD_FLOOR = 1e-8

CHECKPOINT_SCHEMA = 1


@dataclass
class Standardizer:
    """Per-feature affine scaling fit once on the pretraining data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, states) -> "Standardizer":
        x = np.asarray(states, dtype=float)
        return cls(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), STD_FLOOR))

    @classmethod
    def identity(cls, dim: int = STATE_DIM) -> "Standardizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def transform(self, states) -> np.ndarray:
        return (np.asarray(states, dtype=float) - self.mean) / self.std

    def inverse_transform(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) * self.std + self.mean


class PolicyNet:
    """Sigmoid-output decoder over standardized feature states."""

    def __init__(
        self,
        standardizer: Standardizer | None = None,
        hidden: tuple[int, ...] = HIDDEN_LAYERS,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
        seed: int | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(seed if seed is not None else 0)
        self.standardizer = standardizer or Standardizer.identity()
        self.net = Mlp((STATE_DIM, *hidden, ACTION_BITS), output="sigmoid", rng=rng, dtype=dtype)
        self.seed = seed

    # -- inference ---------------------------------------------------------

    def forward(self, states) -> np.ndarray:
        """Probability 7-vector(s) in (0, 1)."""
        return self.net.forward(self._prep(states))

    def predict(self, states) -> np.ndarray:
        """Rounded actions; the 0.5 tie rounds down to 0."""
        return (self.forward(states) > 0.5).astype(np.uint8)

    def sample(self, states, rng: np.random.Generator) -> np.ndarray:
        """Bernoulli draw of each bit under the current probabilities."""
        p = self.forward(states)
        return (rng.random(p.shape) < p).astype(np.uint8)

    def log_prob(self, states, actions) -> np.ndarray:
        """Factorized Bernoulli log pi(a|s), probabilities clamped."""
        p = np.clip(self.forward(states), PROB_CLAMP, 1.0 - PROB_CLAMP)
        a = np.asarray(actions, dtype=float)
        return np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p), axis=-1)

    def _prep(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float)
        if x.shape[-1] != STATE_DIM:
            raise ValueError(f"expected {STATE_DIM}-dim states, got {x.shape}")
        return self.standardizer.transform(x)

    # -- gradients ---------------------------------------------------------

    def rmse_loss_and_grads(self, states, targets):
        """RMSE over batch and bits, with backprop gradients.

        Returns (loss, grads aligned with net.parameters()).
        """
        x = self._prep(np.atleast_2d(np.asarray(states, dtype=float)))
        t = np.atleast_2d(np.asarray(targets, dtype=float))
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        p, cache = self.net.forward_cached(x)
        err = p - t
        mse = float(np.mean(err**2))
        loss = float(np.sqrt(mse))
        if loss < 1e-12:
            return loss, [np.zeros_like(g) for g in self.net.parameters()]
        grad_out = err / (err.size * loss)
        grads, _ = self.net.backward(cache, grad_out)
        return loss, grads

    def weighted_log_prob_loss_and_grads(self, states, actions, weights):
        """Loss = -mean(w * log pi(a|s)) and its parameter gradients.

        The gradient respects the probability clamp: coordinates pinned at
        the clamp bounds contribute zero.
        """
        x = self._prep(np.atleast_2d(np.asarray(states, dtype=float)))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        w = np.asarray(weights, dtype=float).reshape(-1, 1)
        p_raw, cache = self.net.forward_cached(x)
        p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
        logp = np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p), axis=-1)
        n = x.shape[0]
        loss = float(-np.mean(w.ravel() * logp))
        inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
        dlogp_dp = np.where(inside, a / p - (1.0 - a) / (1.0 - p), 0.0)
        grad_out = -(w * dlogp_dp) / n
        grads, _ = self.net.backward(cache, grad_out)
        return loss, grads

    # -- snapshots ---------------------------------------------------------

    def copy(self) -> "PolicyNet":
        clone = PolicyNet.__new__(PolicyNet)
        clone.standardizer = Standardizer(
            mean=self.standardizer.mean.copy(), std=self.standardizer.std.copy()
        )
        clone.net = self.net.copy()
        clone.seed = self.seed
        return clone

    def params_hash(self) -> str:
        return self.net.params_hash()

    def save(self, path, provenance: dict | None = None) -> None:
        arrays = dict(self.net.state_dict())
        layer_sizes = arrays.pop("layer_sizes")
        output = arrays.pop("output")
        dtype = arrays.pop("dtype")
        arrays["standardizer_mean"] = self.standardizer.mean
        arrays["standardizer_std"] = self.standardizer.std
        meta = {
            "schema": CHECKPOINT_SCHEMA,
            "kind": "policy",
            "layer_sizes": layer_sizes,
            "output": output,
            "dtype": dtype,
            "seed": self.seed,
            "provenance": provenance or {},
        }
        persist.save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "PolicyNet":
        arrays, meta = persist.load_arrays(path)
        if meta.get("kind") != "policy":
            raise ValueError(f"not a policy checkpoint: {path}")
        state = {
            "layer_sizes": meta["layer_sizes"],
            "output": meta["output"],
            "dtype": meta["dtype"],
        }
        for key, val in arrays.items():
            if key.startswith(("w", "b")) and not key.startswith("standardizer"):
                state[key] = val
        policy = cls.__new__(cls)
        policy.net = Mlp.from_state_dict(state)
        policy.standardizer = Standardizer(
            mean=arrays["standardizer_mean"], std=arrays["standardizer_std"]
        )
        policy.seed = meta.get("seed")
        return policy


# ---------------------------------------------------------------------------
# supervised pretraining


@dataclass
class LabeledDataset:
    """Feature states with canonical movement-vector targets and a val split."""

    states: np.ndarray  # (n, 32)
    targets: np.ndarray  # (n, 7)
    movement_ids: np.ndarray  # (n,)
    recording_ids: np.ndarray  # (n,) 1-based recording index
    val_mask: np.ndarray  # (n,) bool

    def __post_init__(self):
        n = self.states.shape[0]
        for arr in (self.targets, self.movement_ids, self.recording_ids, self.val_mask):
            if arr.shape[0] != n:
                raise ValueError("dataset arrays disagree on length")

    @property
    def train_states(self):
        return self.states[~self.val_mask]

    @property
    def train_targets(self):
        return self.targets[~self.val_mask]

    @property
    def val_states(self):
        return self.states[self.val_mask]

    @property
    def val_targets(self):
        return self.targets[self.val_mask]


@dataclass
class PretrainConfig:
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN_LAYERS
    dtype: str = "float64"


@dataclass
class PretrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = -1.0


def sl_pretrain(
    dataset: LabeledDataset,
    config: PretrainConfig | None = None,
    standardizer: Standardizer | None = None,
) -> tuple[PolicyNet, PretrainHistory]:
    """Train on RMSE, keep the epoch snapshot with the best validation F1."""
    config = config or PretrainConfig()
    if dataset.train_states.shape[0] == 0 or dataset.val_states.shape[0] == 0:
        raise ValueError("dataset needs both train and val records")
    rng = np.random.default_rng(config.seed)
    if standardizer is None:
        standardizer = Standardizer.fit(dataset.train_states)
    policy = PolicyNet(
        standardizer=standardizer,
        hidden=config.hidden,
        rng=rng,
        dtype=np.dtype(config.dtype),
        seed=config.seed,
    )
    opt = Adam(policy.net.parameters(), lr=config.learning_rate)
    x_train = dataset.train_states
    t_train = dataset.targets[~dataset.val_mask].astype(float)
    n = x_train.shape[0]
    history = PretrainHistory()
    best_params = [p.copy() for p in policy.net.parameters()]
    val_targets = dataset.val_targets

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = policy.rmse_loss_and_grads(x_train[idx], t_train[idx])
            opt.step(policy.net.parameters(), grads)
            epoch_losses.append(loss)
        val_preds = policy.predict(dataset.val_states)
        f1, _, _ = metrics.f1_macro(val_preds, val_targets)
        history.epochs.append(epoch)
        history.train_rmse.append(float(np.mean(epoch_losses)))
        history.val_f1.append(f1)
        if f1 > history.best_val_f1:
            history.best_val_f1 = f1
            history.best_epoch = epoch
            best_params = [p.copy() for p in policy.net.parameters()]

    policy.net.load_parameters(best_params)
    return policy, history
