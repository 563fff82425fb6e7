"""Full-protocol orchestration.

One experiment: supervised pretraining on prompted recordings, one
unrecorded familiarization song, gameplay repetitions 0..8 (fine-tuning
after each of 0..7), repetition 9 replayed with the pretrained decoder,
then motion tests of the first and last decoder in random order.  Every
phase persists deterministic artifacts so a run can resume and a rerun is
byte-identical.  A batch layer fans experiments across seeds and applies
the paired significance test.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import awac, game, metrics, movements, persist, subject
from .policy import LabeledDataset, PolicyNet, PretrainConfig, Standardizer, sl_pretrain

REPORT_SCHEMA = 1

# rng stream tags (mixed with the experiment seed)
_S_PRETRAIN = 1
_S_PRETRAIN_TRAIN = 2
_S_FAMILIARIZE = 3
_S_MOTION_ORDER = 5
_S_MOTION_P0 = 6
_S_MOTION_P8 = 7
_S_REP_PLAY = 10
_S_REP_AUGMENT = 40
_S_REP_TRAIN = 70


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SubjectSpec:
    noise_scale: float = 0.0
    error_rate: float = 0.0
    drift_rate: float = 0.0
    adaptation_rate: float = 0.0
    drift_decay: float = 0.5

    def build(self, seed: int) -> subject.SubjectProfile:
        return subject.make_profile(seed=seed, **dataclasses.asdict(self))


@dataclass(frozen=True)
class PretrainSpec:
    recordings: int = 6
    duration_s: float = 3.0
    trim_fraction: float = 0.1
    val_recordings: tuple[int, ...] = (2, 5)  # 1-based indices
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    contraction: float = 1.0

    @property
    def windows_per_recording(self) -> int:
        return int(round(self.duration_s * game.TICK_HZ))

    @property
    def trim_windows(self) -> int:
        return int(round(self.windows_per_recording * self.trim_fraction))


@dataclass(frozen=True)
class MotionTestSpec:
    trials_per_movement: int = 3
    timeout_s: float = 10.0
    success_hits: int = 40

    @property
    def max_ticks(self) -> int:
        return int(round(self.timeout_s * game.TICK_HZ))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    chart_seed: int = 7
    n_repetitions: int = 8
    dtype: str = "float32"
    subject: SubjectSpec = field(default_factory=SubjectSpec)
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)
    awac: awac.AwacConfig = field(default_factory=awac.AwacConfig)
    motion_test: MotionTestSpec = field(default_factory=MotionTestSpec)
    include_pretrain_in_buffer: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data["subject"] = SubjectSpec(**data.get("subject", {}))
        pre = dict(data.get("pretrain", {}))
        if "val_recordings" in pre:
            pre["val_recordings"] = tuple(pre["val_recordings"])
        data["pretrain"] = PretrainSpec(**pre)
        aw = dict(data.get("awac", {}))
        if "critic_hidden" in aw:
            aw["critic_hidden"] = tuple(aw["critic_hidden"])
        data["awac"] = awac.AwacConfig(**aw)
        data["motion_test"] = MotionTestSpec(**data.get("motion_test", {}))
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(persist.load_json(path))

    def save(self, path) -> None:
        persist.dump_json(self.to_dict(), path)


# ---------------------------------------------------------------------------
# session state machine

_PHASE_ORDER = ("pretrain", "familiarize", "play", "train", "motion_test", "done")
_ALLOWED_TRANSITIONS = {
    "pretrain": {"familiarize"},
    "familiarize": {"play"},
    "play": {"train", "play", "motion_test"},
    "train": {"play"},
    "motion_test": {"motion_test", "done"},
    "done": set(),
}


class ProtocolError(RuntimeError):
    """Phase transition outside the protocol order."""


@dataclass
class SessionState:
    phase: str = "pretrain"
    repetition: int = -1
    active_policy: str = "p0"
    history: list[str] = field(default_factory=list)

    def advance(self, phase: str, repetition: int | None = None, policy: str | None = None):
        if phase not in _PHASE_ORDER:
            raise ProtocolError(f"unknown phase {phase}")
        if phase not in _ALLOWED_TRANSITIONS[self.phase]:
            raise ProtocolError(f"illegal transition {self.phase} -> {phase}")
        self.history.append(self.phase)
        self.phase = phase
        if repetition is not None:
            self.repetition = repetition
        if policy is not None:
            self.active_policy = policy


# ---------------------------------------------------------------------------
# phases


def record_pretraining_dataset(
    profile: subject.SubjectProfile, spec: PretrainSpec, rng: np.random.Generator
) -> LabeledDataset:
    """Prompted recordings: every movement, ``recordings`` times, trimmed.

    Each 3 s recording yields 60 feature windows at the 20 Hz cadence; the
    first and last 10% are dropped as transient.  Labels follow the prompt,
    so a mistakenly executed movement produces mislabeled windows, exactly
    like a real recording session would.
    """
    enc = movements.all_encodings()
    per_rec = spec.windows_per_recording
    trim = spec.trim_windows
    keep = per_rec - 2 * trim
    states, targets, mids, rids = [], [], [], []
    for movement in range(movements.N_MOVEMENTS):
        for rec in range(1, spec.recordings + 1):
            event = subject.execute_intention(profile, movement, rng)
            feats = subject.emit_features_batch(
                profile, np.full(per_rec, event.executed), rng
            )
            feats = feats[trim : trim + keep]
            states.append(feats)
            targets.append(np.repeat(enc[movement][None], keep, axis=0))
            mids.append(np.full(keep, movement))
            rids.append(np.full(keep, rec))
    val_recs = np.asarray(spec.val_recordings)
    rids_arr = np.concatenate(rids)
    return LabeledDataset(
        states=np.concatenate(states),
        targets=np.concatenate(targets),
        movement_ids=np.concatenate(mids),
        recording_ids=rids_arr,
        val_mask=np.isin(rids_arr, val_recs),
    )


def run_pretraining(
    config: ExperimentConfig, profile: subject.SubjectProfile
) -> tuple[LabeledDataset, PolicyNet, Standardizer, object]:
    """Record the initial dataset and train the baseline decoder."""
    spec = config.pretrain
    rec_profile = subject.scale_contraction(profile, spec.contraction)
    dataset = record_pretraining_dataset(rec_profile, spec, _rng(config.seed, _S_PRETRAIN))
    standardizer = Standardizer.fit(dataset.train_states)
    pretrain_cfg = PretrainConfig(
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        learning_rate=spec.learning_rate,
        seed=[config.seed, _S_PRETRAIN_TRAIN],
        dtype=config.dtype,
    )
    policy, history = sl_pretrain(dataset, pretrain_cfg, standardizer=standardizer)
    return dataset, policy, standardizer, history


def play_gameplay_episode(
    chart: game.NoteChart,
    profile: subject.SubjectProfile,
    policy: PolicyNet,
    rng: np.random.Generator,
) -> game.GameSession:
    """One full song: the subject tracks the chart, the decoder acts."""
    intended = chart.ideal_ids
    executed = subject.execute_intentions_batch(profile, intended, rng)
    states = subject.emit_features_batch(profile, executed, rng)
    actions = policy.predict(states)
    return game.play_episode(chart, states, actions)


def run_motion_test(
    profile: subject.SubjectProfile,
    policy: PolicyNet,
    spec: MotionTestSpec,
    rng: np.random.Generator,
) -> dict:
    """Prompted per-movement trials in random order.

    A trial succeeds once the cumulative count of exact correct
    predictions reaches the success threshold; otherwise it times out.
    The exact-match ratio runs over every tick of every trial.
    """
    prompts = [
        (movement, trial)
        for movement in range(1, movements.N_MOVEMENTS)
        for trial in range(spec.trials_per_movement)
    ]
    order = rng.permutation(len(prompts))
    trials = []
    n_correct_total = 0
    n_ticks_total = 0
    mav_sum = 0.0
    for idx in order:
        movement, trial = prompts[idx]
        target = movements.encode(movement)
        executed = subject.execute_intentions_batch(
            profile, np.full(spec.max_ticks, movement), rng
        )
        states = subject.emit_features_batch(profile, executed, rng)
        preds = policy.predict(states)
        correct = np.all(preds == target, axis=1)
        hits = np.cumsum(correct)
        reached = np.flatnonzero(hits >= spec.success_hits)
        if reached.size:
            ticks = int(reached[0]) + 1
            success = True
        else:
            ticks = spec.max_ticks
            success = False
        n_correct_total += int(hits[ticks - 1])
        n_ticks_total += ticks
        mav_sum += float(states[:ticks, 0::4].mean()) * ticks
        trials.append(
            {
                "movement": int(movement),
                "trial": int(trial),
                "success": success,
                "ticks": ticks,
                "time_s": ticks / game.TICK_HZ,
            }
        )
    return {
        "trials": trials,
        "emr": n_correct_total / n_ticks_total,
        "n_ticks": n_ticks_total,
        "success_rate": float(np.mean([t["success"] for t in trials])),
        "mean_mav": mav_sum / n_ticks_total,
    }


# ---------------------------------------------------------------------------
# episode persistence


def write_episode_jsonl(path, session: game.GameSession, repetition: int, policy_tag: str):
    arrays = session.log.as_arrays()
    records = [
        {
            "schema": 1,
            "kind": "episode",
            "repetition": repetition,
            "policy": policy_tag,
        }
    ]
    for t in range(len(session.log.rewards)):
        records.append(
            {
                "t": t,
                "state": [float(v) for v in arrays["states"][t]],
                "action": [int(v) for v in arrays["actions"][t]],
                "ideal": [int(v) for v in arrays["ideals"][t]],
                "reward": int(arrays["rewards"][t]),
                "score": int(arrays["scores"][t]),
            }
        )
    persist.write_jsonl(path, records)


def read_episode_jsonl(path) -> tuple[dict, awac.Episode]:
    records = persist.read_jsonl(path)
    header = records[0]
    if header.get("kind") != "episode":
        raise ValueError("not an episode file")
    rows = records[1:]
    episode = awac.Episode(
        states=np.array([r["state"] for r in rows], dtype=float),
        actions=np.array([r["action"] for r in rows], dtype=np.uint8),
        rewards=np.array([r["reward"] for r in rows], dtype=int),
        ideals=np.array([r["ideal"] for r in rows], dtype=np.uint8),
        repetition=header["repetition"],
    )
    return header, episode


# ---------------------------------------------------------------------------
# the full experiment


def pretrain_episodes(dataset: LabeledDataset) -> list[awac.Episode]:
    """Optional bridge: turn the labeled recordings into buffer episodes.

    Actions equal the prompted targets, so rewards are 1 (or 0 for rest)
    throughout; each recording block terminates its own episode.
    """
    episodes = []
    for rec in sorted(set(dataset.recording_ids.tolist())):
        for movement in sorted(set(dataset.movement_ids.tolist())):
            mask = (dataset.recording_ids == rec) & (dataset.movement_ids == movement)
            if not mask.any():
                continue
            states = dataset.states[mask]
            targets = dataset.targets[mask]
            episodes.append(
                awac.Episode(
                    states=states,
                    actions=targets.copy(),
                    rewards=game.reward_vector(targets, targets),
                    ideals=targets.copy(),
                    repetition=-1,
                )
            )
    return episodes


def profile_at_rep(config: ExperimentConfig, rep: int) -> subject.SubjectProfile:
    """Subject state just before gameplay repetition ``rep`` (0-based)."""
    profile = config.subject.build(seed=config.seed)
    for k in range(rep + 1):
        profile = subject.evolve(profile, k + 1)
    return profile


def policy_tag_for_rep(config: ExperimentConfig, rep: int) -> str:
    final_rep = config.n_repetitions + 1
    return "p0" if rep in (0, final_rep) else f"p{rep}"


def load_policy(outdir, tag: str) -> PolicyNet:
    out = Path(outdir)
    if tag == "p0":
        return PolicyNet.load(out / "pretrain" / "policy_p0.ckpt")
    return PolicyNet.load(out / "checkpoints" / f"policy_{tag}.ckpt")


def step_pretrain(config: ExperimentConfig, outdir) -> dict:
    """CLI phase: record the dataset and train the baseline decoder."""
    out = Path(outdir)
    (out / "pretrain").mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    chart = game.build_chart(config.chart_seed)
    (out / "chart.json").write_text(chart.to_json() + "\n")
    profile = config.subject.build(seed=config.seed)
    dataset, p0, _, history = run_pretraining(config, profile)
    _save_pretrain_dataset(out / "pretrain" / "dataset.jsonl", dataset)
    p0.save(out / "pretrain" / "policy_p0.ckpt", provenance={"repetition": -1, "role": "pretrained"})
    _write_pretrain_history(out / "pretrain" / "history.csv", history)
    val_f1 = metrics.f1_macro(p0.predict(dataset.val_states), dataset.val_targets)[0]
    return {"val_f1": val_f1, "best_epoch": history.best_epoch}


def step_play(config: ExperimentConfig, outdir, rep: int) -> dict:
    """CLI phase: play gameplay repetition ``rep`` with the proper decoder."""
    out = Path(outdir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    chart = game.NoteChart.from_json((out / "chart.json").read_text())
    tag = policy_tag_for_rep(config, rep)
    policy = load_policy(out, tag)
    profile = profile_at_rep(config, rep)
    session = play_gameplay_episode(chart, profile, policy, _rng(config.seed, _S_REP_PLAY + rep))
    write_episode_jsonl(out / "episodes" / f"rep_{rep}.jsonl", session, rep, tag)
    ret = session.log.total_return()
    return {
        "repetition": rep,
        "policy": tag,
        "return": ret,
        "normalized_return": game.normalized_return(ret),
        "score": session.score,
    }


def step_finetune(config: ExperimentConfig, outdir, rep: int) -> dict:
    """CLI phase: fine-tune on episodes 0..rep, producing the next decoder."""
    out = Path(outdir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "train_logs").mkdir(parents=True, exist_ok=True)
    buffer = awac.ReplayBuffer()
    if config.include_pretrain_in_buffer:
        for ep in pretrain_episodes(_load_pretrain_dataset(out / "pretrain" / "dataset.jsonl")):
            buffer.append(ep)
    for k in range(rep + 1):
        _, episode = read_episode_jsonl(out / "episodes" / f"rep_{k}.jsonl")
        buffer.append(episode, epsilon=config.awac.epsilon, rng=_rng(config.seed, _S_REP_AUGMENT + k))
    start = load_policy(out, policy_tag_for_rep(config, rep))
    best, history = awac.finetune_repetition(
        buffer, start, config.awac, seed=[config.seed, _S_REP_TRAIN + rep]
    )
    best.save(
        out / "checkpoints" / f"policy_p{rep + 1}.ckpt",
        provenance={"repetition": rep, "role": "finetuned"},
    )
    history.write_csv(out / "train_logs" / f"rep_{rep}.csv")
    buffer.save_jsonl(out / "buffer.jsonl")
    return {"best_step": history.best_step, "best_sim_return": history.best_return}


def step_motion_test(config: ExperimentConfig, outdir, tag: str) -> dict:
    """CLI phase: motion test for p0 or the last fine-tuned decoder."""
    if tag not in ("p0", "p8"):
        raise ValueError("policy must be p0 or p8")
    out = Path(outdir)
    (out / "motion_test").mkdir(parents=True, exist_ok=True)
    load_tag = "p0" if tag == "p0" else f"p{config.n_repetitions}"
    policy = load_policy(out, load_tag)
    profile = profile_at_rep(config, config.n_repetitions + 1)
    stream = _S_MOTION_P0 if tag == "p0" else _S_MOTION_P8
    result = run_motion_test(profile, policy, config.motion_test, _rng(config.seed, stream))
    persist.write_jsonl(
        out / "motion_test" / f"{tag}.jsonl",
        [{"schema": 1, "kind": "motion_test", "policy": tag}] + result["trials"],
    )
    return {k: v for k, v in result.items() if k != "trials"}


def run_full_experiment(config: ExperimentConfig, outdir, resume: bool = False) -> dict:
    """Execute (or resume) the whole protocol; returns the report dict."""
    out = Path(outdir)
    report_path = out / "report.json"
    if resume and report_path.exists():
        return persist.load_json(report_path)

    out.mkdir(parents=True, exist_ok=True)
    (out / "pretrain").mkdir(exist_ok=True)
    (out / "episodes").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "train_logs").mkdir(exist_ok=True)
    (out / "motion_test").mkdir(exist_ok=True)
    config.save(out / "config.json")

    state = SessionState()
    chart = game.build_chart(config.chart_seed)
    (out / "chart.json").write_text(chart.to_json() + "\n")

    profile = config.subject.build(seed=config.seed)

    # -- pretraining --------------------------------------------------------
    p0_path = out / "pretrain" / "policy_p0.ckpt"
    dataset_path = out / "pretrain" / "dataset.jsonl"
    if resume and p0_path.exists() and dataset_path.exists():
        p0 = PolicyNet.load(p0_path)
        dataset = _load_pretrain_dataset(dataset_path)
        pretrain_history = None
    else:
        dataset, p0, _, pretrain_history = run_pretraining(config, profile)
        _save_pretrain_dataset(dataset_path, dataset)
        p0.save(p0_path, provenance={"repetition": -1, "role": "pretrained"})
        _write_pretrain_history(out / "pretrain" / "history.csv", pretrain_history)
    val_f1 = metrics.f1_macro(p0.predict(dataset.val_states), dataset.val_targets)[0]

    # -- familiarization (unrecorded) ---------------------------------------
    state.advance("familiarize")
    play_gameplay_episode(chart, profile, p0, _rng(config.seed, _S_FAMILIARIZE))

    # -- gameplay repetitions ------------------------------------------------
    # Repetitions 0..n play the latest decoder (training after 0..n-1);
    # the final repetition n+1 replays the pretrained decoder.
    buffer = awac.ReplayBuffer()
    if config.include_pretrain_in_buffer:
        for ep in pretrain_episodes(dataset):
            buffer.append(ep)
    policies: dict[str, PolicyNet] = {"p0": p0}
    episodes: list[awac.Episode] = []
    rep_rows: list[dict] = []
    current = p0
    n_finetunes = config.n_repetitions
    total_reps = config.n_repetitions + 2
    final_rep = total_reps - 1

    for rep in range(total_reps):
        profile = subject.evolve(profile, rep + 1)
        if rep == final_rep:
            current = p0
            policy_tag = "p0"
        else:
            policy_tag = f"p{rep}"
        state.advance("play", repetition=rep, policy=policy_tag)

        ep_path = out / "episodes" / f"rep_{rep}.jsonl"
        if resume and ep_path.exists():
            _, episode = read_episode_jsonl(ep_path)
        else:
            session = play_gameplay_episode(
                chart, profile, current, _rng(config.seed, _S_REP_PLAY + rep)
            )
            write_episode_jsonl(ep_path, session, rep, policy_tag)
            episode = awac.Episode.from_session(session, rep)
        episodes.append(episode)

        if rep < n_finetunes:
            state.advance("train")
            buffer.append(
                episode, epsilon=config.awac.epsilon, rng=_rng(config.seed, _S_REP_AUGMENT + rep)
            )
            ckpt = out / "checkpoints" / f"policy_p{rep + 1}.ckpt"
            if resume and ckpt.exists():
                current = PolicyNet.load(ckpt)
            else:
                current, history = awac.finetune_repetition(
                    buffer, current, config.awac, seed=[config.seed, _S_REP_TRAIN + rep]
                )
                current.save(ckpt, provenance={"repetition": rep, "role": "finetuned"})
                history.write_csv(out / "train_logs" / f"rep_{rep}.csv")
            policies[f"p{rep + 1}"] = current

    buffer.save_jsonl(out / "buffer.jsonl")

    # -- motion tests ---------------------------------------------------------
    # "p8" names the last fine-tuned decoder (p{n_repetitions} in general).
    state.advance("motion_test")
    order_rng = _rng(config.seed, _S_MOTION_ORDER)
    motion_order = ["p0", "p8"] if order_rng.random() < 0.5 else ["p8", "p0"]
    p_last = policies.get(f"p{config.n_repetitions}", p0)
    motion_results = {}
    for tag in motion_order:
        pol = p0 if tag == "p0" else p_last
        tag_stream = _S_MOTION_P0 if tag == "p0" else _S_MOTION_P8
        result = run_motion_test(
            profile, pol, config.motion_test, _rng(config.seed, tag_stream)
        )
        motion_results[tag] = result
        persist.write_jsonl(
            out / "motion_test" / f"{tag}.jsonl",
            [{"schema": 1, "kind": "motion_test", "policy": tag}] + result["trials"],
        )
    state.advance("done")

    # -- per-repetition metrics ----------------------------------------------
    last_trained_states = episodes[config.n_repetitions].states
    mav_means = []
    for rep, episode in enumerate(episodes):
        preds = episode.actions
        ideals = episode.ideals
        ret = int(episode.rewards.sum())
        f1, _, n_classes = metrics.f1_macro(preds, ideals)
        mi = metrics.mutual_information(
            episode.states, _ideal_ids(ideals), k=3, mode="per_feature"
        )
        snr_per, snr_subject = metrics.snr_by_movement(episode.states, _ideal_ids(ideals))
        psi_vs_rep8 = (
            None
            if rep == config.n_repetitions
            else float(metrics.psi(episode.states, last_trained_states)[1])
        )
        policy_tag = "p0" if rep in (0, final_rep) else f"p{rep}"
        rep_rows.append(
            {
                "repetition": rep,
                "policy": policy_tag,
                "policy_hash": policies[policy_tag].params_hash(),
                "return": ret,
                "normalized_return": game.normalized_return(ret),
                "emr": metrics.emr(preds, ideals),
                "f1_macro": f1,
                "f1_classes_included": n_classes,
                "action_changes": metrics.action_changes(preds),
                "mi": mi,
                "snr": snr_subject,
                "psi_vs_rep8": psi_vs_rep8,
            }
        )
        mav_means.append(float(episode.states[:, 0::4].mean()))

    # contraction-force trace, z-scored against the pretraining segment
    pretrain_mav = _per_recording_mav(dataset)
    motion_mav = [motion_results[tag]["mean_mav"] for tag in ("p0", "p8")]
    trace_values = np.array(pretrain_mav + mav_means + motion_mav)
    trace_mask = np.zeros(trace_values.size, dtype=bool)
    trace_mask[: len(pretrain_mav)] = True
    mav_trace = metrics.normalize_mav_trace(trace_values, trace_mask)

    pretrain_snr_per, pretrain_snr = metrics.snr_by_movement(
        dataset.states, dataset.movement_ids
    )

    report = {
        "schema": REPORT_SCHEMA,
        "config": config.to_dict(),
        "chart": {
            "seed": config.chart_seed,
            "n_notes": len(chart.notes),
            "note_ticks": chart.note_ticks(),
            "ideal_action_changes": metrics.action_changes(chart.ideal_action_sequence()),
        },
        "pretrain": {
            "n_records": int(dataset.states.shape[0]),
            "n_train": int((~dataset.val_mask).sum()),
            "n_val": int(dataset.val_mask.sum()),
            "val_f1": val_f1,
            "snr": pretrain_snr,
            "snr_per_movement": {str(k): v for k, v in pretrain_snr_per.items()},
        },
        "repetitions": rep_rows,
        "motion_tests": {
            "order": motion_order,
            "p0": {k: v for k, v in motion_results["p0"].items() if k != "trials"},
            "p8": {k: v for k, v in motion_results["p8"].items() if k != "trials"},
        },
        "mav_trace": {
            "pretrain_recordings": [float(v) for v in mav_trace[: len(pretrain_mav)]],
            "gameplay": [float(v) for v in mav_trace[len(pretrain_mav) : -2]],
            "motion_p0": float(mav_trace[-2]),
            "motion_p8": float(mav_trace[-1]),
        },
        "policy_hashes": {tag: pol.params_hash() for tag, pol in policies.items()},
        "phase_history": state.history + [state.phase],
    }
    persist.dump_json(report, report_path)
    _write_report_csv(out / "report.csv", rep_rows)
    return report


def _ideal_ids(ideals: np.ndarray) -> np.ndarray:
    table = {row.tobytes(): i for i, row in enumerate(movements.all_encodings())}
    return np.array([table[row.tobytes()] for row in np.asarray(ideals, dtype=np.uint8)])


def _per_recording_mav(dataset: LabeledDataset) -> list[float]:
    out = []
    for rec in sorted(set(dataset.recording_ids.tolist())):
        for movement in range(movements.N_MOVEMENTS):
            mask = (dataset.recording_ids == rec) & (dataset.movement_ids == movement)
            if mask.any():
                out.append(float(dataset.states[mask][:, 0::4].mean()))
    return out


def _save_pretrain_dataset(path, dataset: LabeledDataset) -> None:
    records = [{"schema": 1, "kind": "pretrain_dataset"}]
    for i in range(dataset.states.shape[0]):
        records.append(
            {
                "state": [float(v) for v in dataset.states[i]],
                "target": [int(v) for v in dataset.targets[i]],
                "movement": int(dataset.movement_ids[i]),
                "recording": int(dataset.recording_ids[i]),
                "val": bool(dataset.val_mask[i]),
            }
        )
    persist.write_jsonl(path, records)


def _load_pretrain_dataset(path) -> LabeledDataset:
    records = persist.read_jsonl(path)
    rows = records[1:]
    return LabeledDataset(
        states=np.array([r["state"] for r in rows], dtype=float),
        targets=np.array([r["target"] for r in rows], dtype=np.uint8),
        movement_ids=np.array([r["movement"] for r in rows], dtype=int),
        recording_ids=np.array([r["recording"] for r in rows], dtype=int),
        val_mask=np.array([r["val"] for r in rows], dtype=bool),
    )


def _write_pretrain_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rmse", "val_f1"])
        for i, epoch in enumerate(history.epochs):
            writer.writerow([epoch, repr(history.train_rmse[i]), repr(history.val_f1[i])])


def _write_report_csv(path, rep_rows: list[dict]) -> None:
    cols = [
        "repetition",
        "policy",
        "return",
        "normalized_return",
        "emr",
        "f1_macro",
        "action_changes",
        "mi",
        "snr",
        "psi_vs_rep8",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rep_rows:
            writer.writerow(
                ["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in cols]
            )


# ---------------------------------------------------------------------------
# multi-seed batches


def run_batch(
    base_config: ExperimentConfig,
    seeds: list[int],
    workdir,
    n_workers: int = 1,
    resume: bool = True,
) -> dict:
    """Run one experiment per seed and aggregate the paired statistics."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for seed in seeds:
        cfg = dataclasses.replace(base_config, seed=seed)
        jobs.append((cfg, workdir / f"seed_{seed}", resume))

    if n_workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ctx.Pool(n_workers) as pool:
            reports = pool.starmap(run_full_experiment, jobs)
    else:
        reports = [run_full_experiment(*job) for job in jobs]

    per_seed = []
    for seed, report in zip(seeds, reports):
        reps = report["repetitions"]
        last_trained, final = reps[-2], reps[-1]
        per_seed.append(
            {
                "seed": seed,
                "normalized_returns": [r["normalized_return"] for r in reps],
                "rep8_return": last_trained["normalized_return"],
                "rep9_return": final["normalized_return"],
                "rep8_mi": last_trained["mi"],
                "motion_emr_p0": report["motion_tests"]["p0"]["emr"],
                "motion_emr_p8": report["motion_tests"]["p8"]["emr"],
                "changes_p0": (reps[0]["action_changes"] + final["action_changes"]) / 2,
                "changes_p8": last_trained["action_changes"],
            }
        )

    rep8 = np.array([s["rep8_return"] for s in per_seed])
    rep9 = np.array([s["rep9_return"] for s in per_seed])
    emr_p0 = np.array([s["motion_emr_p0"] for s in per_seed])
    emr_p8 = np.array([s["motion_emr_p8"] for s in per_seed])

    def _wilcoxon_or_none(x, y):
        try:
            res = metrics.wilcoxon_signed_rank(x, y)
            return {
                "statistic": res.statistic,
                "p_value": res.p_value,
                "significant": res.significant,
                "n": res.n,
                "method": res.method,
            }
        except ValueError:
            return None

    batch_report = {
        "schema": REPORT_SCHEMA,
        "seeds": list(seeds),
        "per_seed": per_seed,
        "aggregate": {
            "mean_normalized_return_by_rep": [
                float(np.mean([s["normalized_returns"][rep] for s in per_seed]))
                for rep in range(base_config.n_repetitions + 2)
            ],
            "mean_rep8_return": float(rep8.mean()),
            "mean_rep9_return": float(rep9.mean()),
            "mean_improvement": float((rep8 - rep9).mean()),
            "mean_rep8_mi": float(np.mean([s["rep8_mi"] for s in per_seed])),
            "mean_motion_emr_p0": float(emr_p0.mean()),
            "mean_motion_emr_p8": float(emr_p8.mean()),
            "mean_changes_p0": float(np.mean([s["changes_p0"] for s in per_seed])),
            "mean_changes_p8": float(np.mean([s["changes_p8"] for s in per_seed])),
            "wilcoxon_rep8_vs_rep9": _wilcoxon_or_none(rep9, rep8),
            "wilcoxon_motion_emr": _wilcoxon_or_none(emr_p0, emr_p8),
        },
    }
    persist.dump_json(batch_report, workdir / "batch_report.json")
    return batch_report
