"""Evaluation and analysis quantities.

Exact-match ratio, per-bit F1, action-change counts, max-channel SNR,
k-nearest-neighbor mutual information for continuous features against
discrete labels, population stability index over median/std binning and
the Wilcoxon signed-rank test (exact up to n=25, normal approximation
with tie correction beyond).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma
from scipy.stats import norm, rankdata

from . import movements

PSI_PROPORTION_FLOOR = 1e-4


# ---------------------------------------------------------------------------
# classification metrics


def emr(preds, targets) -> float:
    """Exact match ratio: fraction of rows equal on all 7 bits."""
    p = np.asarray(preds, dtype=np.uint8)
    t = np.asarray(targets, dtype=np.uint8)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.all(p == t, axis=-1)))


def f1_macro(preds, targets, classes: str = "bits"):
    """Macro-averaged F1.

    With ``classes="bits"`` (default) each of the 7 label bits is a class;
    with ``classes="movements"`` the 13 movement ids are the classes and
    non-canonical predictions never match.  Classes absent from both preds
    and targets are excluded from the macro mean.

    Returns (macro, per_class list with None for excluded classes, n_included).
    """
    p = np.asarray(preds, dtype=np.uint8)
    t = np.asarray(targets, dtype=np.uint8)
    if p.size == 0:
        raise ValueError("empty input")
    if classes == "bits":
        pos_p, pos_t = p.astype(bool), t.astype(bool)
        n_classes = movements.VECTOR_BITS
        tp = np.sum(pos_p & pos_t, axis=0)
        fp = np.sum(pos_p & ~pos_t, axis=0)
        fn = np.sum(~pos_p & pos_t, axis=0)
    elif classes == "movements":
        pred_ids = np.array([_decode_or_minus_one(row) for row in p])
        tgt_ids = np.array([_decode_or_minus_one(row) for row in t])
        if (tgt_ids < 0).any():
            raise ValueError("targets must be canonical movement vectors")
        n_classes = movements.N_MOVEMENTS
        ids = np.arange(n_classes)[:, None]
        tp = np.sum((pred_ids[None] == ids) & (tgt_ids[None] == ids), axis=1)
        fp = np.sum((pred_ids[None] == ids) & (tgt_ids[None] != ids), axis=1)
        fn = np.sum((pred_ids[None] != ids) & (tgt_ids[None] == ids), axis=1)
    else:
        raise ValueError(f"unknown class basis: {classes}")

    per_class: list[float | None] = []
    included = []
    for i in range(n_classes):
        denom = tp[i] + 0.5 * (fp[i] + fn[i])
        if tp[i] + fp[i] + fn[i] == 0:
            per_class.append(None)
        else:
            f1 = float(tp[i] / denom)
            per_class.append(f1)
            included.append(f1)
    if not included:
        raise ValueError("no class present in preds or targets")
    return float(np.mean(included)), per_class, len(included)


def _decode_or_minus_one(row) -> int:
    decoded = movements.decode(row)
    return decoded if isinstance(decoded, int) else -1


def action_changes(actions) -> int:
    """Number of steps whose action differs from the previous one."""
    a = np.asarray(actions, dtype=np.uint8)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need a (n, bits) sequence with n >= 1")
    return int(np.sum(np.any(a[1:] != a[:-1], axis=1)))


# ---------------------------------------------------------------------------
# signal-to-noise ratio


def snr_by_movement(features, labels) -> tuple[dict[int, float], float]:
    """Max-over-channels MAV ratio of each movement to rest, in dB.

    ``features`` is (n, 32) with MAV at indices 0, 4, ..., 28; ``labels``
    are movement ids.  Channels whose rest MAV is zero are undefined and
    skipped; if every channel is undefined this raises.

    Returns ({movement_id: dB}, subject_snr = max over movements).
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    mav = x[:, 0::4]
    rest_mask = y == movements.REST_ID
    if not rest_mask.any():
        raise ValueError("no rest samples to define the noise floor")
    rest_mav = mav[rest_mask].mean(axis=0)
    valid = rest_mav > 0
    if not valid.any():
        raise ValueError("rest MAV is zero on every channel; SNR undefined")
    per_movement: dict[int, float] = {}
    for mid in sorted(set(y.tolist()) - {movements.REST_ID}):
        mov_mav = mav[y == mid].mean(axis=0)
        ratios = mov_mav[valid] / rest_mav[valid]
        ratios = ratios[ratios > 0]
        if ratios.size == 0:
            continue
        per_movement[mid] = float(10.0 * np.log10(ratios.max()))
    if not per_movement:
        raise ValueError("no non-rest movement with positive MAV")
    return per_movement, max(per_movement.values())


# ---------------------------------------------------------------------------
# mutual information (continuous features, discrete labels)


def _mi_continuous_discrete(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Nearest-neighbor MI estimate between (n, d) features and int labels."""
    n = x.shape[0]
    radius = np.empty(n)
    label_counts = np.empty(n)
    k_all = np.empty(n)
    for lab in np.unique(labels):
        mask = labels == lab
        count = int(mask.sum())
        if count > 1:
            kk = min(k, count - 1)
            tree = cKDTree(x[mask])
            dist, _ = tree.query(x[mask], k=kk + 1, p=np.inf)
            radius[mask] = np.nextafter(dist[:, -1], 0)
            k_all[mask] = kk
        label_counts[mask] = count

    keep = label_counts > 1
    n_eff = int(keep.sum())
    if n_eff == 0:
        return 0.0
    x = x[keep]
    radius = radius[keep]
    label_counts = label_counts[keep]
    k_all = k_all[keep]

    tree = cKDTree(x)
    m_all = tree.query_ball_point(x, radius, p=np.inf, return_length=True)
    mi = (
        digamma(n_eff)
        + np.mean(digamma(k_all))
        - np.mean(digamma(label_counts))
        - np.mean(digamma(np.maximum(m_all, 1)))
    )
    return max(0.0, float(mi))


def mutual_information(
    states,
    labels,
    k: int = 3,
    mode: str = "per_feature",
    tie_break_seed: int = 0,
) -> float:
    """MI between feature states and discrete movement labels, in nats.

    ``mode="per_feature"`` estimates MI of each feature column separately
    and returns the mean; ``mode="joint"`` treats the state vector as one
    multivariate variable.  A deterministic, vanishingly small jitter
    breaks distance ties in discretized features.
    """
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=int).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("states and labels length mismatch")
    if x.shape[0] < 50:
        raise ValueError("need at least 50 samples for a usable estimate")
    if np.unique(y).size < 2:
        return 0.0

    rng = np.random.default_rng(tie_break_seed)
    scale = np.maximum(1.0, np.mean(np.abs(x), axis=0))
    x = x + 1e-10 * scale * rng.standard_normal(x.shape)

    if mode == "joint":
        return _mi_continuous_discrete(x, y, k)
    if mode == "per_feature":
        vals = [_mi_continuous_discrete(x[:, j : j + 1], y, k) for j in range(x.shape[1])]
        return float(np.mean(vals))
    raise ValueError(f"unknown mode: {mode}")


# ---------------------------------------------------------------------------
# population stability index


@dataclass(frozen=True)
class BinningScheme:
    """Cut points derived from a base distribution.

    Edges are the median, three cuts at 1/3-std intervals on each side,
    and the base min/max; bins are the open-ended intervals around them.
    Edge bins empty in both compared distributions are dropped at
    evaluation time.
    """

    edges: np.ndarray

    @classmethod
    def fit(cls, base) -> "BinningScheme":
        p = np.asarray(base, dtype=float).reshape(-1)
        if p.size == 0:
            raise ValueError("empty base sample")
        med = np.median(p)
        s = p.std()
        cuts = [med + s * f / 3.0 for f in (-3, -2, -1, 0, 1, 2, 3)]
        cuts.extend([p.min(), p.max()])
        edges = np.unique(cuts)
        return cls(edges=edges)

    def proportions(self, samples) -> np.ndarray:
        """Per-bin proportions including the two open edge bins.

        Bin j covers [edge_{j-1}, edge_j), except that the topmost interior
        bin also includes the highest edge, so the base sample never spills
        into the open edge bins.
        """
        x = np.asarray(samples, dtype=float).reshape(-1)
        if x.size == 0:
            raise ValueError("empty sample")
        idx = np.searchsorted(self.edges, x, side="right")
        idx = np.where(x == self.edges[-1], self.edges.size - 1, idx)
        counts = np.bincount(idx, minlength=self.edges.size + 1)
        return counts / x.size


def psi_single(p_samples, q_samples) -> float:
    """PSI of one feature; the base distribution defines the binning."""
    scheme = BinningScheme.fit(p_samples)
    p = scheme.proportions(p_samples)
    q = scheme.proportions(q_samples)
    # Drop edge bins that are empty in both distributions.
    lo, hi = 0, p.size
    while lo < hi - 1 and p[lo] == 0 and q[lo] == 0:
        lo += 1
    while hi > lo + 1 and p[hi - 1] == 0 and q[hi - 1] == 0:
        hi -= 1
    p = np.maximum(p[lo:hi], PSI_PROPORTION_FLOOR)
    q = np.maximum(q[lo:hi], PSI_PROPORTION_FLOOR)
    return float(np.sum((p - q) * np.log(p / q)))


def psi(p_samples, q_samples):
    """Per-feature PSI and the mean over features.

    Accepts (n,) single-feature or (n, d) multi-feature samples; returns
    (per_feature array, mean).
    """
    p = np.asarray(p_samples, dtype=float)
    q = np.asarray(q_samples, dtype=float)
    if p.ndim == 1:
        val = psi_single(p, q)
        return np.array([val]), val
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ValueError("feature dimension mismatch")
    vals = np.array([psi_single(p[:, j], q[:, j]) for j in range(p.shape[1])])
    return vals, float(vals.mean())


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    significant: bool
    n: int
    method: str


def _exact_signed_rank_p(ranks: np.ndarray, w_small: float) -> float:
    """Two-sided exact p over all 2^n sign assignments.

    Works with tie-corrected mean ranks: doubling makes every rank an
    integer, so the positive-rank-sum distribution is a subset-sum table.
    """
    doubled = np.rint(2 * ranks).astype(int)
    total = int(doubled.sum())
    table = np.zeros(total + 1)
    table[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(table)
        shifted[r:] = table[: total + 1 - r]
        table = table + shifted
    n_outcomes = 2.0 ** len(ranks)
    w2 = int(np.rint(2 * w_small))
    p_low = table[: w2 + 1].sum() / n_outcomes
    p_high = table[total - w2 :].sum() / n_outcomes
    return min(1.0, float(p_low + p_high))


def wilcoxon_signed_rank(x, y, alpha: float = 0.05, exact_limit: int = 25) -> WilcoxonResult:
    """Two-sided paired signed-rank test on per-pair differences y - x.

    Zero differences are dropped.  Exact enumeration (tie-aware) up to
    ``exact_limit`` nonzero pairs, normal approximation with tie and
    continuity correction above.
    """
    xa = np.asarray(x, dtype=float).reshape(-1)
    ya = np.asarray(y, dtype=float).reshape(-1)
    if xa.shape != ya.shape:
        raise ValueError("paired samples must have equal length")
    d = ya - xa
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero; test undefined")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= exact_limit:
        p = _exact_signed_rank_p(ranks, w)
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        if sigma2 <= 0:
            raise ValueError("zero variance under ties; test undefined")
        z = (w - mu + 0.5) / np.sqrt(sigma2)
        p = min(1.0, float(2.0 * norm.cdf(z)))
        method = "normal"
    return WilcoxonResult(
        statistic=w, p_value=p, significant=bool(p < alpha), n=n, method=method
    )


# ---------------------------------------------------------------------------
# contraction-force trace


def normalize_mav_trace(values, pretrain_mask) -> np.ndarray:
    """Z-score session MAV means against the pretraining segment."""
    v = np.asarray(values, dtype=float).reshape(-1)
    mask = np.asarray(pretrain_mask, dtype=bool).reshape(-1)
    if mask.shape != v.shape:
        raise ValueError("mask length mismatch")
    if not mask.any():
        raise ValueError("empty pretraining segment")
    base = v[mask]
    std = base.std()
    if std == 0:
        raise ValueError("zero variance in pretraining segment")
    return (v - base.mean()) / std
