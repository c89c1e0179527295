"""Shared group reward with the importance-weighted length penalty, baselines,
and the constrained-optimization decomposition.

For a group of trajectories answering one question, the candidate set C is the
correct members. A correct response earns

    1 + alpha * (1 - weighted_length / normalizer)

where weighted_length = sum over chunks of (5 - w_i) * |s_i| and the
normalizer is the maximum raw token length among correct responses. Incorrect
responses earn exactly 0. Per-role totals add a small binary format bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transcript import FormatFlags

BASELINE_MODES = ("scma", "flat_lp", "rl_lp", "accuracy_only")


class ScoreOutOfRange(ValueError):
    """Importance score outside 1..5."""


class UndefinedForIncorrect(ValueError):
    """The penalty decomposition only exists on the correct branch."""


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.1
    lambda_fmt: float = 0.1
    baseline_mode: str = "scma"

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and >= 0")
        if self.lambda_fmt < 0:
            raise ValueError("lambda_fmt must be >= 0")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")


@dataclass(frozen=True)
class GroupEntry:
    """Per-trajectory inputs the reward functions consume."""

    correct: int
    length: int  # raw token length |y|
    chunk_lengths: tuple[int, ...]
    scores: tuple[int, ...]
    flags: FormatFlags


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    weighted_length: float
    normalizer: float | None
    penalty_term: float | None
    total_shared: float
    fmt: FormatFlags
    per_role_total: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def phi(w: int) -> int:
    """Penalty weight for one chunk: 5 - w, so score-5 chunks are exempt."""
    if not isinstance(w, (int, np.integer)) or not 1 <= w <= 5:
        raise ScoreOutOfRange(f"score {w!r} outside 1..5")
    return 5 - int(w)


def weighted_length(entry: GroupEntry) -> float:
    """Importance-weighted token length; falls back to the all-minimum-importance
    worst case 4*|y| when the segmentation is not lossless."""
    if not entry.flags.seg_ok:
        return 4.0 * entry.length
    return float(sum(phi(w) * ln for w, ln in zip(entry.scores, entry.chunk_lengths)))


def per_role_totals(
    total_shared: float, flags: FormatFlags, cfg: RewardConfig
) -> tuple[float, float, float]:
    return tuple(total_shared + cfg.lambda_fmt * flag for flag in flags.as_tuple())


def _normalizer(entries: list[GroupEntry]) -> float | None:
    correct_lengths = [e.length for e in entries if e.correct]
    return float(max(correct_lengths)) if correct_lengths else None


def scma_group_reward(entries: list[GroupEntry], cfg: RewardConfig) -> list[RewardBreakdown]:
    norm = _normalizer(entries)
    out = []
    for e in entries:
        wl = weighted_length(e)
        if e.correct and norm:
            penalty = cfg.alpha * wl / norm
            total = 1.0 + cfg.alpha - penalty
        else:
            penalty = None
            total = 0.0
        out.append(
            RewardBreakdown(
                r_acc=e.correct,
                weighted_length=wl,
                normalizer=norm,
                penalty_term=penalty,
                total_shared=total,
                fmt=e.flags,
                per_role_total=per_role_totals(total, e.flags, cfg),
            )
        )
    return out


def baseline_flat_lp(entries: list[GroupEntry], cfg: RewardConfig) -> list[float]:
    """Flat length penalty: correct responses earn 1 - alpha * |y| / max correct length."""
    norm = _normalizer(entries)
    return [
        1.0 - cfg.alpha * e.length / norm if e.correct and norm else 0.0
        for e in entries
    ]


def baseline_rl_lp(entries: list[GroupEntry], cfg: RewardConfig) -> list[float]:
    """Mean-deviation length penalty over correct responses, clamped to [-1, 1]."""
    lengths = [e.length for e in entries if e.correct]
    if not lengths:
        return [0.0] * len(entries)
    mean = float(np.mean(lengths))
    span = max(lengths) - min(lengths)
    out = []
    for e in entries:
        if not e.correct:
            out.append(0.0)
            continue
        dev = 0.0 if span == 0 else float(np.clip((e.length - mean) / span, -1.0, 1.0))
        out.append(1.0 - cfg.alpha * dev)
    return out


def group_rewards(entries: list[GroupEntry], cfg: RewardConfig) -> list[RewardBreakdown]:
    """Dispatch on baseline_mode, always returning full breakdowns."""
    if cfg.baseline_mode == "scma":
        return scma_group_reward(entries, cfg)

    norm = _normalizer(entries)
    if cfg.baseline_mode == "flat_lp":
        totals = baseline_flat_lp(entries, cfg)
    elif cfg.baseline_mode == "rl_lp":
        totals = baseline_rl_lp(entries, cfg)
    else:  # accuracy_only
        totals = [1.0 if e.correct and norm else 0.0 for e in entries]

    out = []
    for e, total in zip(entries, totals):
        penalty = (1.0 + 0.0 - total) if e.correct and norm else None
        if cfg.baseline_mode == "accuracy_only":
            penalty = 0.0 if e.correct and norm else None
        out.append(
            RewardBreakdown(
                r_acc=e.correct,
                weighted_length=weighted_length(e),
                normalizer=norm,
                penalty_term=penalty,
                total_shared=total,
                fmt=e.flags,
                per_role_total=per_role_totals(total, e.flags, cfg),
            )
        )
    return out


def lagrangian_decompose(
    bd: RewardBreakdown, cfg: RewardConfig
) -> tuple[float, float, float]:
    """Split a correct breakdown into (r_acc, cost, reconstruction).

    The cost is weighted_length / normalizer; the reconstruction
    r_acc - alpha * cost + alpha must equal total_shared exactly.
    """
    if not bd.r_acc or bd.normalizer is None:
        raise UndefinedForIncorrect("decomposition defined only on the correct branch")
    cost = bd.weighted_length / bd.normalizer
    reconstruction = bd.r_acc - cfg.alpha * cost + cfg.alpha
    return float(bd.r_acc), cost, reconstruction
