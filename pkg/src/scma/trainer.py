"""Outer training loop, evaluation, and alpha sweeps.

Each step samples a batch of questions, rolls out G cooperative chains per
question, and applies three sequential gradient-ascent updates to the shared
parameters (Reason, then Seg, then Score). The reference policy is snapshotted
once at step 0; the sampling policy refreshes every step. Runs are fully
deterministic given the master seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .grpo import GrpoConfig, NonFiniteGradient, apply_update, surrogate_value_and_grad
from .policy import (
    AgentRole,
    PolicyParams,
    sample_reasoning,
    save_checkpoint,
    snapshot_reference,
)
from .reward import RewardConfig
from .rollout import GroupBatch, _stream, sample_group, to_agent_batches, trajectory_to_json
from .telemetry import StepMetrics, aggregate_step, write_metrics_csv
from .toyenv import gen_question, minimal_length

# Sub-stream tags keep question, rollout, and evaluation randomness disjoint.
_QUESTION_TAG = 101
_EVAL_TAG = 202


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 16
    seed: int = 1
    k_min: int = 2
    k_max: int = 5
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    out_dir: str | None = None
    log_trajectories: bool = False

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not 2 <= self.k_min <= self.k_max <= 5:
            raise ValueError("operand-count range must satisfy 2 <= k_min <= k_max <= 5")


@dataclass
class TrainResult:
    params: PolicyParams
    metrics: list[StepMetrics]
    metrics_path: str | None = None
    checkpoint_path: str | None = None


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    mean_length: float
    collapse: bool
    mean_chunks: float | None = None  # auxiliary agents are off at deployment
    mean_score: float | None = None


@dataclass
class SweepReport:
    alphas: list[float]
    reports: list[EvalReport]
    rank_correlation: float


class TrainAborted(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"training aborted at step {step}: {cause}")
        self.step = step


def _sample_question(cfg: TrainConfig, step: int, b: int):
    rng = _stream((cfg.seed, _QUESTION_TAG, step, b))
    k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
    return gen_question(rng, k)


def train(cfg: TrainConfig) -> TrainResult:
    params = PolicyParams.base_init()
    ref = snapshot_reference(params)
    metrics: list[StepMetrics] = []
    traj_lines: list[str] = []

    for step in range(cfg.steps):
        groups: list[GroupBatch] = []
        for b in range(cfg.batch_size):
            q = _sample_question(cfg, step, b)
            groups.append(
                sample_group(
                    params, q, cfg.grpo.group_size, (cfg.seed, step, b), cfg.reward
                )
            )
        metrics.append(aggregate_step(step, groups))
        if cfg.log_trajectories:
            for gb in groups:
                traj_lines.extend(
                    trajectory_to_json(tr, gb.question) for tr in gb.trajectories
                )

        # Token logs and sampling-time log-probs are fixed for the step; the
        # three role updates then apply sequentially to the shared parameters.
        batches = [to_agent_batches(gb) for gb in groups]
        try:
            for role in AgentRole:
                grad = np.zeros_like(params.theta)
                for per_role in batches:
                    _, g = surrogate_value_and_grad(
                        per_role[role], params.theta, ref.theta, cfg.grpo
                    )
                    grad += g
                params.theta = apply_update(params.theta, grad, cfg.grpo)
        except NonFiniteGradient as exc:
            raise TrainAborted(step, exc) from exc

    result = TrainResult(params=params, metrics=metrics)
    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        result.metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
        write_metrics_csv(result.metrics_path, metrics)
        result.checkpoint_path = os.path.join(cfg.out_dir, "checkpoint.json")
        save_checkpoint(params, result.checkpoint_path)
        if cfg.log_trajectories:
            with open(os.path.join(cfg.out_dir, "trajectories.jsonl"), "w") as f:
                f.write("\n".join(traj_lines) + ("\n" if traj_lines else ""))
    return result


def evaluate(
    params: PolicyParams,
    n: int,
    seed: int,
    k_min: int = 2,
    k_max: int = 5,
) -> EvalReport:
    """Deployment-style evaluation: the Reason role alone, one sample per question."""
    if n < 1:
        raise ValueError("n must be >= 1")
    correct = 0
    lengths = []
    minimal = []
    for i in range(n):
        q_rng = _stream((seed, _EVAL_TAG, i, 0))
        k = int(q_rng.integers(k_min, k_max + 1))
        q = gen_question(q_rng, k)
        sample = sample_reasoning(params, q, _stream((seed, _EVAL_TAG, i, 1)))
        from .toyenv import check_answer

        correct += check_answer(q, sample.transcript)
        lengths.append(len(sample.transcript))
        minimal.append(minimal_length(q))
    mean_len = float(np.mean(lengths))
    return EvalReport(
        accuracy=correct / n,
        mean_length=mean_len,
        collapse=mean_len < float(np.mean(minimal)),
    )


def sweep_alpha(
    cfg: TrainConfig, alphas: list[float], eval_n: int = 300
) -> SweepReport:
    """Train one run per alpha (shared seed) and rank-correlate alpha with length."""
    if len(alphas) < 2:
        raise ValueError("at least two alphas required")
    reports = []
    for alpha in alphas:
        run_cfg = replace(cfg, reward=replace(cfg.reward, alpha=alpha), out_dir=None)
        result = train(run_cfg)
        reports.append(
            evaluate(result.params, eval_n, cfg.seed, cfg.k_min, cfg.k_max)
        )
    corr = float(
        stats.spearmanr(alphas, [r.mean_length for r in reports]).statistic
    )
    return SweepReport(alphas=list(alphas), reports=reports, rank_correlation=corr)
