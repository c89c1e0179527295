"""Cooperative rollouts: Reason -> Seg -> Score chains, grouped per question.

Each trajectory in a group is sampled on its own random sub-stream derived
from (master key, trajectory index, role), so replays are exact and the three
roles' streams are independent: perturbing the segmentation stream can never
change the sampled response tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .grpo import AgentBatch, TrajectoryTokens, group_advantages
from .policy import (
    AgentRole,
    PolicyParams,
    TokenRecord,
    sample_reasoning,
    sample_scores,
    sample_segmentation,
    segmentation_from_samples,
)
from .reward import GroupEntry, RewardBreakdown, RewardConfig, group_rewards
from .toyenv import Question, check_answer
from .transcript import FormatFlags, ScoredSegmentation, Transcript, format_flags


@dataclass
class CooperativeTrajectory:
    response: Transcript
    segmentation: ScoredSegmentation
    correct: int
    flags: FormatFlags
    role_records: dict[AgentRole, list[TokenRecord]]
    reward: RewardBreakdown | None = None


@dataclass
class GroupBatch:
    question: Question
    trajectories: list[CooperativeTrajectory]
    candidate_indices: tuple[int, ...]
    normalizer: float | None


def _stream(key: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def sample_group(
    params: PolicyParams,
    question: Question,
    g: int,
    rng_key: tuple[int, ...],
    reward_cfg: RewardConfig,
) -> GroupBatch:
    """Sample G cooperative chains and attach group rewards."""
    if g < 2:
        raise ValueError("group size must be >= 2")
    trajectories: list[CooperativeTrajectory] = []
    for k in range(g):
        reason = sample_reasoning(params, question, _stream(rng_key + (k, 0)))
        seg = sample_segmentation(
            params, reason.transcript, _stream(rng_key + (k, 1)), question.k
        )
        score = sample_scores(
            params, reason.transcript, seg.spans, _stream(rng_key + (k, 2)), question.k
        )
        segmentation = segmentation_from_samples(seg, score)
        trajectories.append(
            CooperativeTrajectory(
                response=reason.transcript,
                segmentation=segmentation,
                correct=check_answer(question, reason.transcript),
                flags=format_flags(reason.transcript, segmentation),
                role_records={
                    AgentRole.REASON: reason.records,
                    AgentRole.SEG: seg.records,
                    AgentRole.SCORE: score.records,
                },
            )
        )

    entries = [
        GroupEntry(
            correct=tr.correct,
            length=len(tr.response),
            chunk_lengths=tr.segmentation.chunk_lengths(),
            scores=tr.segmentation.scores,
            flags=tr.flags,
        )
        for tr in trajectories
    ]
    breakdowns = group_rewards(entries, reward_cfg)
    for tr, bd in zip(trajectories, breakdowns):
        tr.reward = bd

    candidates = tuple(i for i, tr in enumerate(trajectories) if tr.correct)
    return GroupBatch(
        question=question,
        trajectories=trajectories,
        candidate_indices=candidates,
        normalizer=breakdowns[0].normalizer,
    )


def _tokens_for_role(tr: CooperativeTrajectory, role: AgentRole) -> TrajectoryTokens:
    records = tr.role_records[role]
    if records:
        features = np.stack([r.obs.dense() for r in records])
        actions = np.array([r.action for r in records], dtype=int)
        old_logps = np.array([r.logp for r in records])
    else:
        from .policy import FEATURE_DIM

        features = np.zeros((0, FEATURE_DIM))
        actions = np.zeros(0, dtype=int)
        old_logps = np.zeros(0)
    return TrajectoryTokens(features=features, actions=actions, old_logps=old_logps)


def to_agent_batches(gb: GroupBatch) -> dict[AgentRole, AgentBatch]:
    """One AgentBatch per role, rewards taken from that role's per_role_total."""
    batches: dict[AgentRole, AgentBatch] = {}
    for role in AgentRole:
        rewards = np.array(
            [tr.reward.per_role_total[role.value] for tr in gb.trajectories]
        )
        batches[role] = AgentBatch(
            role=role,
            rewards=rewards,
            trajectories=[_tokens_for_role(tr, role) for tr in gb.trajectories],
            advantages=group_advantages(rewards),
        )
    return batches


def trajectory_to_json(tr: CooperativeTrajectory, question: Question) -> str:
    return json.dumps(
        {
            "question": list(question.operands),
            "tokens": list(tr.response.tokens),
            "chunks": [list(span) for span in tr.segmentation.spans],
            "scores": list(tr.segmentation.scores),
            "correct": tr.correct,
            "rewards": {
                "total_shared": tr.reward.total_shared,
                "per_role": list(tr.reward.per_role_total),
            },
        }
    )
