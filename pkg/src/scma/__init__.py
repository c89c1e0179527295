"""Multi-agent GRPO with an importance-weighted length penalty on a toy reasoning task."""

from .transcript import (
    FormatFlags,
    ScoredSegmentation,
    Transcript,
    check_lossless,
    format_flags,
    parse_tagged,
    render_tagged,
)
from .toyenv import Question, check_answer, gen_question, minimal_length, redundancy_oracle
from .policy import AgentRole, PolicyParams, ReferencePolicy, snapshot_reference
from .reward import RewardBreakdown, RewardConfig
from .grpo import GrpoConfig
from .trainer import EvalReport, TrainConfig, evaluate, sweep_alpha, train

__all__ = [
    "AgentRole",
    "EvalReport",
    "FormatFlags",
    "GrpoConfig",
    "PolicyParams",
    "Question",
    "ReferencePolicy",
    "RewardBreakdown",
    "RewardConfig",
    "ScoredSegmentation",
    "TrainConfig",
    "Transcript",
    "check_answer",
    "check_lossless",
    "evaluate",
    "format_flags",
    "gen_question",
    "minimal_length",
    "parse_tagged",
    "redundancy_oracle",
    "render_tagged",
    "snapshot_reference",
    "sweep_alpha",
    "train",
]
