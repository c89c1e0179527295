"""Shared-parameter, role-conditioned linear-softmax policy for all three agents.

One parameter matrix theta of shape (feature dim, max action count) serves the
Reason, Seg, and Score roles; roles are distinguished by dedicated feature
coordinates and by hard action masks. Log-probability gradients are analytic:
d log pi(a|o) / d theta = f(o) (x) (onehot(a) - pi(.|o)) on the unmasked slots.

The Reason observation deliberately withholds the question's answer: the only
answer-bearing feature is the running digit sum of tokens the policy has
already emitted before the first "=", gated on the last token being ANS. A
policy that skips the derivation can therefore only guess the final digit;
emitting the operands is what makes the answer feature informative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .toyenv import EQUALS, PLUS, Question, TOKEN_INDEX, VOCAB
from .transcript import ANSWER_MARK, DIGITS, END_MARK, ScoredSegmentation, Transcript

T_MAX = 64  # hard cap on generated response length

BEGIN = "<BEGIN>"  # padding symbol for empty context slots
_CTX_SYMBOLS = VOCAB + (BEGIN,)
_CTX_INDEX = {tok: i for i, tok in enumerate(_CTX_SYMBOLS)}
_CTX_WIDTH = len(_CTX_SYMBOLS)
CONTEXT_LEN = 3

_POS_EDGES = (0, 1, 2, 3, 4, 7, 15)  # buckets: 0,1,2,3,4,5-7,8-15,16+
_N_POS = len(_POS_EDGES) + 1

# Next-expected canonical-expression symbols: the ten digits, then "+", "=".
_EXPR_SYMBOLS = DIGITS + (PLUS, EQUALS)
_EXPR_INDEX = {tok: i for i, tok in enumerate(_EXPR_SYMBOLS)}


class AgentRole(Enum):
    REASON = 0
    SEG = 1
    SCORE = 2


def _block(start: int, width: int) -> tuple[int, int]:
    return start, start + width


# Feature layout: contiguous blocks, all binary except the chunk summary.
_o = 0
BIAS, _o = _block(_o, 1)[0], _o + 1
ROLE0, _o = _o, _o + 3
CTX0, _o = _o, _o + CONTEXT_LEN * _CTX_WIDTH
POS0, _o = _o, _o + _N_POS
KOH0, _o = _o, _o + 4  # operand count k-2
NEXT0, _o = _o, _o + len(_EXPR_SYMBOLS)
EXPR_DONE_NO_ANS, _o = _o, _o + 1
GATE0, _o = _o, _o + 10  # emitted digit sum mod 10, gated on last token == ANS
AWAITING_END, _o = _o, _o + 1
CHUNK0, _o = _o, _o + 4  # filler fraction, length scale, contains-ANS, is-last
FEATURE_DIM = _o

ACTION_DIM = len(VOCAB)

_ROLE_SLOTS = {
    AgentRole.REASON: np.arange(ACTION_DIM),
    AgentRole.SEG: np.arange(2),  # 0 = no boundary, 1 = boundary
    AgentRole.SCORE: np.arange(5),  # slot s means score s+1
}

FEATURE_LAYOUT = (
    f"v1 bias@{BIAS} role@{ROLE0}+3 ctx@{CTX0}+{CONTEXT_LEN}x{_CTX_WIDTH} "
    f"pos@{POS0}+{_N_POS} k@{KOH0}+4 next@{NEXT0}+{len(_EXPR_SYMBOLS)} "
    f"exprdone@{EXPR_DONE_NO_ANS} gate@{GATE0}+10 awaitend@{AWAITING_END} chunk@{CHUNK0}+4"
)


class IllegalAction(ValueError):
    """Action outside the role's action space."""


@dataclass
class PolicyParams:
    """Shared parameters for all three roles."""

    theta: np.ndarray
    layout: str = FEATURE_LAYOUT

    @classmethod
    def zeros(cls) -> "PolicyParams":
        return cls(theta=np.zeros((FEATURE_DIM, ACTION_DIM)))

    @classmethod
    def base_init(cls, copy_weight: float = 5.0, filler_bias: float = 2.5) -> "PolicyParams":
        """Competent-but-verbose starting point, the analogue of a pretrained model.

        The policy tends to continue the canonical derivation, answer with its
        own derived digit sum, and close the envelope, but also pads its output
        with inert filler tokens. Training is what sharpens correctness and
        strips the padding; nothing here encodes the reward.
        """
        theta = np.zeros((FEATURE_DIM, ACTION_DIM))
        for sym, j in _EXPR_INDEX.items():
            theta[NEXT0 + j, TOKEN_INDEX[sym]] = copy_weight
        for s in range(10):
            theta[GATE0 + s, TOKEN_INDEX[str(s)]] = copy_weight
        theta[EXPR_DONE_NO_ANS, TOKEN_INDEX[ANSWER_MARK]] = copy_weight
        theta[AWAITING_END, TOKEN_INDEX[END_MARK]] = copy_weight
        from .toyenv import FILLER_TOKENS

        role_row = ROLE0 + AgentRole.REASON.value
        for tok in FILLER_TOKENS:
            theta[role_row, TOKEN_INDEX[tok]] = filler_bias
        return cls(theta=theta)

    def copy(self) -> "PolicyParams":
        return PolicyParams(theta=self.theta.copy(), layout=self.layout)


@dataclass(frozen=True)
class ReferencePolicy:
    """Immutable snapshot of policy parameters."""

    theta: np.ndarray
    layout: str


def snapshot_reference(params: PolicyParams) -> ReferencePolicy:
    frozen = params.theta.copy()
    frozen.setflags(write=False)
    return ReferencePolicy(theta=frozen, layout=params.layout)


@dataclass(frozen=True)
class Observation:
    """Sparse feature vector plus its role."""

    role: AgentRole
    idx: np.ndarray
    val: np.ndarray

    def dense(self) -> np.ndarray:
        f = np.zeros(FEATURE_DIM)
        f[self.idx] = self.val
        return f


@dataclass(frozen=True)
class TokenRecord:
    """One decision as logged at sampling time."""

    obs: Observation
    action: int
    logp: float


def _pos_bucket(pos: int) -> int:
    for b, edge in enumerate(_POS_EDGES):
        if pos <= edge:
            return b
    return _N_POS - 1


class ReasonState:
    """Incremental rollout state for the Reason role's derived features."""

    def __init__(self, question: Question):
        self.question = question
        self.emitted: list[str] = []
        expr: list[str] = []
        for i, d in enumerate(question.operands):
            if i:
                expr.append(PLUS)
            expr.append(str(d))
        expr.append(EQUALS)
        self.expr = expr
        self.progress = 0  # longest prefix of expr matched as a subsequence
        self.gate_sum = 0  # digit sum before the first "=" (or ANS)
        self.gate_frozen = False
        self.ans_emitted = False

    def update(self, tok: str) -> None:
        if self.progress < len(self.expr) and tok == self.expr[self.progress]:
            self.progress += 1
        if not self.gate_frozen:
            if tok in DIGITS:
                self.gate_sum = (self.gate_sum + int(tok)) % 10
            if tok == EQUALS or tok == ANSWER_MARK:
                self.gate_frozen = True
        if tok == ANSWER_MARK:
            self.ans_emitted = True
        self.emitted.append(tok)


def _base_features(role: AgentRole, k: int, pos: int) -> tuple[list[int], list[float]]:
    idx = [BIAS, ROLE0 + role.value, POS0 + _pos_bucket(pos), KOH0 + (k - 2)]
    return idx, [1.0] * len(idx)


def _context_features(idx: list[int], val: list[float], window: list[str]) -> None:
    padded = [BEGIN] * (CONTEXT_LEN - len(window)) + window[-CONTEXT_LEN:]
    for slot, tok in enumerate(padded):
        idx.append(CTX0 + slot * _CTX_WIDTH + _CTX_INDEX[tok])
        val.append(1.0)


def encode_reason(state: ReasonState) -> Observation:
    q = state.question
    idx, val = _base_features(AgentRole.REASON, q.k, len(state.emitted))
    _context_features(idx, val, state.emitted)
    if state.progress < len(state.expr):
        idx.append(NEXT0 + _EXPR_INDEX[state.expr[state.progress]])
        val.append(1.0)
    elif not state.ans_emitted:
        idx.append(EXPR_DONE_NO_ANS)
        val.append(1.0)
    if state.emitted and state.emitted[-1] == ANSWER_MARK:
        idx.append(GATE0 + state.gate_sum)
        val.append(1.0)
    if (
        state.ans_emitted
        and len(state.emitted) >= 2
        and state.emitted[-2] == ANSWER_MARK
        and state.emitted[-1] in DIGITS
    ):
        idx.append(AWAITING_END)
        val.append(1.0)
    return Observation(AgentRole.REASON, np.array(idx), np.array(val))


def encode_seg(t: Transcript, boundary_pos: int, k: int) -> Observation:
    """Observation for the boundary decision after token ``boundary_pos``."""
    idx, val = _base_features(AgentRole.SEG, k, boundary_pos)
    _context_features(idx, val, list(t.tokens[: boundary_pos + 1]))
    return Observation(AgentRole.SEG, np.array(idx), np.array(val))


def encode_score(
    t: Transcript, span: tuple[int, int], chunk_index: int, is_last: int, k: int
) -> Observation:
    from .toyenv import FILLER_TOKENS

    idx, val = _base_features(AgentRole.SCORE, k, chunk_index)
    a, b = span
    chunk = t.tokens[a:b]
    filler_frac = sum(tok in FILLER_TOKENS for tok in chunk) / len(chunk)
    contains_ans = float(ANSWER_MARK in chunk or END_MARK in chunk)
    idx += [CHUNK0, CHUNK0 + 1, CHUNK0 + 2, CHUNK0 + 3]
    val += [filler_frac, min(len(chunk) / 10.0, 1.0), contains_ans, float(is_last)]
    return Observation(AgentRole.SCORE, np.array(idx), np.array(val))


def encode_observation(role: AgentRole, state) -> Observation:
    """Dispatch to the role-specific encoder; ``state`` matches the role."""
    if role is AgentRole.REASON:
        return encode_reason(state)
    if role is AgentRole.SEG:
        return encode_seg(*state)
    return encode_score(*state)


def _masked_distribution(theta: np.ndarray, obs: Observation) -> np.ndarray:
    """Probabilities over the role's slots (full-length vector, zeros elsewhere)."""
    slots = _ROLE_SLOTS[obs.role]
    logits = obs.val @ theta[obs.idx][:, slots]
    logits = logits - logits.max()
    e = np.exp(logits)
    p = np.zeros(ACTION_DIM)
    p[slots] = e / e.sum()
    return p


def action_distribution(params: PolicyParams, obs: Observation) -> np.ndarray:
    return _masked_distribution(params.theta, obs)


def log_prob_grad(
    params: PolicyParams, obs: Observation, action: int
) -> tuple[float, np.ndarray]:
    """Log-probability of ``action`` and its exact gradient w.r.t. theta."""
    slots = _ROLE_SLOTS[obs.role]
    if action not in slots:
        raise IllegalAction(f"action {action} illegal for role {obs.role.name}")
    p = _masked_distribution(params.theta, obs)
    logp = float(np.log(p[action]))
    delta = -p[slots]
    delta[np.searchsorted(slots, action)] += 1.0
    grad = np.zeros_like(params.theta)
    grad[np.ix_(obs.idx, slots)] = np.outer(obs.val, delta)
    return logp, grad


def _sample_slot(theta: np.ndarray, obs: Observation, rng: np.random.Generator) -> tuple[int, float]:
    p = _masked_distribution(theta, obs)
    slots = _ROLE_SLOTS[obs.role]
    probs = p[slots]
    action = int(slots[rng.choice(len(slots), p=probs)])
    return action, float(np.log(p[action]))


@dataclass
class ReasonSample:
    transcript: Transcript
    records: list[TokenRecord] = field(default_factory=list)


@dataclass
class SegSample:
    spans: tuple[tuple[int, int], ...]
    records: list[TokenRecord] = field(default_factory=list)


@dataclass
class ScoreSample:
    scores: tuple[int, ...]
    records: list[TokenRecord] = field(default_factory=list)


def sample_reasoning(
    params: PolicyParams, q: Question, rng: np.random.Generator
) -> ReasonSample:
    """Autoregressive token sampling until END or the hard cap."""
    state = ReasonState(q)
    records: list[TokenRecord] = []
    for _ in range(T_MAX):
        obs = encode_reason(state)
        action, logp = _sample_slot(params.theta, obs, rng)
        records.append(TokenRecord(obs=obs, action=action, logp=logp))
        tok = VOCAB[action]
        state.update(tok)
        if tok == END_MARK:
            break
    return ReasonSample(transcript=Transcript(tokens=tuple(state.emitted)), records=records)


def sample_segmentation(
    params: PolicyParams, t: Transcript, rng: np.random.Generator, k: int
) -> SegSample:
    """Binary boundary decision after each of the first |t|-1 tokens.

    The boundary after the final token is forced (probability 1) and is not a
    learnable action, so every sample is lossless by construction.
    """
    records: list[TokenRecord] = []
    boundaries: list[int] = []
    for i in range(len(t.tokens) - 1):
        obs = encode_seg(t, i, k)
        action, logp = _sample_slot(params.theta, obs, rng)
        records.append(TokenRecord(obs=obs, action=action, logp=logp))
        if action == 1:
            boundaries.append(i + 1)
    boundaries.append(len(t.tokens))
    spans: list[tuple[int, int]] = []
    start = 0
    for b in boundaries:
        spans.append((start, b))
        start = b
    return SegSample(spans=tuple(spans), records=records)


def sample_scores(
    params: PolicyParams,
    t: Transcript,
    spans: tuple[tuple[int, int], ...],
    rng: np.random.Generator,
    k: int,
) -> ScoreSample:
    records: list[TokenRecord] = []
    scores: list[int] = []
    n = len(spans)
    for i, span in enumerate(spans):
        obs = encode_score(t, span, i, int(i == n - 1), k)
        action, logp = _sample_slot(params.theta, obs, rng)
        records.append(TokenRecord(obs=obs, action=action, logp=logp))
        scores.append(action + 1)
    return ScoreSample(scores=tuple(scores), records=records)


def segmentation_from_samples(seg: SegSample, scores: ScoreSample) -> ScoredSegmentation:
    return ScoredSegmentation(spans=seg.spans, scores=scores.scores)


CHECKPOINT_VERSION = 1


def save_checkpoint(params: PolicyParams, path: str) -> None:
    rec = {
        "version": CHECKPOINT_VERSION,
        "layout": params.layout,
        "shape": list(params.theta.shape),
        "theta": params.theta.ravel().tolist(),
    }
    with open(path, "w") as f:
        json.dump(rec, f, sort_keys=True)


def load_checkpoint(path: str) -> PolicyParams:
    with open(path) as f:
        rec = json.load(f)
    if rec.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {rec.get('version')!r}")
    theta = np.array(rec["theta"], dtype=float).reshape(rec["shape"])
    return PolicyParams(theta=theta, layout=rec["layout"])
