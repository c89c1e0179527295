"""Chain-Sum: a synthetic verbose-reasoning task with checkable answers.

A question is a list of 2-5 digits; the answer is their sum mod 10. The
vocabulary includes inert filler tokens (CHECK, HMM) and a PART token for
restating partial results, so transcripts can be verbose without gaining
correctness. A ground-truth redundancy oracle exists for evaluation only and
is never consulted by any reward computation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .transcript import ANSWER_MARK, DIGITS, END_MARK, Transcript, has_answer_envelope

PLUS = "+"
EQUALS = "="
PART = "PART"
FILLER_TOKENS = ("CHECK", "HMM")

# Fixed vocabulary order; indices double as policy action ids for the Reason role.
VOCAB: tuple[str, ...] = DIGITS + (PLUS, EQUALS, PART) + FILLER_TOKENS + (ANSWER_MARK, END_MARK)
TOKEN_INDEX = {tok: i for i, tok in enumerate(VOCAB)}


class BadArity(ValueError):
    """Operand count outside 2..5."""


@dataclass(frozen=True)
class Question:
    operands: tuple[int, ...]

    @property
    def answer(self) -> int:
        return sum(self.operands) % 10

    @property
    def k(self) -> int:
        return len(self.operands)


def gen_question(rng: np.random.Generator, k: int) -> Question:
    if not 2 <= k <= 5:
        raise BadArity(f"operand count {k} outside 2..5")
    return Question(operands=tuple(int(d) for d in rng.integers(0, 10, size=k)))


def check_answer(q: Question, t: Transcript) -> int:
    """1 iff the transcript ends with  ANS <answer digit> END  and has no other ANS."""
    if not has_answer_envelope(t.tokens):
        return 0
    return int(t.tokens[-2] == str(q.answer))


def redundancy_oracle(q: Question, t: Transcript) -> tuple[bool, ...]:
    """Per-token essential flags (True = essential); evaluation-only ground truth.

    Filler tokens are always redundant; a repeated ``PART d`` bigram is
    redundant from its second occurrence on.
    """
    essential = [tok not in FILLER_TOKENS for tok in t.tokens]
    seen_parts: set[str] = set()
    for i, tok in enumerate(t.tokens[:-1]):
        if tok == PART and t.tokens[i + 1] in DIGITS:
            key = t.tokens[i + 1]
            if key in seen_parts:
                essential[i] = False
                essential[i + 1] = False
            else:
                seen_parts.add(key)
    return tuple(essential)


def minimal_length(q: Question) -> int:
    """Token count of the canonical shortest full derivation: 2k + 3."""
    return 2 * q.k + 3


def canonical_transcript(q: Question) -> Transcript:
    """The length-(2k+3) transcript spelling out the full computation."""
    tokens: list[str] = []
    for i, d in enumerate(q.operands):
        if i:
            tokens.append(PLUS)
        tokens.append(str(d))
    tokens += [EQUALS, ANSWER_MARK, str(q.answer), END_MARK]
    return Transcript(tokens=tuple(tokens))


def question_to_json(q: Question) -> str:
    return json.dumps({"operands": list(q.operands), "answer": q.answer})


def question_from_json(line: str) -> Question:
    rec = json.loads(line)
    q = Question(operands=tuple(int(d) for d in rec["operands"]))
    if "answer" in rec and int(rec["answer"]) != q.answer:
        raise ValueError("answer field inconsistent with operands")
    return q
