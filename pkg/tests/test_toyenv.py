"""Chain-Sum environment: questions, answer checking, redundancy, minimality."""

import itertools
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scma.toyenv import (
    BadArity,
    FILLER_TOKENS,
    Question,
    TOKEN_INDEX,
    VOCAB,
    canonical_transcript,
    check_answer,
    gen_question,
    minimal_length,
    question_from_json,
    question_to_json,
    redundancy_oracle,
)
from scma.transcript import Transcript


class TestVocab:
    def test_size_and_membership(self):
        assert len(VOCAB) == 17
        assert set(FILLER_TOKENS) < set(VOCAB)
        assert "ANS" in VOCAB and "END" in VOCAB and "ANS" != "END"

    def test_index_is_inverse(self):
        for i, tok in enumerate(VOCAB):
            assert TOKEN_INDEX[tok] == i


class TestQuestion:
    def test_answer_examples(self):
        assert Question((3, 4, 5)).answer == 2
        assert Question((0, 0)).answer == 0
        assert Question((9, 9, 9, 9, 9)).answer == 5

    def test_gen_question_range_and_determinism(self):
        q1 = gen_question(np.random.default_rng(5), 4)
        q2 = gen_question(np.random.default_rng(5), 4)
        assert q1 == q2
        assert len(q1.operands) == 4
        assert all(0 <= d <= 9 for d in q1.operands)

    def test_bad_arity(self):
        rng = np.random.default_rng(0)
        with pytest.raises(BadArity):
            gen_question(rng, 1)
        with pytest.raises(BadArity):
            gen_question(rng, 6)

    def test_json_round_trip(self):
        q = Question((1, 2, 3))
        assert question_from_json(question_to_json(q)) == q

    def test_json_inconsistent_answer_rejected(self):
        with pytest.raises(ValueError):
            question_from_json('{"operands": [1, 2], "answer": 9}')


def reference_check(q, t):
    """Regular-expression reference matcher for the answer envelope."""
    text = " ".join(t.tokens)
    pattern = rf"^(?:(?!ANS).)*\bANS {q.answer} END$"
    return int(re.match(pattern, text) is not None and "ANS" not in text[: text.rfind("ANS")])


class TestCheckAnswer:
    def test_canonical_correct(self):
        q = Question((3, 4, 5))
        t = Transcript(("3", "+", "4", "+", "5", "=", "ANS", "2", "END"))
        assert check_answer(q, t) == 1

    def test_wrong_digit(self):
        q = Question((3, 4, 5))
        t = Transcript(("3", "+", "4", "+", "5", "=", "ANS", "3", "END"))
        assert check_answer(q, t) == 0

    def test_no_end(self):
        q = Question((3, 4, 5))
        t = Transcript(("ANS", "2"))
        assert check_answer(q, t) == 0

    def test_matches_reference_matcher_10k_random(self):
        rng = np.random.default_rng(17)
        vocab = np.array(VOCAB)
        for _ in range(10_000):
            q = gen_question(rng, int(rng.integers(2, 6)))
            n = int(rng.integers(1, 15))
            t = Transcript(tuple(vocab[rng.integers(0, len(vocab), size=n)]))
            assert check_answer(q, t) == reference_check(q, t)


class TestRedundancyOracle:
    def test_filler_rule(self):
        q = Question((3, 4))
        t = Transcript(("3", "+", "4", "HMM", "=", "ANS", "7", "END"))
        flags = redundancy_oracle(q, t)
        assert flags == (True, True, True, False, True, True, True, True)

    def test_all_essential_without_filler_or_repeats(self):
        q = Question((3, 4))
        t = canonical_transcript(q)
        assert all(redundancy_oracle(q, t))

    def test_repeated_part_bigram(self):
        q = Question((3, 4))
        t = Transcript(("PART", "7", "PART", "7"))
        assert redundancy_oracle(q, t) == (True, True, False, False)


class TestMinimalLength:
    def test_formula(self):
        assert minimal_length(Question((1, 2, 3))) == 9
        assert minimal_length(Question((1, 2))) == 7

    def test_canonical_transcript_is_tight_and_correct(self):
        rng = np.random.default_rng(3)
        for k in range(2, 6):
            q = gen_question(rng, k)
            t = canonical_transcript(q)
            assert len(t.tokens) == minimal_length(q)
            assert check_answer(q, t) == 1

    def test_no_shorter_full_derivation_for_k2(self):
        """Enumeration: no transcript under 7 tokens both spells out the k=2
        computation (operands joined by +, then =) and passes the answer check.

        Only transcripts ending in the three-token answer envelope can pass,
        so enumerating every possible prefix of length 0..3 is exhaustive.
        """
        q = Question((3, 4))
        derivation = ("3", "+", "4", "=")
        for p in range(0, minimal_length(q) - 3):
            for prefix in itertools.product(VOCAB, repeat=p):
                for d in "0123456789":
                    t = Transcript(prefix + ("ANS", d, "END"))
                    if check_answer(q, t):
                        assert t.tokens[: len(derivation)] != derivation


@given(st.lists(st.integers(0, 9), min_size=2, max_size=5))
@settings(max_examples=200)
def test_answer_invariant(operands):
    q = Question(tuple(operands))
    assert q.answer == sum(operands) % 10
