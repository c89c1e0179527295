"""Tagged segmentation wire format: parsing, rendering, and structural checks.

A scored segmentation is serialized as an alternating run of elements

    <seg1>first chunk</seg1><score1>5</score1><seg2>...</seg2><score2>...</score2>

Unindexed tags (``<seg>``/``<score>``) are accepted on parse; rendering always
emits the indexed form. Chunk contents are whitespace-normalized (runs of
whitespace collapse to a single space, ends trimmed), so the concatenation of
chunk texts equals the normalized original content.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Reserved tokens of the answer envelope. A well-formed response ends with
# exactly one ANSWER_MARK followed by a single digit and a final END_MARK.
ANSWER_MARK = "ANS"
END_MARK = "END"
DIGITS = tuple(str(d) for d in range(10))


class TagParseError(ValueError):
    """Base class for all tagged-text parse failures."""


class MalformedTags(TagParseError):
    """Unbalanced, interleaved, or stray material outside tag pairs."""


class ScoreOutOfRange(TagParseError):
    """Score is not an integer in 1..5."""


class CountMismatch(TagParseError):
    """Number of scores differs from number of chunks."""


class EmptyChunk(TagParseError):
    """A segment carries no tokens."""


class InvalidSegmentation(ValueError):
    """Segmentation violates its structural invariants."""


@dataclass(frozen=True)
class Transcript:
    """A reasoning path as an ordered token sequence."""

    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ScoredSegmentation:
    """Chunks as half-open token ranges over a transcript, one score per chunk."""

    spans: tuple[tuple[int, int], ...]
    scores: tuple[int, ...]

    @property
    def chunk_count(self) -> int:
        return len(self.spans)

    def chunk_lengths(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in self.spans)

    def chunk_texts(self, t: Transcript) -> tuple[str, ...]:
        return tuple(" ".join(t.tokens[a:b]) for a, b in self.spans)

    def validate(self, t: Transcript) -> None:
        """Raise InvalidSegmentation unless spans losslessly partition ``t``."""
        if len(self.scores) != len(self.spans):
            raise InvalidSegmentation("scores length differs from chunk count")
        if not all(isinstance(w, int) and 1 <= w <= 5 for w in self.scores):
            raise InvalidSegmentation("scores must be integers in 1..5")
        if not check_lossless(self, t):
            raise InvalidSegmentation("spans do not partition the transcript")


@dataclass(frozen=True)
class FormatFlags:
    """Per-agent structural adherence bits."""

    reason_ok: int
    seg_ok: int
    score_ok: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.reason_ok, self.seg_ok, self.score_ok)


_TAG_RE = re.compile(r"<(/?)(seg|score)([0-9]*)>")


def _normalize(text: str) -> str:
    return " ".join(text.split())


def parse_tagged(text: str) -> tuple[ScoredSegmentation, Transcript]:
    """Parse tagged text into a segmentation and the reconstructed transcript.

    Accepts indexed and unindexed tags; only whitespace may appear outside
    elements and nesting is rejected. Raises a TagParseError subclass on any
    structural violation; never raises anything else for string input.
    """
    elements: list[tuple[str, str]] = []  # (kind, content)
    pos = 0
    while True:
        m = _TAG_RE.search(text, pos)
        if m is None:
            if text[pos:].strip():
                raise MalformedTags("stray text outside tag elements")
            break
        if m.group(1):
            raise MalformedTags(f"unexpected closing tag at offset {m.start()}")
        if text[pos : m.start()].strip():
            raise MalformedTags("stray text between tag elements")
        kind, index = m.group(2), m.group(3)
        close = _TAG_RE.search(text, m.end())
        if close is None:
            raise MalformedTags(f"unclosed <{kind}{index}> tag")
        if not close.group(1) or close.group(2) != kind or close.group(3) != index:
            raise MalformedTags(
                f"<{kind}{index}> closed by {close.group(0)!r} (interleaved or mismatched)"
            )
        elements.append((kind, text[m.end() : close.start()]))
        pos = close.end()

    if not elements:
        raise MalformedTags("no tag elements found")

    chunk_texts = [c for kind, c in elements if kind == "seg"]
    score_texts = [c for kind, c in elements if kind == "score"]
    if len(chunk_texts) != len(score_texts):
        raise CountMismatch(f"{len(chunk_texts)} chunks but {len(score_texts)} scores")

    scores: list[int] = []
    for raw in score_texts:
        raw = raw.strip()
        if not re.fullmatch(r"[+-]?[0-9]+", raw):
            raise ScoreOutOfRange(f"score {raw!r} is not an integer")
        w = int(raw)
        if not 1 <= w <= 5:
            raise ScoreOutOfRange(f"score {w} outside 1..5")
        scores.append(w)

    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for chunk in chunk_texts:
        parts = _normalize(chunk).split()
        if not parts:
            raise EmptyChunk("segment carries no tokens")
        spans.append((len(tokens), len(tokens) + len(parts)))
        tokens.extend(parts)

    seg = ScoredSegmentation(spans=tuple(spans), scores=tuple(scores))
    return seg, Transcript(tokens=tuple(tokens))


def render_tagged(seg: ScoredSegmentation, t: Transcript) -> str:
    """Serialize to the canonical indexed tag form; round-trips through parse_tagged."""
    seg.validate(t)
    parts = []
    for i, (text, score) in enumerate(zip(seg.chunk_texts(t), seg.scores), start=1):
        parts.append(f"<seg{i}>{text}</seg{i}><score{i}>{score}</score{i}>")
    return "".join(parts)


def check_lossless(seg: ScoredSegmentation, t: Transcript) -> int:
    """1 iff the chunks partition the transcript exactly (contiguous, ordered, covering)."""
    expected = 0
    for a, b in seg.spans:
        if a != expected or b <= a:
            return 0
        expected = b
    return int(expected == len(t.tokens) and len(t.tokens) > 0)


def has_answer_envelope(tokens: tuple[str, ...]) -> bool:
    """True iff exactly one ANS, then one digit, then a final END."""
    if tokens.count(ANSWER_MARK) != 1 or len(tokens) < 3:
        return False
    i = tokens.index(ANSWER_MARK)
    return (
        i == len(tokens) - 3
        and tokens[i + 1] in DIGITS
        and tokens[i + 2] == END_MARK
    )


def format_flags(
    t: Transcript,
    seg: ScoredSegmentation | None,
    score_count: int | None = None,
) -> FormatFlags:
    """Structural adherence flags for the three roles.

    ``score_count`` defaults to the segmentation's own score list; pass it
    explicitly for externally parsed inputs where scores may be missing.
    """
    reason_ok = int(has_answer_envelope(t.tokens))
    if seg is None:
        return FormatFlags(reason_ok=reason_ok, seg_ok=0, score_ok=0)
    seg_ok = check_lossless(seg, t)
    if score_count is None:
        score_count = len(seg.scores)
    score_ok = int(
        score_count == len(seg.spans)
        and all(1 <= w <= 5 for w in seg.scores)
    )
    return FormatFlags(reason_ok=reason_ok, seg_ok=seg_ok, score_ok=score_ok)
