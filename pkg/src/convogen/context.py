"""Conversion of annotation families into one ordered set of factual sentences.

Order is always captions, then tree-derived sentences, then QA statements.
Sentence text is single-line (whitespace collapsed) so downstream prompts
can number one sentence per line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyDescription
from .metadata import BoxAnnotation, ImageRef, MetadataBundle, QAAnnotation

ORIGIN_CAPTION = "caption"
ORIGIN_QA = "qa"
ORIGIN_TREE = "tree"
ORIGINS = (ORIGIN_CAPTION, ORIGIN_QA, ORIGIN_TREE)

QA_FALLBACK_TEMPLATE = "Regarding '{question}', the answer is {answer}."

QA_BATCH_PROMPT = """Rewrite each question and answer pair below as one self-contained declarative statement about the image.
Reply with one numbered statement per line, matching the input numbering, and nothing else.

{pairs}"""

QA_SINGLE_PROMPT = """Rewrite the question and answer pair below as one self-contained declarative statement about the image. Reply with the statement only.

Q: {question}
A: {answer}"""

TREE_PROMPT = """Convert the following scene outline into factual sentences that densely describe the objects, their attributes, positions, and relations. Use only information present in the outline; do not invent anything.

{tree}"""

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_NUMBERED_LINE = re.compile(r"^\s*(\d+)\s*[.):]\s*(.+?)\s*$")


@dataclass(frozen=True)
class ContextSentence:
    text: str
    origin: str
    source: str
    char_len: int


def make_sentence(text: str, origin: str, source: str) -> ContextSentence:
    cleaned = " ".join(text.split())
    if not cleaned:
        raise ValueError("context sentence must be non-empty")
    if origin not in ORIGINS:
        raise ValueError(f"unknown origin {origin!r}")
    return ContextSentence(text=cleaned, origin=origin, source=source, char_len=len(cleaned))


@dataclass(frozen=True)
class ContextSet:
    image: ImageRef
    sentences: tuple[ContextSentence, ...]
    total_chars: int

    @classmethod
    def build(cls, image: ImageRef, sentences: Iterable[ContextSentence]) -> "ContextSet":
        sentences = tuple(sentences)
        return cls(
            image=image,
            sentences=sentences,
            total_chars=sum(s.char_len for s in sentences),
        )

    def origins(self) -> frozenset[str]:
        return frozenset(s.origin for s in self.sentences)

    def without(self, drop: set[int]) -> "ContextSet":
        """New set without the 0-based indices in ``drop``."""
        return ContextSet.build(
            self.image,
            (s for i, s in enumerate(self.sentences) if i not in drop),
        )

    def numbered(self) -> str:
        return "\n".join(f"{i}. {s.text}" for i, s in enumerate(self.sentences, 1))


@dataclass(frozen=True)
class ConversionPrompts:
    qa_batch: str = QA_BATCH_PROMPT
    qa_single: str = QA_SINGLE_PROMPT
    tree: str = TREE_PROMPT

    @classmethod
    def from_dir(cls, path: str | Path) -> "ConversionPrompts":
        """Override defaults with qa_batch.txt / qa_single.txt / tree.txt files."""
        base = Path(path)
        kwargs = {}
        for name in ("qa_batch", "qa_single", "tree"):
            candidate = base / f"{name}.txt"
            if candidate.exists():
                kwargs[name] = candidate.read_text(encoding="utf-8")
        return cls(**kwargs)


def split_sentences(text: str) -> list[str]:
    parts: list[str] = []
    for chunk in text.splitlines():
        parts.extend(_SENTENCE_SPLIT.split(chunk))
    return [p.strip() for p in parts if p.strip()]


def _parse_numbered(reply: str, expected: int) -> Optional[list[str]]:
    found: dict[int, str] = {}
    for line in reply.splitlines():
        match = _NUMBERED_LINE.match(line)
        if match:
            found.setdefault(int(match.group(1)), match.group(2))
    if all(i in found and found[i] for i in range(1, expected + 1)):
        return [found[i] for i in range(1, expected + 1)]
    return None


def qa_to_statement(
    qa: QAAnnotation,
    llm,
    conv_prompts: ConversionPrompts = ConversionPrompts(),
    max_attempts: int = 3,
) -> ContextSentence:
    """Turn one QA pair into a declarative statement.

    Malformed (empty) model output is retried up to ``max_attempts``; after
    that the deterministic template keeps the metadata from being lost.
    """
    prompt = conv_prompts.qa_single.format(question=qa.question, answer=qa.answer)
    for _ in range(max_attempts):
        reply = llm.complete(prompt, stage="qa_conversion")
        line = " ".join(reply.split())
        if line:
            return make_sentence(line, ORIGIN_QA, qa.source)
    fallback = QA_FALLBACK_TEMPLATE.format(question=qa.question, answer=qa.answer)
    return make_sentence(fallback, ORIGIN_QA, qa.source)


def qas_to_statements(
    qas: Sequence[QAAnnotation],
    llm,
    conv_prompts: ConversionPrompts = ConversionPrompts(),
    max_attempts: int = 3,
) -> list[ContextSentence]:
    """Batch conversion with one numbered call; degrades to per-item calls."""
    if not qas:
        return []
    if len(qas) == 1:
        return [qa_to_statement(qas[0], llm, conv_prompts, max_attempts)]
    pairs = "\n".join(
        f"{i}. Q: {qa.question} A: {qa.answer}" for i, qa in enumerate(qas, 1)
    )
    prompt = conv_prompts.qa_batch.format(pairs=pairs)
    for _ in range(max_attempts):
        reply = llm.complete(prompt, stage="qa_conversion")
        statements = _parse_numbered(reply, len(qas))
        if statements:
            return [
                make_sentence(text, ORIGIN_QA, qa.source)
                for text, qa in zip(statements, qas)
            ]
    return [qa_to_statement(qa, llm, conv_prompts, max_attempts) for qa in qas]


def tree_to_description(
    ascii_tree: str,
    llm,
    conv_prompts: ConversionPrompts = ConversionPrompts(),
    source: str = "tree",
    max_attempts: int = 3,
) -> list[ContextSentence]:
    """Describe a serialized scene tree as individual factual sentences."""
    if not ascii_tree.strip():
        return []
    prompt = conv_prompts.tree.format(tree=ascii_tree)
    for _ in range(max_attempts):
        reply = llm.complete(prompt, stage="tree_conversion")
        sentences = split_sentences(reply)
        if sentences:
            return [make_sentence(s, ORIGIN_TREE, source) for s in sentences]
    raise EmptyDescription("model yielded no sentences for the scene tree")


def boxes_to_plain_sentences(boxes: Sequence[BoxAnnotation]) -> list[str]:
    """Concatenation-style box rendering used when tree conversion is off."""
    out = []
    for b in boxes:
        x, y, w, h = b.bbox
        cx, cy = int(round(x + w / 2)), int(round(y + h / 2))
        attrs = f" ({', '.join(b.attributes)})" if b.attributes else ""
        out.append(
            f"There is a {b.label.lower().strip()}{attrs} at ({cx}, {cy}) "
            f"with size {int(round(w))}x{int(round(h))}."
        )
    return out


def assemble_context(
    bundle: MetadataBundle,
    tree_text: str,
    llm,
    conv_prompts: ConversionPrompts = ConversionPrompts(),
    plain_box_sentences: Optional[Sequence[str]] = None,
    max_attempts: int = 3,
) -> ContextSet:
    """Build the full ordered context for one image.

    Captions are copied verbatim, the tree (or plain box lines) is turned
    into tree-origin sentences, and every QA pair yields exactly one
    statement (fallbacks included), so no annotation is silently dropped.
    """
    sentences: list[ContextSentence] = [
        make_sentence(c.text, ORIGIN_CAPTION, c.source) for c in bundle.captions
    ]
    if tree_text.strip():
        box_sources = ",".join(sorted({b.source for b in bundle.boxes})) or "tree"
        sentences.extend(
            tree_to_description(
                tree_text, llm, conv_prompts, source=box_sources, max_attempts=max_attempts
            )
        )
    elif plain_box_sentences:
        box_sources = ",".join(sorted({b.source for b in bundle.boxes})) or "tree"
        sentences.extend(
            make_sentence(s, ORIGIN_TREE, box_sources) for s in plain_box_sentences
        )
    sentences.extend(qas_to_statements(bundle.qas, llm, conv_prompts, max_attempts))
    return ContextSet.build(bundle.image, sentences)
