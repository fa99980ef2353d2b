"""Data model and ingestion for bilingual dialog corpora.

An ontology file is a JSON object mapping topic -> slot -> ordered list of
candidate values. A corpus file is a JSON array of sessions; each session is
an array of sub-dialog segments; each segment carries a topic, its turns
(speaker, transcript, up to five translation hypotheses), and an optional
gold frame. Both schemas are documented in ``schemas/`` at the repo root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Ontology",
    "Turn",
    "Segment",
    "Frame",
    "SegmentExample",
    "ChannelConfig",
    "TRANSCRIPT_ENGLISH",
    "TRANSCRIPT_CHINESE",
    "CorpusFormatError",
    "load_ontology",
    "load_corpus",
    "save_corpus",
    "build_examples",
]

SPEAKERS = ("Guide", "Tourist")
MAX_TRANSLATION_HYPOTHESES = 5
_SPEAKER_MARKS = {"Guide": "guide:", "Tourist": "tourist:"}


class CorpusFormatError(ValueError):
    """Raised when an ontology or corpus file violates its schema."""


@dataclass(frozen=True)
class Ontology:
    """topic -> slot -> ordered candidate values; value index = list position."""

    topics: Mapping[str, Mapping[str, tuple[str, ...]]]

    def slots(self, topic: str) -> tuple[str, ...]:
        return tuple(self.topics[topic])

    def values(self, topic: str, slot: str) -> tuple[str, ...]:
        return self.topics[topic][slot]

    def pairs(self) -> list[tuple[str, str]]:
        return [(t, s) for t, slots in self.topics.items() for s in slots]


@dataclass(frozen=True)
class Frame:
    """Dialog state: slot name -> set of ontology value texts."""

    slots: Mapping[str, frozenset[str]]

    @staticmethod
    def empty() -> "Frame":
        return Frame(slots={})

    def normalized(self) -> dict[str, frozenset[str]]:
        """Slots with at least one value; missing slot == empty set."""
        return {s: v for s, v in self.slots.items() if v}

    def get(self, slot: str) -> frozenset[str]:
        return self.slots.get(slot, frozenset())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.normalized() == other.normalized()

    def __hash__(self):
        return hash(frozenset(self.normalized().items()))

    def union(self, slot: str, values: Iterable[str]) -> "Frame":
        merged = dict(self.slots)
        merged[slot] = self.get(slot) | frozenset(values)
        return Frame(slots=merged)

    def to_json(self) -> dict[str, list[str]]:
        return {s: sorted(v) for s, v in sorted(self.normalized().items())}

    @staticmethod
    def from_json(obj: Mapping[str, Sequence[str]]) -> "Frame":
        return Frame(slots={s: frozenset(v) for s, v in obj.items()})


@dataclass(frozen=True)
class Turn:
    speaker: str
    transcript: str
    translations: tuple[str, ...] = ()


@dataclass(frozen=True)
class Segment:
    """A contiguous run of turns sharing one topic; the unit of labeling."""

    topic: str
    turns: tuple[Turn, ...]
    gold: Frame | None = None
    session: int = 0  # which session the segment came from, for output grouping


@dataclass(frozen=True)
class SegmentExample:
    """One training/inference instance: accumulated text per language side."""

    english_text: str
    chinese_text: str
    gold_bits: np.ndarray | None = None

    def __post_init__(self):
        if self.gold_bits is not None:
            self.gold_bits.setflags(write=False)


@dataclass(frozen=True)
class ChannelConfig:
    """Which language the transcript field holds; the other side comes from
    the 1-best translation hypothesis."""

    transcript_language: str  # "english" or "chinese"

    def __post_init__(self):
        if self.transcript_language not in ("english", "chinese"):
            raise ValueError(f"unknown transcript language {self.transcript_language!r}")


TRANSCRIPT_ENGLISH = ChannelConfig("english")   # training direction
TRANSCRIPT_CHINESE = ChannelConfig("chinese")   # test direction


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_ontology(path) -> Ontology:
    """Load and validate an ontology JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return ontology_from_obj(raw)


def ontology_from_obj(raw) -> Ontology:
    if not isinstance(raw, dict) or not raw:
        raise CorpusFormatError("ontology must be a non-empty object of topics")
    topics: dict[str, dict[str, tuple[str, ...]]] = {}
    for topic, slots in raw.items():
        if not isinstance(slots, dict) or not slots:
            raise CorpusFormatError(f"topic {topic!r} must map to a non-empty object of slots")
        topics[topic] = {}
        for slot, values in slots.items():
            if not isinstance(values, list) or not values:
                raise CorpusFormatError(f"slot {topic}/{slot} must have a non-empty value list")
            seen = set()
            for v in values:
                if not isinstance(v, str) or not v:
                    raise CorpusFormatError(f"slot {topic}/{slot} has a non-string value")
                if v in seen:
                    raise CorpusFormatError(f"duplicate value {v!r} in slot {topic}/{slot}")
                seen.add(v)
            topics[topic][slot] = tuple(values)
    return Ontology(topics=topics)


def _parse_turn(obj, where: str) -> Turn:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: turn must be an object")
    speaker = obj.get("speaker")
    if speaker not in SPEAKERS:
        raise CorpusFormatError(f"{where}: malformed speaker {speaker!r}")
    transcript = obj.get("transcript")
    if not isinstance(transcript, str) or not transcript:
        raise CorpusFormatError(f"{where}: transcript must be a non-empty string")
    translations = obj.get("translations", [])
    if not isinstance(translations, list) or not all(isinstance(t, str) for t in translations):
        raise CorpusFormatError(f"{where}: translations must be a list of strings")
    if len(translations) > MAX_TRANSLATION_HYPOTHESES:
        raise CorpusFormatError(
            f"{where}: {len(translations)} translation hypotheses, max is "
            f"{MAX_TRANSLATION_HYPOTHESES}"
        )
    return Turn(speaker=speaker, transcript=transcript, translations=tuple(translations))


def _parse_frame(obj, ontology: Ontology, topic: str, where: str) -> Frame:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: frame must be an object")
    slots = {}
    for slot, values in obj.items():
        if slot not in ontology.topics[topic]:
            raise CorpusFormatError(f"{where}: unknown slot {slot!r} for topic {topic!r}")
        legal = set(ontology.values(topic, slot))
        if not isinstance(values, list):
            raise CorpusFormatError(f"{where}: values of slot {slot!r} must be a list")
        for v in values:
            if v not in legal:
                raise CorpusFormatError(
                    f"{where}: value {v!r} of slot {slot!r} is not in the ontology"
                )
        slots[slot] = frozenset(values)
    return Frame(slots=slots)


def load_corpus(path, ontology: Ontology) -> list[Segment]:
    """Load a corpus JSON file, validating labels against the ontology.

    Returns segments in corpus order; each remembers its session index.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise CorpusFormatError("corpus must be an array of sessions")
    segments: list[Segment] = []
    for si, session in enumerate(raw):
        if not isinstance(session, list):
            raise CorpusFormatError(f"session {si} must be an array of segments")
        for gi, seg in enumerate(session):
            where = f"session {si}, segment {gi}"
            if not isinstance(seg, dict):
                raise CorpusFormatError(f"{where}: segment must be an object")
            topic = seg.get("topic")
            if topic not in ontology.topics:
                raise CorpusFormatError(f"{where}: unknown topic {topic!r}")
            turns_raw = seg.get("turns")
            if not isinstance(turns_raw, list) or not turns_raw:
                raise CorpusFormatError(f"{where}: turns must be a non-empty array")
            turns = tuple(
                _parse_turn(t, f"{where}, turn {ti}") for ti, t in enumerate(turns_raw)
            )
            gold = None
            if seg.get("frame") is not None:
                gold = _parse_frame(seg["frame"], ontology, topic, where)
            segments.append(Segment(topic=topic, turns=turns, gold=gold, session=si))
    return segments


def save_corpus(segments: Sequence[Segment], path) -> None:
    """Write segments back out in the corpus JSON schema, grouped by session."""
    sessions: dict[int, list] = {}
    for seg in segments:
        obj = {
            "topic": seg.topic,
            "turns": [
                {
                    "speaker": t.speaker,
                    "transcript": t.transcript,
                    "translations": list(t.translations),
                }
                for t in seg.turns
            ],
        }
        if seg.gold is not None:
            obj["frame"] = seg.gold.to_json()
        sessions.setdefault(seg.session, []).append(obj)
    out = [sessions[k] for k in sorted(sessions)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# example construction
# ---------------------------------------------------------------------------

def _side_texts(turn: Turn, config: ChannelConfig, where: str) -> tuple[str, str]:
    """(english, chinese) text of one turn under the given direction."""
    if config.transcript_language == "english":
        if not turn.translations:
            raise CorpusFormatError(f"{where}: missing Chinese translation")
        return turn.transcript, turn.translations[0]
    if not turn.translations:
        raise CorpusFormatError(f"{where}: missing English translation")
    return turn.translations[0], turn.transcript


def build_examples(
    segment: Segment,
    ontology: Ontology,
    topic: str,
    slot: str,
    config: ChannelConfig,
) -> list[SegmentExample]:
    """One example per turn, accumulating all turns of the segment so far.

    Each turn's text is prefixed with a literal speaker marker token. The
    English side pairs the transcript or the 1-best translation with the
    Chinese side according to ``config``. gold_bits marks this segment's gold
    values for the slot against the ontology's value order (None when the
    segment is unlabeled).
    """
    if topic != segment.topic:
        raise ValueError(f"segment topic is {segment.topic!r}, asked for {topic!r}")
    if slot not in ontology.topics[topic]:
        raise ValueError(f"slot {slot!r} does not belong to topic {topic!r}")
    values = ontology.values(topic, slot)
    bits = None
    if segment.gold is not None:
        gold_values = segment.gold.get(slot)
        bits = np.array([1.0 if v in gold_values else 0.0 for v in values])
    english_parts: list[str] = []
    chinese_parts: list[str] = []
    examples: list[SegmentExample] = []
    for ti, turn in enumerate(segment.turns):
        en, zh = _side_texts(turn, config, f"turn {ti}")
        mark = _SPEAKER_MARKS[turn.speaker]
        english_parts.append(f"{mark} {en}")
        chinese_parts.append(f"{mark} {zh}")
        examples.append(
            SegmentExample(
                english_text=" ".join(english_parts),
                chinese_text=" ".join(chinese_parts),
                gold_bits=None if bits is None else bits.copy(),
            )
        )
    return examples
