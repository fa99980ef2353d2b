"""Synthetic bilingual fixture corpus, a stand-in for the licensed dialog data.

The generator is a pure function of its arguments. Every ontology value gets a
fixed English surface form (lowercased words of the value text) and a unique
two-character Chinese word; filler tokens come in aligned English/Chinese
pairs. Segment utterances mention the surface phrases of the segment's gold
values inside filler, on both language sides. ``noise`` replaces that fraction
of Chinese-side tokens with random vocabulary words, emulating translation
errors; ``english_ambiguity`` collapses that fraction of each slot's values
onto a shared English surface (their Chinese words stay distinct), emulating
translation ambiguity, so only the Chinese side can tell such values apart.
"""

from __future__ import annotations

import importlib.resources
import json
import re

import numpy as np

from .corpus import Frame, Ontology, Segment, Turn, ontology_from_obj
from .embeddings import EmbeddingTable, make_table

__all__ = [
    "fixture_ontology",
    "generate_fixture_corpus",
    "ENGLISH_FILLERS",
]

SEGMENTS_PER_SESSION = 5

# Disjoint from every surface token of the shipped fixture ontology.
ENGLISH_FILLERS = (
    "well okay you know can take look maybe really quite just go see there "
    "here this that one two uh um ah so right yah good nice fine then also"
).split()

_CJK_BASE = 0x4E00
_FILLER_CHAR_OFFSET = 4000  # keep filler characters disjoint from value characters


def fixture_ontology() -> Ontology:
    """The shipped 5-topic, 30-pair fixture ontology."""
    raw = importlib.resources.files("mcdst.data").joinpath("fixture_ontology.json").read_text("utf-8")
    return ontology_from_obj(json.loads(raw))


def _surface_tokens(value: str) -> list[str]:
    return [t for t in re.split(r"[^0-9a-zA-Z]+", value.lower()) if t]


def _chinese_word(index: int, offset: int = 0) -> str:
    base = _CJK_BASE + offset + 2 * index
    return chr(base) + chr(base + 1)


def generate_fixture_corpus(
    seed: int,
    n_segments: int,
    ontology: Ontology,
    noise: float = 0.0,
    *,
    english_ambiguity: float = 0.0,
    embedding_dim: int = 16,
    transcript_language: str = "english",
) -> tuple[list[Segment], dict[str, EmbeddingTable]]:
    """Build a labeled corpus plus matching embedding tables.

    Returns ``(segments, tables)`` with tables keyed ``english_word``,
    ``chinese_word`` and ``chinese_char``. Deterministic in all arguments;
    the tables depend only on (seed, ontology, embedding_dim).
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    if not 0.0 <= english_ambiguity <= 1.0:
        raise ValueError("english_ambiguity must be in [0, 1]")
    if transcript_language not in ("english", "chinese"):
        raise ValueError(f"unknown transcript language {transcript_language!r}")

    rng_tab = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_amb = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    # surface forms: one Chinese word per ontology value, English words from
    # the value text (possibly shared within a slot under ambiguity)
    value_keys = [(t, s, v) for t, slots in ontology.topics.items() for s in slots for v in slots[s]]
    zh_value_word = {key: _chinese_word(i) for i, key in enumerate(value_keys)}
    en_surface = {key: _surface_tokens(key[2]) for key in value_keys}
    for topic, slots in ontology.topics.items():
        for slot, values in slots.items():
            n_pairs = int(len(values) * english_ambiguity / 2)
            if n_pairs == 0:
                continue
            order = rng_amb.permutation(len(values))
            for p in range(n_pairs):
                keep = (topic, slot, values[order[2 * p]])
                alias = (topic, slot, values[order[2 * p + 1]])
                en_surface[alias] = en_surface[keep]

    zh_fillers = [_chinese_word(i, _FILLER_CHAR_OFFSET) for i in range(len(ENGLISH_FILLERS))]
    zh_words = sorted(set(zh_value_word.values())) + zh_fillers

    # embedding tables (drawn before corpus assembly, from their own stream)
    def _vectors(count: int) -> np.ndarray:
        v = rng_tab.normal(0.0, 1.0 / np.sqrt(embedding_dim), (count, embedding_dim))
        return v.astype(np.float32).astype(np.float64)

    en_tokens = sorted({tok for toks in en_surface.values() for tok in toks})
    en_tokens += [f for f in ENGLISH_FILLERS if f not in en_tokens]
    en_tokens += ["guide:", "tourist:"]
    tables = {
        "english_word": make_table(en_tokens, _vectors(len(en_tokens))),
        "chinese_word": make_table(zh_words, _vectors(len(zh_words))),
    }
    zh_chars = sorted({ch for w in zh_words for ch in w})
    tables["chinese_char"] = make_table(zh_chars, _vectors(len(zh_chars)))

    # corpus assembly
    topics = list(ontology.topics)
    segments: list[Segment] = []
    for i in range(n_segments):
        topic = topics[i % len(topics)]
        slots = list(ontology.topics[topic])
        n_gold = int(rng.integers(1, min(3, len(slots)) + 1))
        gold_slots = [slots[j] for j in rng.permutation(len(slots))[:n_gold]]
        gold: dict[str, frozenset[str]] = {}
        for slot in gold_slots:
            values = ontology.values(topic, slot)
            n_vals = 2 if (len(values) > 1 and rng.random() < 0.3) else 1
            picks = [values[j] for j in rng.permutation(len(values))[:n_vals]]
            gold[slot] = frozenset(picks)
        mentions = [(topic, slot, v) for slot in gold_slots for v in sorted(gold[slot])]

        n_turns = int(rng.integers(2, 5))
        turns: list[Turn] = []
        for ti in range(n_turns):
            # aligned (english tokens, chinese words) units
            units: list[tuple[list[str], list[str]]] = []
            if ti == 0:
                mentioned = mentions
            else:
                mentioned = [m for m in mentions if rng.random() < 0.5]
            for key in mentioned:
                units.append((en_surface[key], [zh_value_word[key]]))
            for _ in range(int(rng.integers(4, 8))):
                fi = int(rng.integers(0, len(ENGLISH_FILLERS)))
                units.append(([ENGLISH_FILLERS[fi]], [zh_fillers[fi]]))
            units = [units[j] for j in rng.permutation(len(units))]

            en_text = " ".join(tok for unit in units for tok in unit[0])
            zh_tokens = [w for unit in units for w in unit[1]]
            if noise > 0.0:
                zh_tokens = [
                    zh_words[int(rng.integers(0, len(zh_words)))] if rng.random() < noise else w
                    for w in zh_tokens
                ]
            zh_text = "".join(zh_tokens)
            hyps = [zh_text]
            if rng.random() < 0.3:  # extra hypotheses are parsed but unused
                degraded = [
                    zh_words[int(rng.integers(0, len(zh_words)))] if rng.random() < 0.5 else w
                    for w in zh_tokens
                ]
                hyps.append("".join(degraded))
            speaker = "Guide" if ti % 2 == 0 else "Tourist"
            if transcript_language == "english":
                turns.append(Turn(speaker=speaker, transcript=en_text, translations=tuple(hyps)))
            else:
                turns.append(Turn(speaker=speaker, transcript=zh_text, translations=(en_text,)))

        segments.append(
            Segment(
                topic=topic,
                turns=tuple(turns),
                gold=Frame(slots=gold),
                session=i // SEGMENTS_PER_SESSION,
            )
        )
    return segments, tables
