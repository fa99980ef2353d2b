"""Word-embedding tables, per-channel tokenization, and input-matrix assembly.

Tables use the word2vec exchange formats: a text format ("<count> <dim>"
header, then one token plus ``dim`` ASCII decimals per line) and the binary
variant (same header line, then token bytes, a 0x20 separator, and ``dim``
little-endian IEEE-754 32-bit floats per entry). Values are widened to 64-bit
on load; tables are frozen after load and never fine-tuned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EmbeddingTable",
    "TokenizerKind",
    "TokenMatrix",
    "EmbeddingFormatError",
    "load_word2vec_text",
    "save_word2vec_text",
    "load_word2vec_binary",
    "save_word2vec_binary",
    "load_embedding_table",
    "tokenize",
    "embed",
]

_MAX_TOKEN_BYTES = 1000  # corruption guard for the binary reader
DEFAULT_PAD_MINIMUM = 2  # largest filter height in the default configuration
DEFAULT_MAX_TOKENS = 400


class EmbeddingFormatError(ValueError):
    """Raised when an embedding file violates the format contract."""


class TokenizerKind(str, enum.Enum):
    ENGLISH_LOWER_WHITESPACE = "english_lower_whitespace"
    CHINESE_CHAR = "chinese_char"
    CHINESE_WORD_GREEDY = "chinese_word_greedy"


@dataclass(frozen=True)
class EmbeddingTable:
    """A vocabulary plus a dense |vocab| x dim matrix of word vectors."""

    dim: int
    vocab: Mapping[str, int]
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.shape != (len(self.vocab), self.dim):
            raise ValueError(
                f"vector matrix shape {self.vectors.shape} does not match "
                f"{len(self.vocab)} tokens of dimension {self.dim}"
            )
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def vector(self, token: str) -> np.ndarray | None:
        idx = self.vocab.get(token)
        return None if idx is None else self.vectors[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self.vocab)


def make_table(tokens: Sequence[str], vectors: np.ndarray) -> EmbeddingTable:
    """Build a table from parallel token / row sequences, rejecting duplicates."""
    vocab: dict[str, int] = {}
    for i, tok in enumerate(tokens):
        if not tok:
            raise EmbeddingFormatError(f"empty token at entry {i}")
        if tok in vocab:
            raise EmbeddingFormatError(f"duplicate token {tok!r} at entry {i}")
        vocab[tok] = i
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    return EmbeddingTable(dim=vectors.shape[1], vocab=vocab, vectors=vectors)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def _parse_header(line: str, where: str) -> tuple[int, int]:
    fields = line.split()
    if len(fields) != 2:
        raise EmbeddingFormatError(f"malformed header in {where}: {line.strip()!r}")
    try:
        count, dim = int(fields[0]), int(fields[1])
    except ValueError:
        raise EmbeddingFormatError(f"malformed header in {where}: {line.strip()!r}") from None
    if count < 0 or dim < 1:
        raise EmbeddingFormatError(f"malformed header in {where}: {line.strip()!r}")
    return count, dim


def load_word2vec_text(path) -> EmbeddingTable:
    """Parse a word2vec text table; strict about count, width, and duplicates."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise EmbeddingFormatError(f"malformed header in {path}: empty file")
        count, dim = _parse_header(header, str(path))
        tokens: list[str] = []
        rows = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            line = fh.readline()
            if not line:
                raise EmbeddingFormatError(
                    f"truncated table in {path}: header promised {count} entries, got {i}"
                )
            fields = line.split()
            if len(fields) != dim + 1:
                raise EmbeddingFormatError(
                    f"entry {i} in {path} has {len(fields) - 1} values, expected {dim}"
                )
            tokens.append(fields[0])
            try:
                rows[i] = [float(x) for x in fields[1:]]
            except ValueError:
                raise EmbeddingFormatError(
                    f"entry {i} ({fields[0]!r}) in {path} has a non-numeric value"
                ) from None
        trailing = fh.read().strip()
        if trailing:
            raise EmbeddingFormatError(
                f"trailing data in {path} after the {count} promised entries"
            )
    return make_table(tokens, rows)


def save_word2vec_text(table: EmbeddingTable, path) -> None:
    """Write the text format; 9 significant digits, enough to round-trip f32."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for tok, idx in table.vocab.items():
            vals = " ".join(f"{v:.9g}" for v in table.vectors[idx])
            fh.write(f"{tok} {vals}\n")


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

def load_word2vec_binary(path) -> EmbeddingTable:
    """Parse the binary word2vec table; identical semantics to the text loader."""
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise EmbeddingFormatError(f"malformed header in {path}: no header line")
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError:
        raise EmbeddingFormatError(f"malformed header in {path}: not ASCII") from None
    count, dim = _parse_header(header, str(path))
    pos = nl + 1
    vec_bytes = 4 * dim
    tokens: list[str] = []
    rows = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        sep = data.find(b" ", pos)
        if sep < 0 or sep - pos > _MAX_TOKEN_BYTES:
            raise EmbeddingFormatError(
                f"entry {i} in {path}: token exceeds {_MAX_TOKEN_BYTES} bytes or file is corrupt"
            )
        try:
            tokens.append(data[pos:sep].decode("utf-8"))
        except UnicodeDecodeError:
            raise EmbeddingFormatError(f"entry {i} in {path}: token is not valid UTF-8") from None
        pos = sep + 1
        if pos + vec_bytes > len(data):
            raise EmbeddingFormatError(f"entry {i} in {path}: file truncated mid-vector")
        rows[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += vec_bytes
        if pos < len(data) and data[pos] == 0x0A:
            pos += 1
    if pos != len(data):
        raise EmbeddingFormatError(
            f"trailing data in {path} after the {count} promised entries"
        )
    return make_table(tokens, rows)


def save_word2vec_binary(table: EmbeddingTable, path) -> None:
    """Write the binary format (values narrowed to 32-bit, newline-terminated)."""
    with open(path, "wb") as fh:
        fh.write(f"{len(table)} {table.dim}\n".encode("ascii"))
        f32 = table.vectors.astype("<f4")
        for tok, idx in table.vocab.items():
            fh.write(tok.encode("utf-8"))
            fh.write(b" ")
            fh.write(f32[idx].tobytes())
            fh.write(b"\n")


def load_embedding_table(path) -> EmbeddingTable:
    """Dispatch on extension: .bin is binary, anything else is text."""
    if str(path).endswith(".bin"):
        return load_word2vec_binary(path)
    return load_word2vec_text(path)


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

def _tokenize_chinese_char(text: str) -> list[str]:
    tokens: list[str] = []
    run: list[str] = []  # pending ASCII letter run
    for ch in text:
        if ("a" <= ch <= "z") or ("A" <= ch <= "Z"):
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if ch.isspace():
            continue
        tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def _tokenize_greedy(text: str, vocab: Mapping[str, int], max_len: int) -> list[str]:
    chars = [ch for ch in text if not ch.isspace()]
    tokens: list[str] = []
    i = 0
    n = len(chars)
    while i < n:
        match = None
        for length in range(min(max_len, n - i), 1, -1):
            cand = "".join(chars[i:i + length])
            if cand in vocab:
                match = cand
                break
        if match is None:
            match = chars[i]
        tokens.append(match)
        i += len(match)
    return tokens


def tokenize(kind: TokenizerKind, text: str, vocab: Mapping[str, int] | None = None) -> list[str]:
    """Split text according to the channel's convention.

    english_lower_whitespace lowercases and splits on whitespace runs.
    chinese_char yields one token per code point, dropping whitespace but
    keeping embedded ASCII letter runs whole. chinese_word_greedy repeatedly
    takes the longest vocabulary-matching prefix (a stand-in for a real
    segmenter), falling back to single code points; it needs ``vocab``.
    """
    kind = TokenizerKind(kind)
    if kind is TokenizerKind.ENGLISH_LOWER_WHITESPACE:
        return text.lower().split()
    if kind is TokenizerKind.CHINESE_CHAR:
        return _tokenize_chinese_char(text)
    if vocab is None:
        raise ValueError("chinese_word_greedy requires an embedding vocabulary")
    max_len = max((len(t) for t in vocab), default=1)
    return _tokenize_greedy(text, vocab, max_len)


# ---------------------------------------------------------------------------
# input matrix assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenMatrix:
    """Embedded token sequence: n x k matrix plus the tokens it came from.

    Rows beyond the token count are all-zero padding so that the matrix always
    has at least ``pad_minimum`` rows (valid convolution needs n >= d).
    """

    tokens: tuple[str, ...]
    matrix: np.ndarray
    oov_count: int = 0

    def __post_init__(self):
        self.matrix.setflags(write=False)


def embed(
    table: EmbeddingTable,
    tokens: Sequence[str],
    pad_minimum: int = DEFAULT_PAD_MINIMUM,
    max_tokens: int | None = DEFAULT_MAX_TOKENS,
) -> TokenMatrix:
    """Stack embedding vectors for ``tokens`` into an input matrix.

    Out-of-vocabulary tokens map to the zero vector. When ``max_tokens`` is
    set and the sequence is longer, only the most recent tokens are kept.
    """
    if pad_minimum < 1:
        raise ValueError("pad_minimum must be >= 1")
    toks = list(tokens)
    if max_tokens is not None and len(toks) > max_tokens:
        toks = toks[-max_tokens:]
    rows = max(len(toks), pad_minimum)
    mat = np.zeros((rows, table.dim), dtype=np.float64)
    oov = 0
    for i, tok in enumerate(toks):
        idx = table.vocab.get(tok)
        if idx is None:
            oov += 1
        else:
            mat[i] = table.vectors[idx]
    return TokenMatrix(tokens=tuple(toks), matrix=mat, oov_count=oov)
