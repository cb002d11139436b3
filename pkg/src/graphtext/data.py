"""Dataset parsing, tokenization, linearization, and the vocabulary.

A dataset is UTF-8 JSON lines, one object per line:

    {"triples": [["head", "relation", "tail"], ...], "text": "..."}

Triples are linearized into a single token sequence: the prompt, a global
graph marker, then per triple the three span markers each followed by the
tokens of its entity or relation string. Parallel arrays record each
token's kind, owning triple, and owning span so the token graph can be
built downstream without re-deriving structure from surface forms.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

DEFAULT_PROMPT = "translate graph to English: "
MAX_SEQUENCE_LENGTH = 187
MAX_TARGET_LENGTH = 120

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
GRAPH_TOKEN = "<Graph>"
HEAD_TOKEN = "<H>"
REL_TOKEN = "<R>"
TAIL_TOKEN = "<T>"

RESERVED_TOKENS = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN,
                   GRAPH_TOKEN, HEAD_TOKEN, REL_TOKEN, TAIL_TOKEN]
PAD_ID, UNK_ID, BOS_ID, EOS_ID, GRAPH_ID, H_ID, R_ID, T_ID = range(8)


class DataError(ValueError):
    """Malformed dataset content; message carries line numbers/field names."""


class TokenKind(Enum):
    PROMPT = "PROMPT"
    GLOBAL = "GLOBAL"
    SPECIAL_H = "SPECIAL_H"
    SPECIAL_R = "SPECIAL_R"
    SPECIAL_T = "SPECIAL_T"
    ENTITY = "ENTITY"


SPECIAL_KINDS = (TokenKind.SPECIAL_H, TokenKind.SPECIAL_R, TokenKind.SPECIAL_T)


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass
class Example:
    triples: list[Triple]
    target_text: str = ""


@dataclass
class TokenizedGraphInput:
    """One linearized example, with per-token structural annotations.

    ``entity_span_id`` is a unique id per span occurrence (three spans per
    triple, numbered in sequence order). ``span_keys[sid]`` holds the
    normalized string of span ``sid``; spans whose strings normalize
    identically therefore carry matching keys, which is what the
    same-entity relation looks up.
    """
    token_ids: list[int]
    surface: list[str]
    kinds: list[TokenKind]
    triple_index: list[int | None]
    entity_span_id: list[int | None]
    span_keys: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)

    def validate(self) -> None:
        n = len(self.token_ids)
        if not (len(self.surface) == len(self.kinds) == len(self.triple_index)
                == len(self.entity_span_id) == n):
            raise DataError("parallel annotation arrays have unequal lengths")
        if sum(k is TokenKind.GLOBAL for k in self.kinds) != 1:
            raise DataError("expected exactly one global token")
        for i, k in enumerate(self.kinds):
            if k is TokenKind.ENTITY:
                if self.triple_index[i] is None or self.entity_span_id[i] is None:
                    raise DataError(f"entity token at {i} lacks span annotations")


# ---------------------------------------------------------------------------
# tokenizer

_PUNCT = set('.,;:!?()[]"\'')


def tokenize(text: str) -> list[str]:
    """Deterministic surface tokenizer.

    Underscores become spaces, words split on whitespace, the listed
    punctuation marks detach as single-character tokens, intra-token
    hyphens survive, and double quotes wrapping a whole word are
    stripped. Joining the output with single spaces and re-tokenizing
    returns the same list.
    """
    out: list[str] = []
    for word in text.replace("_", " ").split():
        # strip symmetric quoting like "1907-07-11" (interior quote-free)
        while (len(word) >= 2 and word[0] == '"' and word[-1] == '"'
               and '"' not in word[1:-1]):
            word = word[1:-1]
        run: list[str] = []
        for ch in word:
            if ch in _PUNCT:
                if run:
                    out.append("".join(run))
                    run = []
                out.append(ch)
            else:
                run.append(ch)
        if run:
            out.append("".join(run))
    return out


def normalize_entity(s: str) -> str:
    """Underscores to spaces, whitespace collapsed; case preserved."""
    return " ".join(s.replace("_", " ").split())


# ---------------------------------------------------------------------------
# dataset parsing


def parse_dataset(path: str, format: str = "jsonl") -> list[Example]:
    """Read a JSON-lines dataset; every malformed line fails loudly."""
    if format != "jsonl":
        raise DataError(f"unsupported dataset format {format!r}")
    examples: list[Example] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed record at line {lineno}: {exc.msg}") from None
            examples.append(_parse_record(record, lineno))
    return examples


def _parse_record(record, lineno: int) -> Example:
    if not isinstance(record, dict) or "triples" not in record:
        raise DataError(f"line {lineno}: expected an object with a 'triples' array")
    raw = record["triples"]
    if not isinstance(raw, list) or not raw:
        raise DataError(f"empty triple list at line {lineno}")
    triples = []
    for t in raw:
        if not (isinstance(t, list) and len(t) == 3
                and all(isinstance(x, str) for x in t)):
            raise DataError(f"line {lineno}: each triple must be 3 strings")
        for name, value in zip(("head", "relation", "tail"), t):
            if not normalize_entity(value):
                raise DataError(f"line {lineno}: empty {name} field")
        triples.append(Triple(*t))
    text = record.get("text", "")
    if not isinstance(text, str):
        raise DataError(f"line {lineno}: 'text' must be a string")
    return Example(triples=triples, target_text=text)


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Bijective token/id maps with fixed reserved ids on the first rows.

    The file form is one token per line; the line number is the id.
    """

    def __init__(self, tokens: Iterable[str]):
        toks = list(tokens)
        if toks[:len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise DataError("vocabulary must start with the reserved tokens")
        self._id_to_token = toks
        self._token_to_id = {t: i for i, t in enumerate(toks)}
        if len(self._token_to_id) != len(toks):
            dupes = [t for t, c in Counter(toks).items() if c > 1]
            raise DataError(f"duplicate vocabulary entries: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int], drop_reserved: bool = True) -> str:
        toks = [self._id_to_token[i] for i in ids]
        if drop_reserved:
            reserved = set(RESERVED_TOKENS)
            toks = [t for t in toks if t not in reserved]
        return " ".join(toks)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh]
        while toks and toks[-1] == "":
            toks.pop()
        return cls(toks)


def build_vocabulary(corpus: list[Example], min_count: int = 1,
                     prompt: str = DEFAULT_PROMPT) -> Vocabulary:
    """Reserved tokens, then prompt tokens, then corpus tokens with
    frequency >= min_count, in first-appearance order."""
    if not corpus:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    order: dict[str, None] = {}

    def see(tokens: list[str]) -> None:
        for t in tokens:
            counts[t] += 1
            order.setdefault(t)

    for ex in corpus:
        for tr in ex.triples:
            see(tokenize(tr.head))
            see(tokenize(tr.relation))
            see(tokenize(tr.tail))
        see(tokenize(ex.target_text))

    toks = list(RESERVED_TOKENS)
    taken = set(toks)
    for t in tokenize(prompt):
        if t not in taken:  # prompt tokens are always kept
            toks.append(t)
            taken.add(t)
    for t in order:
        if t not in taken and counts[t] >= min_count:
            toks.append(t)
            taken.add(t)
    return Vocabulary(toks)


# ---------------------------------------------------------------------------
# linearization

_SPECIAL_SURFACE = {TokenKind.SPECIAL_H: HEAD_TOKEN,
                    TokenKind.SPECIAL_R: REL_TOKEN,
                    TokenKind.SPECIAL_T: TAIL_TOKEN}


def linearize(example: Example, prompt: str, vocab: Vocabulary,
              max_sequence_length: int = MAX_SEQUENCE_LENGTH) -> TokenizedGraphInput:
    """Flatten an example into the marked-up token sequence.

    Raises rather than truncating when the result would exceed
    ``max_sequence_length``.
    """
    if not example.triples:
        raise DataError("example has no triples")
    surface: list[str] = []
    kinds: list[TokenKind] = []
    tri: list[int | None] = []
    span: list[int | None] = []
    span_keys: list[str] = []

    def emit(tok: str, kind: TokenKind, t: int | None, s: int | None) -> None:
        surface.append(tok)
        kinds.append(kind)
        tri.append(t)
        span.append(s)

    for tok in tokenize(prompt):
        emit(tok, TokenKind.PROMPT, None, None)
    emit(GRAPH_TOKEN, TokenKind.GLOBAL, None, None)

    for ti, triple in enumerate(example.triples):
        parts = ((TokenKind.SPECIAL_H, triple.head),
                 (TokenKind.SPECIAL_R, triple.relation),
                 (TokenKind.SPECIAL_T, triple.tail))
        for kind, text in parts:
            sid = len(span_keys)
            span_keys.append(normalize_entity(text))
            emit(_SPECIAL_SURFACE[kind], kind, ti, sid)
            words = tokenize(text)
            if not words:
                raise DataError(
                    f"triple {ti}: {kind.value} span tokenizes to nothing")
            for w in words:
                emit(w, TokenKind.ENTITY, ti, sid)

    if len(surface) > max_sequence_length:
        raise DataError(
            f"linearized length {len(surface)} exceeds the"
            f" {max_sequence_length}-token limit")
    out = TokenizedGraphInput(token_ids=vocab.encode(surface), surface=surface,
                              kinds=kinds, triple_index=tri,
                              entity_span_id=span, span_keys=span_keys)
    out.validate()
    return out


def encode_target(text: str, vocab: Vocabulary,
                  max_target_length: int = MAX_TARGET_LENGTH) -> list[int]:
    """Target ids framed by the sequence markers: BOS tokens EOS."""
    ids = [BOS_ID] + vocab.encode(tokenize(text)) + [EOS_ID]
    if len(ids) > max_target_length:
        raise DataError(
            f"target length {len(ids)} exceeds the {max_target_length}-token limit")
    return ids
