"""English intents to Nile, Nile parsing, conflict checks and goal extraction.

Translation is retrieval-based: the query is matched against an exemplar
corpus with TF-IDF cosine similarity, and the best exemplar's Nile text is
used as a template whose bandwidth and endpoint slots are filled from the
query.
"""

from __future__ import annotations

import json
import math
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from typing import NamedTuple, Protocol, Sequence

UNITS_KBPS = {"kbps": 1, "mbps": 1_000, "gbps": 1_000_000}
MODES = ("max", "min")
UNSUPPORTED_CLAUSES = frozenset({"for", "allow", "block", "add", "remove", "unset", "start"})
NUM_TERM = "<num>"


class IntentError(ValueError):
    """Base class for everything the frontend can reject."""

    kind = "intent-error"


class EmptyIntentError(IntentError):
    kind = "empty-intent"


class UntranslatableIntentError(IntentError):
    kind = "untranslatable-intent"


class AmbiguousIntentError(IntentError):
    kind = "ambiguous-intent"


class UnknownUnitError(IntentError):
    kind = "unknown-unit"


class NonPositiveValueError(IntentError):
    kind = "non-positive-value"


class TranslationBackendError(IntentError):
    kind = "translation-backend"


class CorpusError(IntentError):
    kind = "corpus"


class NileSyntaxError(IntentError):
    kind = "nile-syntax"

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ConflictError(IntentError):
    kind = "conflict"

    def __init__(self, conflicts: list[Conflict]):
        super().__init__("; ".join(c.describe() for c in conflicts))
        self.conflicts = conflicts


# --- tokens -------------------------------------------------------------------

class NumToken(NamedTuple):
    value: Decimal
    unit: str | None

    def __repr__(self) -> str:
        return f"<num:{self.value}{' ' + self.unit if self.unit else ''}>"


_RAW = re.compile(r"\d+(?:\.\d+)?[a-z]*|[a-z0-9_]+(?:-[a-z0-9_]+)*")
_NUM = re.compile(r"(\d+(?:\.\d+)?)([a-z]*)")


def normalize(text: str) -> list:
    """Lowercase, drop punctuation, split on whitespace; numbers absorb a unit.

    Both ``300kbps`` and ``300 kbps`` become ``NumToken(300, 'kbps')``.
    """
    raw = _RAW.findall(text.lower())
    out: list = []
    i = 0
    while i < len(raw):
        m = _NUM.fullmatch(raw[i])
        if m is None:
            out.append(raw[i])
        elif m.group(2) in UNITS_KBPS:
            out.append(NumToken(Decimal(m.group(1)), m.group(2)))
        elif m.group(2):
            out.append(raw[i])  # "5g", "1st": a word, not a quantity
        elif i + 1 < len(raw) and raw[i + 1] in UNITS_KBPS:
            out.append(NumToken(Decimal(m.group(1)), raw[i + 1]))
            i += 1
        else:
            out.append(NumToken(Decimal(m.group(1)), None))
        i += 1
    if not out:
        raise EmptyIntentError("intent is empty after normalization")
    return out


def terms(tokens: Sequence) -> list[str]:
    return [NUM_TERM if isinstance(t, NumToken) else t for t in tokens]


# --- Nile ---------------------------------------------------------------------

_LABEL_BAD = re.compile(r"['\n\r]")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class BandwidthBound:
    mode: str
    value: int
    unit: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"bound mode must be max or min, got {self.mode!r}")
        if self.unit not in UNITS_KBPS:
            raise UnknownUnitError(f"unknown unit {self.unit!r}")
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            raise TypeError("bound value must be an int")
        if self.value <= 0:
            raise NonPositiveValueError(f"bandwidth value must be positive, got {self.value}")

    @property
    def kbps(self) -> int:
        return self.value * UNITS_KBPS[self.unit]


@dataclass(frozen=True)
class NileIntent:
    name: str
    origin: str
    destination: str
    bandwidth_bound: BandwidthBound

    def __post_init__(self):
        if not _IDENT.fullmatch(self.name):
            raise ValueError(f"intent name must be an identifier, got {self.name!r}")
        for label in (self.origin, self.destination):
            if not label or _LABEL_BAD.search(label):
                raise ValueError(f"bad endpoint label {label!r}")

    @property
    def pair(self) -> tuple[str, str]:
        return self.origin, self.destination


def render_nile(intent: NileIntent) -> str:
    b = intent.bandwidth_bound
    return (f"define intent {intent.name}: from endpoint('{intent.origin}') "
            f"to endpoint('{intent.destination}') "
            f"set bandwidth('{b.mode}', '{b.value}', '{b.unit}')")


class _Lexeme(NamedTuple):
    kind: str  # ident, string, punct, eof
    text: str
    line: int
    col: int


_LEX = re.compile(r"(?P<ws>\s+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|'(?P<string>[^'\n]*)'"
                  r"|(?P<punct>[:(),])")


def _lex(text: str) -> list[_Lexeme]:
    out, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _LEX.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            what = "unterminated string" if text[pos] == "'" else f"unexpected character {text[pos]!r}"
            raise NileSyntaxError(what, line, col)
        kind = m.lastgroup
        if kind == "ws":
            chunk = m.group()
            if "\n" in chunk:
                line += chunk.count("\n")
                line_start = pos + chunk.rindex("\n") + 1
        else:
            out.append(_Lexeme(kind, m.group(kind), line, col))
        pos = m.end()
    out.append(_Lexeme("eof", "", line, pos - line_start + 1))
    return out


class _Parser:
    """Recursive descent over the single-clause grammar

    intent   := 'define' 'intent' IDENT ':' 'from' endpoint 'to' endpoint clause
    endpoint := 'endpoint' '(' STRING ')'
    clause   := 'set' 'bandwidth' '(' STRING ',' STRING ',' STRING ')'
    """

    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    def peek(self) -> _Lexeme:
        return self.toks[self.i]

    def fail(self, what: str, tok: _Lexeme | None = None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise NileSyntaxError(f"expected {what}, found {found}", tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> _Lexeme:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            self.fail(repr(text) if text else kind, tok)
        self.i += 1
        return tok

    def keyword(self, word: str):
        tok = self.peek()
        if tok.kind == "ident" and tok.text in UNSUPPORTED_CLAUSES and tok.text != word:
            raise NileSyntaxError(f"unsupported Nile clause '{tok.text}'; only a single "
                                  "'set bandwidth' is accepted", tok.line, tok.col)
        return self.expect("ident", word)

    def endpoint(self) -> str:
        self.keyword("endpoint")
        self.expect("punct", "(")
        tok = self.expect("string")
        if not tok.text:
            raise NileSyntaxError("empty endpoint label", tok.line, tok.col)
        self.expect("punct", ")")
        return tok.text

    def intent(self) -> NileIntent:
        self.keyword("define")
        self.keyword("intent")
        name = self.expect("ident").text
        self.expect("punct", ":")
        self.keyword("from")
        origin = self.endpoint()
        self.keyword("to")
        destination = self.endpoint()
        bound = self.clause()
        tok = self.peek()
        if tok.kind == "ident" and (tok.text in UNSUPPORTED_CLAUSES or tok.text == "set"):
            raise NileSyntaxError(f"unsupported Nile clause '{tok.text}'; only a single "
                                  "'set bandwidth' is accepted", tok.line, tok.col)
        if tok.kind != "eof":
            self.fail("end of input")
        return NileIntent(name, origin, destination, bound)

    def clause(self) -> BandwidthBound:
        self.keyword("set")
        self.keyword("bandwidth")
        self.expect("punct", "(")
        mode = self.expect("string")
        self.expect("punct", ",")
        value = self.expect("string")
        self.expect("punct", ",")
        unit = self.expect("string")
        self.expect("punct", ")")
        if mode.text not in MODES:
            raise NileSyntaxError(f"bandwidth mode must be 'max' or 'min', got '{mode.text}'",
                                  mode.line, mode.col)
        v = value.text.strip()
        if not re.fullmatch(r"[+-]?\d+", v):
            raise NileSyntaxError(f"bandwidth value must be an integer, got '{value.text}'",
                                  value.line, value.col)
        if int(v) <= 0:
            raise NonPositiveValueError(f"line {value.line}, col {value.col}: bandwidth value "
                                        f"must be positive, got {int(v)}")
        u = unit.text.strip().lower()
        if u not in UNITS_KBPS:
            raise UnknownUnitError(f"line {unit.line}, col {unit.col}: unknown unit '{unit.text}'")
        return BandwidthBound(mode.text, int(v), u)


def parse_nile(text: str) -> NileIntent:
    return _Parser(text).intent()


@dataclass(frozen=True)
class BandwidthGoal:
    beta_target: int  # kbps
    source_intent: NileIntent

    def __post_init__(self):
        if self.beta_target <= 0:
            raise NonPositiveValueError("beta_target must be positive")


def extract_bandwidth(intent: NileIntent) -> BandwidthGoal:
    return BandwidthGoal(intent.bandwidth_bound.kbps, intent)


# --- conflicts ----------------------------------------------------------------

@dataclass(frozen=True)
class Conflict:
    candidate: NileIntent
    existing: NileIntent
    reason: str

    def describe(self) -> str:
        return (f"{self.candidate.name} conflicts with {self.existing.name} on "
                f"{self.existing.origin}->{self.existing.destination}: {self.reason}")


def _incompatible(a: BandwidthBound, b: BandwidthBound) -> str | None:
    if a.mode == b.mode:
        if a.kbps != b.kbps:
            return f"different {a.mode} bounds ({a.kbps} vs {b.kbps} kbps)"
        return None
    hi, lo = (a, b) if a.mode == "max" else (b, a)
    if hi.kbps < lo.kbps:
        return f"max {hi.kbps} kbps below min {lo.kbps} kbps"
    return None


def detect_conflict(candidate: NileIntent, store: IntentStore | Sequence[NileIntent]) -> list[Conflict]:
    active = store.active if isinstance(store, IntentStore) else store
    out = []
    for existing in active:
        if existing.pair != candidate.pair:
            continue
        reason = _incompatible(candidate.bandwidth_bound, existing.bandwidth_bound)
        if reason:
            out.append(Conflict(candidate, existing, reason))
    return out


@dataclass
class IntentStore:
    """Accepted intents. Not synchronized; callers serialize ``admit``."""

    active: list[NileIntent] = field(default_factory=list)

    def admit(self, intent: NileIntent) -> None:
        conflicts = detect_conflict(intent, self)
        if conflicts:
            raise ConflictError(conflicts)
        self.active.append(intent)

    @classmethod
    def load(cls, path) -> IntentStore:
        """One Nile intent per non-blank line; ``#`` starts a comment line."""
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                try:
                    store.admit(parse_nile(line))
                except NileSyntaxError as exc:
                    raise NileSyntaxError(f"{path}: {exc.args[0]}", lineno, exc.col) from exc
        return store

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(render_nile(i) + "\n" for i in self.active)


# --- retrieval ----------------------------------------------------------------

@dataclass(frozen=True)
class NaturalIntent:
    text: str
    id: str | None = None

    def __post_init__(self):
        if not " ".join(self.text.split()):
            raise EmptyIntentError("intent text is empty")


class ExemplarCorpus:
    """Ordered (english, nile) pairs with smoothed IDF weights over the English side.

    ``idf(term) = ln((1 + N) / (1 + df)) + 1``; document vectors are raw term
    counts times IDF.
    """

    def __init__(self, entries: Sequence[tuple[str, str]]):
        if not entries:
            raise CorpusError("exemplar corpus needs at least one entry")
        self.entries = [(str(en), str(nile)) for en, nile in entries]
        self.intents = [parse_nile(nile) for _, nile in self.entries]
        self.tokens = [normalize(en) for en, _ in self.entries]
        seen = {}
        for k, toks in enumerate(self.tokens):
            key = tuple(terms(toks))
            if key in seen:
                raise CorpusError(f"entries {seen[key]} and {k} have the same English text")
            seen[key] = k
        n = len(self.entries)
        df: dict[str, int] = {}
        for toks in self.tokens:
            for t in set(terms(toks)):
                df[t] = df.get(t, 0) + 1
        self.term_index = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in sorted(df.items())}
        self._vectors = [self.vector(toks) for toks in self.tokens]
        self.endpoints = frozenset(e for i in self.intents for e in i.pair)

    def __len__(self) -> int:
        return len(self.entries)

    def vector(self, tokens: Sequence) -> dict[str, float]:
        counts: dict[str, int] = {}
        for t in terms(tokens):
            if t in self.term_index:
                counts[t] = counts.get(t, 0) + 1
        return {t: c * self.term_index[t] for t, c in counts.items()}

    def similarity(self, tokens: Sequence, k: int) -> float:
        return _cosine(self.vector(tokens), self._vectors[k])

    @classmethod
    def from_text(cls, text: str, source: str = "<corpus>") -> ExemplarCorpus:
        """Records separated by ``---`` lines; each holds ``EN: ...`` then Nile lines."""
        entries, english, nile, start = [], None, [], 1

        def close(lineno):
            nonlocal english, nile
            if english is None and not nile:
                return
            if english is None or not nile:
                raise CorpusError(f"{source}:{start}: record needs an 'EN:' line and Nile text")
            entries.append((english, "\n".join(nile)))
            english, nile = None, []

        for lineno, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            if s == "---":
                close(lineno)
                start = lineno + 1
            elif english is None and s.startswith("EN:"):
                english = s[3:].strip()
                start = lineno
            elif s and english is None:
                raise CorpusError(f"{source}:{lineno}: expected 'EN:' line, found {s!r}")
            elif s:
                nile.append(line)
        close(None)
        try:
            return cls(entries)
        except NileSyntaxError as exc:
            raise CorpusError(f"{source}: bad Nile in exemplar: {exc}") from exc

    @classmethod
    def load(cls, path) -> ExemplarCorpus:
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), str(path))

    @classmethod
    def bundled(cls) -> ExemplarCorpus:
        text = resources.files("nileztn").joinpath("data/exemplars.txt").read_text("utf-8")
        return cls.from_text(text, "exemplars.txt")


def _cosine(u: dict[str, float], v: dict[str, float]) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[t] for t, x in u.items() if t in v)
    return dot / (nu * nv)


class Match(NamedTuple):
    index: int
    similarity: float
    english: str
    nile: str


def retrieve_exemplars(query: Sequence, corpus: ExemplarCorpus, k: int = 3) -> list[Match]:
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = [corpus.similarity(query, i) for i in range(len(corpus))]
    # rounding keeps float noise from overriding the lower-index tie rule
    order = sorted(range(len(corpus)), key=lambda i: (-round(sims[i], 12), i))
    return [Match(i, sims[i], *corpus.entries[i]) for i in order[:k]]


# --- translation --------------------------------------------------------------

def _bandwidth_mention(tokens: Sequence) -> tuple[int, str]:
    nums = [t for t in tokens if isinstance(t, NumToken) and t.unit is not None]
    if not nums:
        raise UntranslatableIntentError("no bandwidth quantity (number with kbps/mbps/gbps) found")
    values = {t.value * UNITS_KBPS[t.unit] for t in nums}
    if len(values) > 1:
        shown = ", ".join(f"{t.value} {t.unit}" for t in nums)
        raise AmbiguousIntentError(f"several different bandwidths mentioned: {shown}")
    value, unit = nums[0].value, nums[0].unit
    # 2.5 mbps -> 2500 kbps; Nile values are integers
    units = list(UNITS_KBPS)
    while value != value.to_integral_value() and units.index(unit) > 0:
        value *= 1000
        unit = units[units.index(unit) - 1]
    if value != value.to_integral_value():
        raise UntranslatableIntentError(f"bandwidth {nums[0].value} {nums[0].unit} is finer than 1 kbps")
    if value <= 0:
        raise NonPositiveValueError("bandwidth must be positive")
    return int(value), unit


_DETERMINERS = frozenset({"the", "a", "an", "my", "our", "your", "their"})


def _word_after(tokens: Sequence, i: int) -> tuple[str | None, int]:
    """Next word after position ``i``, skipping determiners; returns it and its index."""
    j = i + 1
    while j < len(tokens) and tokens[j] in _DETERMINERS:
        j += 1
    if j < len(tokens) and isinstance(tokens[j], str):
        return tokens[j], j
    return None, j


def _endpoints(tokens: Sequence, known: frozenset[str]) -> tuple[str | None, str | None]:
    """``from X`` gives the origin; ``to Y`` the destination.

    Without a ``from`` the word after ``to`` only counts when it is an
    endpoint the corpus already knows, so "limit streaming to 450 kbps" or
    "want to get" do not produce endpoints.
    """
    origin = dest = None
    start = 0
    for i, t in enumerate(tokens):
        if t == "from":
            w, j = _word_after(tokens, i)
            if w:
                origin, start = w, j + 1
                break
    for i in range(start, len(tokens)):
        if tokens[i] == "to":
            w, _ = _word_after(tokens, i)
            if w and (origin is not None or w in known):
                dest = w
                break
    return origin, dest


def translate(intent: NaturalIntent, corpus: ExemplarCorpus, k: int = 3) -> NileIntent:
    tokens = normalize(intent.text)
    value, unit = _bandwidth_mention(tokens)
    top = retrieve_exemplars(tokens, corpus, k)[0]
    template = corpus.intents[top.index]
    origin, dest = _endpoints(tokens, corpus.endpoints)
    name = intent.id if intent.id and _IDENT.fullmatch(intent.id) else template.name
    return NileIntent(name, origin or template.origin, dest or template.destination,
                      BandwidthBound(template.bandwidth_bound.mode, value, unit))


class TranslationBackend(Protocol):
    def translate_text(self, text: str) -> str:
        """Return Nile text for an English intent."""


@dataclass(frozen=True)
class HttpTranslationClient:
    """POSTs ``{"text": ...}`` as JSON and expects ``{"nile_text": ...}`` back."""

    url: str
    timeout: float = 10.0

    def translate_text(self, text: str) -> str:
        body = json.dumps({"text": text}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TranslationBackendError(f"translation service at {self.url} failed: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("nile_text"), str):
            raise TranslationBackendError("translation service response lacks a 'nile_text' string")
        return payload["nile_text"]


def translate_with_backend(intent: NaturalIntent, backend: TranslationBackend) -> NileIntent:
    """Same contract as ``translate``; any backend failure becomes TranslationBackendError."""
    try:
        return parse_nile(backend.translate_text(intent.text))
    except TranslationBackendError:
        raise
    except Exception as exc:  # noqa: BLE001 - a misbehaving backend must not crash callers
        raise TranslationBackendError(f"translation backend failed: {exc}") from exc
