"""Response-log ingestion: JSON-Lines parsing, normalization, grouping."""
from __future__ import annotations

import io
import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

ROLES = ("source", "target")
FIELDS = ("question_id", "language", "role", "ensemble_index", "raw_text",
          "category", "embedding", "correct", "answer_numeric")
REQUIRED = ("question_id", "language", "role", "ensemble_index", "raw_text")

YEAR_MIN, YEAR_MAX = 500, 2100
_YEAR = re.compile(r"(?<!\d)(?<!\d[.,])(\d{3,4})(?![.,]?\d)")


class LogFormatError(ValueError):
    """Invalid response log; ``line`` is 1-based, or None for cross-record errors."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        self.line = line
        self.field = field_name
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ResponseRecord:
    question_id: str
    language: str
    role: str
    ensemble_index: int
    raw_text: str
    category: str | int | None = None
    embedding: tuple[float, ...] | None = None
    correct: bool | None = None
    answer_numeric: int | None = None

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.question_id, self.language, self.role, self.ensemble_index)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in FIELDS}
        if self.embedding is not None:
            d["embedding"] = list(self.embedding)
        return {k: v for k, v in d.items() if v is not None}

    def to_json(self) -> str:
        """Canonical serialization: sorted keys, no whitespace, nulls omitted."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _reject_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise KeyError(k)
        seen[k] = v
    return seen


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _record_from_obj(obj, lineno: int) -> ResponseRecord:
    if not isinstance(obj, dict):
        raise LogFormatError("expected a JSON object", lineno)
    for k in REQUIRED:
        if k not in obj or obj[k] is None:
            raise LogFormatError(f"missing required field {k!r}", lineno, k)
    for k in ("question_id", "language", "raw_text"):
        if not isinstance(obj[k], str):
            raise LogFormatError(f"field {k!r} must be a string", lineno, k)
    if obj["role"] not in ROLES:
        raise LogFormatError(f"field 'role' must be one of {ROLES}, got {obj['role']!r}", lineno, "role")
    if not _is_int(obj["ensemble_index"]) or obj["ensemble_index"] < 0:
        raise LogFormatError("field 'ensemble_index' must be an integer >= 0", lineno, "ensemble_index")
    cat = obj.get("category")
    if cat is not None and not (isinstance(cat, str) or _is_int(cat)):
        raise LogFormatError("field 'category' must be a string or integer", lineno, "category")
    emb = obj.get("embedding")
    if emb is not None:
        if not isinstance(emb, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb
        ):
            raise LogFormatError("field 'embedding' must be a list of numbers", lineno, "embedding")
        emb = tuple(float(x) for x in emb)
    correct = obj.get("correct")
    if correct is not None and not isinstance(correct, bool):
        raise LogFormatError("field 'correct' must be a boolean", lineno, "correct")
    ans = obj.get("answer_numeric")
    if ans is not None and not _is_int(ans):
        raise LogFormatError("field 'answer_numeric' must be an integer", lineno, "answer_numeric")
    return ResponseRecord(obj["question_id"], obj["language"], obj["role"], obj["ensemble_index"],
                          obj["raw_text"], cat, emb, correct, ans)


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for raw in stream:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw


def parse_response_log(stream) -> list[ResponseRecord]:
    """Parse and validate a JSON-Lines response log.

    ``stream`` may be bytes, str, or any iterable of byte/str lines.  Blank
    lines are skipped; unknown fields are ignored.
    """
    records: list[ResponseRecord] = []
    seen: dict[tuple, int] = {}
    source_lang: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line, object_pairs_hook=_reject_duplicates)
        except KeyError as e:
            raise LogFormatError(f"duplicate JSON key {e.args[0]!r}", lineno, e.args[0]) from None
        except json.JSONDecodeError as e:
            raise LogFormatError(f"malformed JSON: {e.msg}", lineno) from None
        rec = _record_from_obj(obj, lineno)
        if rec.key in seen:
            raise LogFormatError(f"duplicate record key {rec.key} (first on line {seen[rec.key]})", lineno)
        seen[rec.key] = lineno
        if rec.role == "source":
            lang, first = source_lang.setdefault(rec.question_id, (rec.language, lineno))
            if lang != rec.language:
                raise LogFormatError(
                    f"question {rec.question_id!r} has source records in {lang!r} (line {first}) "
                    f"and {rec.language!r}", lineno, "language")
        records.append(rec)
    return records


def serialize_response_log(records: Iterable[ResponseRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def default_normalize(raw_text: str) -> str:
    text = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", raw_text).lower())
    text = " ".join(text.split())
    # strip trailing punctuation and whatever whitespace it exposes
    while text and unicodedata.category(text[-1])[0] in "PZ":
        text = text[:-1]
    return text


class NormalizationPolicy:
    """Maps raw response text to a canonical concept string."""

    def __call__(self, raw_text: str) -> str:
        return default_normalize(raw_text)


@dataclass
class MappingPolicy(NormalizationPolicy):
    """Default normalization followed by a lookup table of canonical forms.

    The table typically comes from an offline cross-language concept matcher.
    """

    table: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.table = {default_normalize(k): v for k, v in self.table.items()}

    def __call__(self, raw_text: str) -> str:
        text = default_normalize(raw_text)
        return self.table.get(text, text)

    @classmethod
    def from_json(cls, path) -> "MappingPolicy":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))


def normalize_response(raw_text: str, policy: Callable[[str], str] | None = None) -> str:
    """Canonical form of a response: NFKC, lowercase, collapsed whitespace,
    no trailing punctuation.  A custom ``policy`` replaces the default."""
    return (policy or default_normalize)(raw_text)


def extract_year(text: str) -> int | None:
    """First standalone 3-4 digit number in [500, 2100], or None.

    Digits inside longer digit runs or decimal numbers are skipped.  Any
    Unicode decimal digits are accepted.
    """
    for match in _YEAR.finditer(unicodedata.normalize("NFKC", text)):
        year = int(match.group(1))
        if YEAR_MIN <= year <= YEAR_MAX:
            return year
    return None


@dataclass
class QuestionGroup:
    question_id: str
    source_records: list[ResponseRecord]
    target_records: dict[str, list[ResponseRecord]]

    @property
    def source_language(self) -> str | None:
        return self.source_records[0].language if self.source_records else None

    def all_target(self) -> list[ResponseRecord]:
        return [r for lang in sorted(self.target_records) for r in self.target_records[lang]]


def group_records(records: Iterable[ResponseRecord]) -> list[QuestionGroup]:
    """Group by question id (sorted); records ordered by (role, language, ensemble index)."""
    by_q: dict[str, list[ResponseRecord]] = {}
    for r in records:
        by_q.setdefault(r.question_id, []).append(r)
    groups = []
    for qid in sorted(by_q):
        recs = sorted(by_q[qid], key=lambda r: (r.role, r.language, r.ensemble_index))
        src = [r for r in recs if r.role == "source"]
        tgt: dict[str, list[ResponseRecord]] = {}
        for r in recs:
            if r.role == "target":
                tgt.setdefault(r.language, []).append(r)
        if tgt and not src:
            raise LogFormatError(f"question {qid!r} has target records but no source records")
        groups.append(QuestionGroup(qid, src, tgt))
    return groups


def assign_categories(
    records: Iterable[ResponseRecord],
    policy: Callable[[str], str] | None = None,
    years: bool = False,
) -> list[ResponseRecord]:
    """Fill ``category`` with the normalized answer (and ``answer_numeric`` when ``years``).

    Records that already carry a category keep it.
    """
    out = []
    for r in records:
        changes = {}
        if r.category is None:
            changes["category"] = normalize_response(r.raw_text, policy)
        if years and r.answer_numeric is None:
            changes["answer_numeric"] = extract_year(r.raw_text)
        out.append(replace(r, **changes) if changes else r)
    return out
