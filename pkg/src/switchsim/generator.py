"""JSON test templates and their instantiation into concrete messages.

A template file holds one test case::

    {
      "name": "balance-ok",
      "mti": "0200",
      "fields": {"3": "310000", "41": "TERM0001"},
      "randomize": [2, 11],
      "expected": {"39": "00", "54": "/[0-9]{12}/"},
      "patterns": {"2": "4[0-9]{15}"}
    }

``patterns`` is optional and overrides the field config for this template.
``expected`` may use key ``"0"`` to assert the response MTI. A directory of
template files is a suite, ordered by file name.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .codec import MAX_FIELD, MIN_FIELD, InvalidMti, IsoMsg, is_printable_ascii, validate_mti
from .regexgen import RegexError, UnsupportedRegexFeature, compile_pattern, generate_matching

SEED_MASK = (1 << 64) - 1
_TEMPLATE_KEYS = {"name", "mti", "fields", "randomize", "expected", "patterns"}
_REQUIRED_KEYS = {"name", "mti", "fields", "expected"}


class TemplateError(ValueError):
    pass


class SchemaError(TemplateError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnknownFieldNumber(TemplateError):
    def __init__(self, path: str, key: object):
        super().__init__(f"{path}: {key!r} is not a field number in {MIN_FIELD}..{MAX_FIELD}")
        self.path = path
        self.key = key


class MissingPattern(TemplateError):
    def __init__(self, n: int):
        super().__init__(f"field {n} is marked for randomization but has no pattern")
        self.field = n


class InvalidTemplateMti(TemplateError, InvalidMti):
    pass


def _field_number(path: str, key: object, allow_mti: bool = False) -> int:
    text = str(key)
    if isinstance(key, bool) or not text.isdigit():
        raise UnknownFieldNumber(path, key)
    n = int(text)
    if not (MIN_FIELD <= n <= MAX_FIELD or (allow_mti and n == 0)):
        raise UnknownFieldNumber(path, key)
    return n


def _check_patterns(doc: object, path: str) -> dict[int, str]:
    if not isinstance(doc, dict):
        raise SchemaError(path, "must be an object of field number -> pattern")
    patterns = {}
    for key, pattern in doc.items():
        n = _field_number(f"{path}.{key}", key)
        if not isinstance(pattern, str):
            raise SchemaError(f"{path}.{key}", "pattern must be a string")
        try:
            compile_pattern(pattern)
        except UnsupportedRegexFeature as exc:
            raise UnsupportedRegexFeature(f"{exc.feature} (field {n})", pattern) from None
        except RegexError as exc:
            raise SchemaError(f"{path}.{key}", str(exc)) from None
        patterns[n] = pattern
    return dict(sorted(patterns.items()))


@dataclass(frozen=True)
class FieldConfig:
    """Default generation pattern per field number."""

    patterns: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patterns", _check_patterns(dict(self.patterns), "$"))


def load_field_config(text: str) -> FieldConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "field config must be a JSON object")
    return FieldConfig(doc)


def default_field_config() -> FieldConfig:
    text = resources.files("switchsim").joinpath("data/field_config.json").read_text("utf-8")
    return load_field_config(text)


@dataclass(frozen=True)
class TestTemplate:
    __test__ = False  # not a pytest class

    name: str
    mti: str
    fields: Mapping[int, str]
    expected: Mapping[int, str]
    randomize: tuple[int, ...] = ()
    patterns: Mapping[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "mti": self.mti,
            "fields": {str(n): v for n, v in self.fields.items()},
            "randomize": list(self.randomize),
            "expected": {str(n): v for n, v in self.expected.items()},
        }
        if self.patterns:
            doc["patterns"] = {str(n): p for n, p in self.patterns.items()}
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_template(text: str) -> TestTemplate:
    """Parse and validate one template document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "template must be a JSON object")
    unknown = sorted(set(doc) - _TEMPLATE_KEYS)
    if unknown:
        raise SchemaError(f"$.{unknown[0]}", "unknown key")
    missing = sorted(_REQUIRED_KEYS - set(doc))
    if missing:
        raise SchemaError(f"$.{missing[0]}", "required key missing")

    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise SchemaError("$.name", "must be a non-empty string")
    try:
        mti = validate_mti(doc["mti"])
    except InvalidMti:
        raise InvalidTemplateMti(doc["mti"]) from None

    def string_map(key: str, allow_mti: bool = False) -> dict[int, str]:
        raw = doc[key]
        if not isinstance(raw, dict):
            raise SchemaError(f"$.{key}", "must be an object")
        out = {}
        for k, v in raw.items():
            n = _field_number(f"$.{key}.{k}", k, allow_mti)
            if not isinstance(v, str) or not is_printable_ascii(v):
                raise SchemaError(f"$.{key}.{k}", "value must be a printable ASCII string")
            out[n] = v
        return dict(sorted(out.items()))

    fields = string_map("fields")
    expected = string_map("expected", allow_mti=True)
    if not expected:
        raise SchemaError("$.expected", "a template must assert at least one response field")
    randomize = doc.get("randomize", [])
    if not isinstance(randomize, list):
        raise SchemaError("$.randomize", "must be a list of field numbers")
    numbers = []
    for i, item in enumerate(randomize):
        if not isinstance(item, (int, str)):
            raise UnknownFieldNumber(f"$.randomize[{i}]", item)
        n = _field_number(f"$.randomize[{i}]", item)
        if n in numbers:
            raise SchemaError(f"$.randomize[{i}]", f"field {n} listed twice")
        numbers.append(n)
    patterns = _check_patterns(doc.get("patterns", {}), "$.patterns")
    return TestTemplate(name, mti, fields, expected, tuple(numbers), patterns)


def load_template_file(path: str | Path) -> TestTemplate:
    path = Path(path)
    try:
        return load_template(path.read_text(encoding="utf-8"))
    except TemplateError as exc:
        exc.args = (f"{path.name}: {exc}",)
        exc.source = path
        raise


def load_suite(directory: str | Path) -> list[tuple[Path, TestTemplate]]:
    """All ``*.json`` templates in ``directory``, ordered by file name."""
    files = sorted(Path(directory).glob("*.json"), key=lambda p: p.name)
    return [(path, load_template_file(path)) for path in files]


def instantiate(template: TestTemplate, config: FieldConfig, seed: int) -> IsoMsg:
    """Build a message from ``template``; randomized fields are drawn from their patterns.

    Template-local patterns win over ``config``. Equal seeds give equal messages.
    """
    rng = random.Random(seed & SEED_MASK)
    values = dict(template.fields)
    for n in sorted(template.randomize):
        pattern = template.patterns.get(n, config.patterns.get(n))
        if pattern is None:
            raise MissingPattern(n)
        values[n] = generate_matching(pattern, rng)
    return IsoMsg(template.mti, values)
