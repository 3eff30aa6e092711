"""Random strings that fully match a regular expression.

Only a generation-friendly subset is accepted: literals, escaped
metacharacters, ``\\d \\w \\s`` (and their negations), character classes
with ranges and negation, ``.``, alternation, groups (plain or ``(?:...)``)
and the quantifiers ``? * + {n} {m,} {,n} {m,n}``. Unbounded repetition is
capped at ``UNBOUNDED_CAP`` extra repeats. Every generated character is
printable ASCII, so ``.`` and negated classes draw from 0x20..0x7E.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

UNBOUNDED_CAP = 8
PRINTABLE = frozenset(chr(c) for c in range(0x20, 0x7F))
_DIGITS = frozenset("0123456789")
_WORD = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_SPACE = frozenset(" ")
_SHORTHAND = {
    "d": _DIGITS, "D": PRINTABLE - _DIGITS,
    "w": _WORD, "W": PRINTABLE - _WORD,
    "s": _SPACE, "S": PRINTABLE - _SPACE,
}
_UNSUPPORTED_ESCAPES = {
    "b": "word boundary", "B": "word boundary", "A": "anchor", "Z": "anchor", "z": "anchor",
    "G": "anchor", "n": "non-printable escape", "r": "non-printable escape",
    "t": "non-printable escape", "f": "non-printable escape", "v": "non-printable escape",
    "x": "hex escape", "u": "unicode escape", "U": "unicode escape", "N": "named character",
    "p": "unicode property", "P": "unicode property",
}


class RegexError(ValueError):
    pass


class UnsupportedRegexFeature(RegexError):
    def __init__(self, feature: str, pattern: str = ""):
        super().__init__(f"unsupported regex feature: {feature}" + (f" in {pattern!r}" if pattern else ""))
        self.feature = feature


@dataclass(frozen=True)
class CharSet:
    chars: str  # sorted, for deterministic choice


@dataclass(frozen=True)
class Seq:
    items: tuple


@dataclass(frozen=True)
class Alt:
    options: tuple


@dataclass(frozen=True)
class Repeat:
    node: object
    low: int
    high: int


Node = Union[CharSet, Seq, Alt, Repeat]


class _Parser:
    def __init__(self, pattern: str):
        self.src = pattern
        self.pos = 0

    def error(self, reason: str) -> RegexError:
        return RegexError(f"{reason} at position {self.pos} in {self.src!r}")

    def peek(self) -> str | None:
        return self.src[self.pos] if self.pos < len(self.src) else None

    def take(self) -> str:
        ch = self.src[self.pos]
        self.pos += 1
        return ch

    def parse(self) -> Node:
        src = self.src
        if src.startswith("^"):
            self.pos = 1
        end = len(src)
        if src.endswith("$") and not src.endswith("\\$") and end > self.pos:
            self.src = src[:-1]
        node = self.alternation()
        if self.pos != len(self.src):
            raise self.error("unbalanced ')'")
        return node

    def alternation(self) -> Node:
        options = [self.sequence()]
        while self.peek() == "|":
            self.take()
            options.append(self.sequence())
        return options[0] if len(options) == 1 else Alt(tuple(options))

    def sequence(self) -> Node:
        items = []
        while self.peek() not in (None, "|", ")"):
            atom = self.atom()
            items.append(self.quantified(atom))
        return items[0] if len(items) == 1 else Seq(tuple(items))

    def atom(self) -> Node:
        ch = self.take()
        if ch == "(":
            if self.peek() == "?":
                if self.src.startswith("?:", self.pos):
                    self.pos += 2
                else:
                    raise UnsupportedRegexFeature("group extension (?...)", self.src)
            node = self.alternation()
            if self.peek() != ")":
                raise self.error("missing ')'")
            self.take()
            return node
        if ch == "[":
            return self.char_class()
        if ch == ".":
            return CharSet("".join(sorted(PRINTABLE)))
        if ch == "\\":
            return CharSet("".join(sorted(self.escape())))
        if ch in "^$":
            raise UnsupportedRegexFeature("anchor inside pattern", self.src)
        if ch in "*+?{":
            raise self.error(f"nothing to repeat before {ch!r}")
        if ch not in PRINTABLE:
            raise UnsupportedRegexFeature("non-printable literal", self.src)
        return CharSet(ch)

    def escape(self) -> frozenset:
        ch = self.peek()
        if ch is None:
            raise self.error("dangling backslash")
        self.take()
        if ch.isdigit():
            raise UnsupportedRegexFeature("backreference", self.src)
        if ch in _SHORTHAND:
            return _SHORTHAND[ch]
        if ch in _UNSUPPORTED_ESCAPES:
            raise UnsupportedRegexFeature(_UNSUPPORTED_ESCAPES[ch], self.src)
        if ch.isalnum():
            raise self.error(f"unknown escape \\{ch}")
        return frozenset(ch)

    def class_char(self) -> frozenset | str:
        ch = self.take()
        if ch == "\\":
            return self.escape()
        if ch == "[" and self.peek() in (":", "=", "."):
            raise UnsupportedRegexFeature("POSIX bracket expression", self.src)
        if ch not in PRINTABLE:
            raise UnsupportedRegexFeature("non-printable literal", self.src)
        return ch

    def char_class(self) -> CharSet:
        negate = self.peek() == "^"
        if negate:
            self.take()
        members: set[str] = set()
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                raise self.error("unterminated character class")
            if ch == "]" and not first:
                self.take()
                break
            first = False
            low = self.class_char()
            if self.peek() == "-" and self.src[self.pos + 1:self.pos + 2] not in ("]", ""):
                self.take()
                high = self.class_char()
                if not isinstance(low, str) or not isinstance(high, str):
                    raise self.error("class shorthand used as a range bound")
                if ord(low) > ord(high):
                    raise self.error(f"bad range {low}-{high}")
                members.update(chr(c) for c in range(ord(low), ord(high) + 1))
            elif isinstance(low, str):
                members.add(low)
            else:
                members.update(low)
        chosen = PRINTABLE - members if negate else members & PRINTABLE
        if not chosen:
            raise self.error("character class matches no printable character")
        return CharSet("".join(sorted(chosen)))

    def quantified(self, atom: Node) -> Node:
        ch = self.peek()
        if ch is None or ch not in "?*+{":
            return atom
        self.take()
        if ch == "?":
            low, high = 0, 1
        elif ch == "*":
            low, high = 0, UNBOUNDED_CAP
        elif ch == "+":
            low, high = 1, 1 + UNBOUNDED_CAP
        else:
            close = self.src.find("}", self.pos)
            if close < 0:
                raise UnsupportedRegexFeature("literal '{'", self.src)
            body = self.src[self.pos:close]
            self.pos = close + 1
            lo_text, comma, hi_text = body.partition(",")
            if not (lo_text.isdigit() or (comma and lo_text == "")) or (hi_text and not hi_text.isdigit()):
                raise UnsupportedRegexFeature(f"malformed quantifier {{{body}}}", self.src)
            low = int(lo_text) if lo_text else 0
            if not comma:
                high = low
            elif hi_text:
                high = int(hi_text)
            else:
                high = low + UNBOUNDED_CAP
            if low > high:
                raise self.error(f"quantifier {{{body}}} has min > max")
        if self.peek() in ("?", "+"):
            raise UnsupportedRegexFeature("lazy or possessive quantifier", self.src)
        return Repeat(atom, low, high)


@lru_cache(maxsize=1024)
def compile_pattern(pattern: str) -> Node:
    """Parse ``pattern`` into a generation tree; raises on anything outside the subset."""
    if not isinstance(pattern, str):
        raise RegexError(f"pattern must be a string, got {type(pattern).__name__}")
    return _Parser(pattern).parse()


def _emit(node: Node, rng: random.Random, out: list[str]) -> None:
    if isinstance(node, CharSet):
        out.append(node.chars[rng.randrange(len(node.chars))])
    elif isinstance(node, Seq):
        for item in node.items:
            _emit(item, rng, out)
    elif isinstance(node, Alt):
        _emit(node.options[rng.randrange(len(node.options))], rng, out)
    else:
        for _ in range(rng.randint(node.low, node.high)):
            _emit(node.node, rng, out)


def generate_matching(pattern: str, rng: random.Random) -> str:
    """Return a string that ``re.fullmatch(pattern, ...)`` accepts."""
    out: list[str] = []
    _emit(compile_pattern(pattern), rng, out)
    return "".join(out)
