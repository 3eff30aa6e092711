"""ISO8583 message model and ASCII packager.

Messages follow the 1987 field grammar: MTI, a primary bitmap (plus a
secondary one when any of fields 65..128 is present) and the data fields in
ascending order. Field 1 is never stored; it is derived from the field map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Union


FieldValue = Union[str, bytes]

MIN_FIELD = 2
MAX_FIELD = 128


class IsoError(Exception):
    """Base class for codec errors. ``field`` names the offending field, if any."""

    def __init__(self, message: str, field: int | None = None):
        super().__init__(message)
        self.field = field


class PackError(IsoError):
    pass


class UnpackError(IsoError):
    pass


class FieldNumberOutOfRange(IsoError, ValueError):
    def __init__(self, n: int):
        super().__init__(f"field number {n} outside {MIN_FIELD}..{MAX_FIELD}", n)


class InvalidMti(IsoError, ValueError):
    def __init__(self, mti: object):
        super().__init__(f"invalid MTI {mti!r}: need 4 decimal digits")


class MissingFieldDef(PackError):
    def __init__(self, n: int):
        super().__init__(f"no field definition for field {n}", n)


class ValueTooLong(PackError):
    def __init__(self, n: int, length: int, limit: int):
        super().__init__(f"field {n}: length {length} exceeds {limit}", n)


class ValueTooShort(PackError):
    def __init__(self, n: int, length: int, fixed: int):
        super().__init__(f"field {n}: fixed length {fixed}, got {length}", n)


class InvalidChar(PackError, UnpackError):
    def __init__(self, n: int, value: object):
        super().__init__(f"field {n}: value {value!r} violates its content class", n)


class Truncated(UnpackError):
    def __init__(self, at: str | int):
        where = f"field {at}" if isinstance(at, int) else at
        super().__init__(f"message truncated in {where}", at if isinstance(at, int) else None)
        self.at = at


class UnknownField(UnpackError):
    def __init__(self, n: int):
        super().__init__(f"bitmap announces field {n} but the packager has no definition", n)


class ValueTooLongOnWire(UnpackError):
    def __init__(self, n: int, length: int, limit: int):
        super().__init__(f"field {n}: declared length {length} exceeds {limit}", n)


class TrailingBytes(UnpackError):
    def __init__(self, count: int):
        super().__init__(f"{count} trailing bytes after last field")
        self.count = count


def validate_mti(mti: object) -> str:
    if not (isinstance(mti, str) and len(mti) == 4 and all("0" <= c <= "9" for c in mti)):
        raise InvalidMti(mti)
    return mti


def is_printable_ascii(text: str) -> bool:
    return all(" " <= c <= "~" for c in text)


def _check_field_number(n: int) -> int:
    if isinstance(n, bool) or not isinstance(n, int) or not MIN_FIELD <= n <= MAX_FIELD:
        raise FieldNumberOutOfRange(n)
    return n


@dataclass(frozen=True)
class IsoMsg:
    """One ISO8583 message. Instances are immutable; ``set`` returns a copy."""

    mti: str
    fields: Mapping[int, FieldValue] = field(default_factory=dict)

    def __post_init__(self):
        validate_mti(self.mti)
        checked: dict[int, FieldValue] = {}
        for n in sorted(self.fields):
            value = self.fields[n]
            _check_field_number(n)
            if isinstance(value, str):
                if not is_printable_ascii(value):
                    raise InvalidChar(n, value)
            elif isinstance(value, (bytes, bytearray)):
                value = bytes(value)
            else:
                raise TypeError(f"field {n}: value must be str or bytes, got {type(value).__name__}")
            checked[n] = value
        object.__setattr__(self, "fields", checked)

    def get(self, n: int) -> FieldValue | None:
        return self.fields.get(_check_field_number(n))

    def set(self, n: int, value: FieldValue) -> IsoMsg:
        _check_field_number(n)
        return IsoMsg(self.mti, {**self.fields, n: value})

    def unset(self, *numbers: int) -> IsoMsg:
        for n in numbers:
            _check_field_number(n)
        return IsoMsg(self.mti, {k: v for k, v in self.fields.items() if k not in numbers})

    def with_mti(self, mti: str) -> IsoMsg:
        return IsoMsg(mti, self.fields)

    def __contains__(self, n: int) -> bool:
        return n in self.fields

    def __hash__(self):
        return hash((self.mti, tuple(self.fields.items())))


def set_field(msg: IsoMsg, n: int, value: FieldValue) -> IsoMsg:
    return msg.set(n, value)


def get_field(msg: IsoMsg, n: int) -> FieldValue | None:
    return msg.get(n)


class ContentClass(str, Enum):
    NUMERIC = "n"
    ALPHANUMERIC = "an"
    BINARY = "b"  # raw bytes, carried on the wire as uppercase hex


class LengthKind(str, Enum):
    FIXED = "fixed"
    LLVAR = "llvar"
    LLLVAR = "lllvar"


_PREFIX_DIGITS = {LengthKind.FIXED: 0, LengthKind.LLVAR: 2, LengthKind.LLLVAR: 3}
_MAX_VAR = {LengthKind.LLVAR: 99, LengthKind.LLLVAR: 999}


@dataclass(frozen=True)
class FieldDef:
    """Wire grammar of one data field.

    ``length`` is the fixed size for fixed fields and the maximum for
    variable ones. It counts characters for text classes and bytes for
    binary fields.
    """

    number: int
    name: str
    content: ContentClass
    kind: LengthKind
    length: int

    def __post_init__(self):
        _check_field_number(self.number)
        object.__setattr__(self, "content", ContentClass(self.content))
        object.__setattr__(self, "kind", LengthKind(self.kind))
        if self.length < 1:
            raise ValueError(f"field {self.number}: length must be >= 1")
        if self.kind in _MAX_VAR and self.length > _MAX_VAR[self.kind]:
            raise ValueError(f"field {self.number}: {self.kind.value} max is {_MAX_VAR[self.kind]}")

    def check(self, value: FieldValue) -> None:
        """Raise if ``value`` cannot be packed under this definition."""
        n = self.number
        if self.content is ContentClass.BINARY:
            if not isinstance(value, bytes):
                raise InvalidChar(n, value)
        else:
            if not isinstance(value, str) or not is_printable_ascii(value):
                raise InvalidChar(n, value)
            if self.content is ContentClass.NUMERIC and not all("0" <= c <= "9" for c in value):
                raise InvalidChar(n, value)
        if len(value) > self.length:
            raise ValueTooLong(n, len(value), self.length)
        if self.kind is LengthKind.FIXED and len(value) < self.length:
            raise ValueTooShort(n, len(value), self.length)

    def encode(self, value: FieldValue) -> bytes:
        self.check(value)
        body = value.hex().upper().encode() if isinstance(value, bytes) else value.encode("ascii")
        digits = _PREFIX_DIGITS[self.kind]
        prefix = f"{len(value):0{digits}d}".encode() if digits else b""
        return prefix + body

    def decode(self, data: bytes, pos: int) -> tuple[FieldValue, int]:
        digits = _PREFIX_DIGITS[self.kind]
        if digits:
            raw = data[pos:pos + digits]
            if len(raw) < digits:
                raise Truncated(self.number)
            if not raw.isdigit():
                raise UnpackError(f"field {self.number}: bad length prefix {raw!r}", self.number)
            size = int(raw)
            if size > self.length:
                raise ValueTooLongOnWire(self.number, size, self.length)
            pos += digits
        else:
            size = self.length
        width = size * 2 if self.content is ContentClass.BINARY else size
        raw = data[pos:pos + width]
        if len(raw) < width:
            raise Truncated(self.number)
        value: FieldValue
        try:
            if self.content is ContentClass.BINARY:
                value = bytes.fromhex(raw.decode("ascii"))
            else:
                value = raw.decode("ascii")
        except (UnicodeDecodeError, ValueError):
            raise InvalidChar(self.number, raw) from None
        self.check(value)
        return value, pos + width


class BitmapEncoding(str, Enum):
    HEX = "hex"
    BINARY = "binary"


@dataclass(frozen=True)
class Bitmap:
    """128 presence flags. Bit 1 is the most significant bit of ``value``."""

    value: int = 0

    @classmethod
    def from_fields(cls, numbers) -> Bitmap:
        value = 0
        for n in numbers:
            value |= 1 << (MAX_FIELD - _check_field_number(n))
        if value & ((1 << 64) - 1):
            value |= 1 << (MAX_FIELD - 1)
        return cls(value)

    def is_set(self, n: int) -> bool:
        if not 1 <= n <= MAX_FIELD:
            raise FieldNumberOutOfRange(n)
        return bool(self.value >> (MAX_FIELD - n) & 1)

    @property
    def secondary(self) -> bool:
        return self.is_set(1)

    def fields(self) -> list[int]:
        return [n for n in range(MIN_FIELD, MAX_FIELD + 1) if self.is_set(n)]

    def to_bytes(self) -> bytes:
        raw = self.value.to_bytes(16, "big")
        return raw if self.secondary else raw[:8]

    def to_hex(self) -> str:
        return self.to_bytes().hex().upper()

    @classmethod
    def from_bytes(cls, primary: bytes, secondary: bytes = b"\x00" * 8) -> Bitmap:
        return cls(int.from_bytes(primary + secondary, "big"))


def compute_bitmap(msg: IsoMsg) -> Bitmap:
    return Bitmap.from_fields(msg.fields)


@dataclass(frozen=True)
class Packager:
    name: str
    field_defs: Mapping[int, FieldDef]
    bitmap: BitmapEncoding = BitmapEncoding.HEX

    def __post_init__(self):
        object.__setattr__(self, "bitmap", BitmapEncoding(self.bitmap))
        for n, fd in self.field_defs.items():
            if fd.number != n:
                raise ValueError(f"field def keyed {n} describes field {fd.number}")
        object.__setattr__(self, "field_defs", dict(sorted(self.field_defs.items())))

    def pack(self, msg: IsoMsg) -> bytes:
        return pack(msg, self)

    def unpack(self, data: bytes) -> IsoMsg:
        return unpack(data, self)

    @classmethod
    def from_dict(cls, doc: dict) -> Packager:
        defs = {}
        for key, spec in doc["fields"].items():
            n = int(key)
            ((kind, length),) = spec["len"].items()
            defs[n] = FieldDef(n, spec.get("name", f"field {n}"), ContentClass(spec["class"]),
                               LengthKind(kind), int(length))
        return cls(doc["name"], defs, BitmapEncoding(doc.get("bitmap", "hex")))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bitmap": self.bitmap.value,
            "fields": {
                str(n): {"name": fd.name, "class": fd.content.value, "len": {fd.kind.value: fd.length}}
                for n, fd in self.field_defs.items()
            },
        }


def load_packager(path: str | Path) -> Packager:
    with open(path, encoding="utf-8") as fh:
        return Packager.from_dict(json.load(fh))


def default_packager() -> Packager:
    text = resources.files("switchsim").joinpath("data/default_packager.json").read_text("utf-8")
    return Packager.from_dict(json.loads(text))


def pack(msg: IsoMsg, packager: Packager) -> bytes:
    """Pack ``msg`` as MTI, bitmap and fields in ascending order."""
    for n in msg.fields:
        if n not in packager.field_defs:
            raise MissingFieldDef(n)
    bitmap = compute_bitmap(msg)
    header = bitmap.to_hex().encode() if packager.bitmap is BitmapEncoding.HEX else bitmap.to_bytes()
    parts = [msg.mti.encode("ascii"), header]
    parts.extend(packager.field_defs[n].encode(v) for n, v in msg.fields.items())
    return b"".join(parts)


def _read_bitmap_half(data: bytes, pos: int, encoding: BitmapEncoding) -> tuple[bytes, int]:
    width = 16 if encoding is BitmapEncoding.HEX else 8
    raw = data[pos:pos + width]
    if len(raw) < width:
        raise Truncated("bitmap")
    if encoding is BitmapEncoding.BINARY:
        return raw, pos + width
    try:
        return bytes.fromhex(raw.decode("ascii")), pos + width
    except (UnicodeDecodeError, ValueError):
        raise UnpackError(f"bitmap is not hex: {raw!r}") from None


def unpack(data: bytes, packager: Packager) -> IsoMsg:
    data = bytes(data)
    if len(data) < 4:
        raise Truncated("mti")
    try:
        mti = validate_mti(data[:4].decode("ascii"))
    except (UnicodeDecodeError, InvalidMti):
        raise UnpackError(f"invalid MTI bytes {data[:4]!r}") from None
    primary, pos = _read_bitmap_half(data, 4, packager.bitmap)
    secondary = b"\x00" * 8
    if primary[0] & 0x80:
        secondary, pos = _read_bitmap_half(data, pos, packager.bitmap)
    bitmap = Bitmap.from_bytes(primary, secondary)
    fields: dict[int, FieldValue] = {}
    for n in bitmap.fields():
        fd = packager.field_defs.get(n)
        if fd is None:
            raise UnknownField(n)
        fields[n], pos = fd.decode(data, pos)
    if pos != len(data):
        raise TrailingBytes(len(data) - pos)
    return IsoMsg(mti, fields)
