"""TCP channels: ASCII, NAC and XML framing plus asyncio connections.

Wire formats:

* ascii: 4 ASCII decimal digits (payload length, zero padded) + packed message
* nac:   2-byte big-endian length of (tpdu + payload) + optional 5-byte TPDU
         + packed message
* xml:   one self-delimiting ``<isomsg>`` document per message
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from typing import Awaitable, Callable, Union
from xml.sax.saxutils import escape

from .codec import IsoError, IsoMsg, Packager, default_packager

logger = logging.getLogger(__name__)

DEFAULT_TPDU = bytes.fromhex("6000000000")
ASCII_MAX = 9999
NAC_MAX = 0xFFFF
XML_MAX = 1 << 20
_XML_END = b"</isomsg>"


class ChannelError(Exception):
    pass


class FramingError(ChannelError):
    pass


class PayloadTooLarge(FramingError):
    def __init__(self, length: int, limit: int):
        super().__init__(f"payload of {length} bytes exceeds channel limit {limit}")
        self.length = length


class BadLengthHeader(FramingError):
    pass


class MalformedXml(FramingError):
    pass


class ConnectionClosedMidFrame(FramingError):
    pass


class ConnectRefused(ChannelError):
    pass


class ChannelTimeout(ChannelError, TimeoutError):
    def __init__(self, elapsed: float):
        super().__init__(f"no message within {elapsed * 1000:.0f} ms")
        self.elapsed = elapsed


class PeerClosed(ChannelError):
    pass


class ChannelKind(str, Enum):
    ASCII = "ascii"
    NAC = "nac"
    XML = "xml"

    @classmethod
    def parse(cls, text: str) -> ChannelKind:
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown channel {text!r} (choose from ascii, nac, xml)") from None


class WireDirection(str, Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int
    kind: ChannelKind
    tpdu: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside 1..65535")
        if self.tpdu is not None:
            if self.kind is not ChannelKind.NAC:
                raise ValueError("a TPDU is only valid on the nac channel")
            if len(self.tpdu) != 5:
                raise ValueError("TPDU must be exactly 5 bytes")

    @classmethod
    def parse(cls, address: str, kind: str | ChannelKind, tpdu: bytes | None = None) -> Endpoint:
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"endpoint {address!r} is not host:port")
        return cls(host, int(port), ChannelKind.parse(kind) if isinstance(kind, str) else kind, tpdu)

    def __str__(self):
        return f"{self.host}:{self.port}/{self.kind.value}"


def frame_ascii(payload: bytes) -> bytes:
    if len(payload) > ASCII_MAX:
        raise PayloadTooLarge(len(payload), ASCII_MAX)
    return b"%04d" % len(payload) + payload


def frame_nac(payload: bytes, tpdu: bytes | None = None) -> bytes:
    body = (tpdu or b"") + payload
    if len(body) > NAC_MAX:
        raise PayloadTooLarge(len(body), NAC_MAX)
    return len(body).to_bytes(2, "big") + body


def _attr(value: str) -> str:
    return escape(value, {'"': "&quot;"})


def frame_xml(msg: IsoMsg, direction: WireDirection = WireDirection.OUTGOING) -> bytes:
    parts = [f'<isomsg direction="{WireDirection(direction).value}">', f'<field id="0" value="{msg.mti}"/>']
    for n, value in msg.fields.items():
        if isinstance(value, bytes):
            parts.append(f'<field id="{n}" value="{value.hex().upper()}" type="binary"/>')
        else:
            parts.append(f'<field id="{n}" value="{_attr(value)}"/>')
    parts.append("</isomsg>")
    return "".join(parts).encode("utf-8")


def parse_xml(document: bytes) -> IsoMsg:
    """Parse one ``<isomsg>`` document. The bitmap is implied by the fields."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    if root.tag != "isomsg":
        raise MalformedXml(f"root element is <{root.tag}>, expected <isomsg>")
    mti = None
    fields: dict[int, str | bytes] = {}
    try:
        for el in root:
            if el.tag != "field":
                raise MalformedXml(f"unexpected element <{el.tag}>")
            n, value = int(el.get("id", "")), el.get("value", "")
            if n == 0:
                mti = value
            elif el.get("type") == "binary":
                fields[n] = bytes.fromhex(value)
            else:
                fields[n] = value
        if mti is None:
            raise MalformedXml("no MTI element (field id 0)")
        return IsoMsg(mti, fields)
    except (ValueError, IsoError) as exc:
        if isinstance(exc, MalformedXml):
            raise
        raise MalformedXml(str(exc)) from None


def xml_direction(document: bytes) -> WireDirection:
    try:
        return WireDirection(ET.fromstring(document).get("direction"))
    except (ET.ParseError, ValueError) as exc:
        raise MalformedXml(str(exc)) from None


Frame = Union[bytes, IsoMsg]


class FrameDecoder:
    """Incremental deframer: feed arbitrary chunks, collect whole frames.

    ascii and nac frames yield payload bytes (the TPDU, when ``tpdu_len`` is
    set, is stripped and kept in ``last_tpdu``); xml frames yield the raw
    document, which ``parse_xml`` turns into a message.
    """

    def __init__(self, kind: ChannelKind, tpdu_len: int = 0):
        self.kind = ChannelKind(kind)
        self.tpdu_len = tpdu_len
        self.last_tpdu = b""
        self._buf = bytearray()

    @property
    def buffered(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        frames = []
        while True:
            frame = self._next()
            if frame is None:
                return frames
            frames.append(frame)

    def _next(self) -> bytes | None:
        buf = self._buf
        if self.kind is ChannelKind.ASCII:
            if len(buf) < 4:
                return None
            header = bytes(buf[:4])
            if not header.isdigit():
                raise BadLengthHeader(f"ascii length header {header!r} is not 4 digits")
            end = 4 + int(header)
            if len(buf) < end:
                return None
            payload = bytes(buf[4:end])
        elif self.kind is ChannelKind.NAC:
            if len(buf) < 2:
                return None
            size = int.from_bytes(buf[:2], "big")
            if size == 0 or size < self.tpdu_len:
                raise BadLengthHeader(f"nac length {size} cannot hold a message")
            end = 2 + size
            if len(buf) < end:
                return None
            self.last_tpdu = bytes(buf[2:2 + self.tpdu_len])
            payload = bytes(buf[2 + self.tpdu_len:end])
        else:
            start = 0
            while start < len(buf) and buf[start] in b" \t\r\n":
                start += 1
            if start:
                del buf[:start]
            idx = buf.find(_XML_END)
            if idx < 0:
                if len(buf) > XML_MAX:
                    raise MalformedXml("xml frame exceeds size limit without </isomsg>")
                return None
            end = idx + len(_XML_END)
            payload = bytes(buf[:end])
        del buf[:end]
        return payload


def deframe(data: bytes, kind: ChannelKind, tpdu_len: int = 0) -> Frame:
    """Decode exactly one complete frame held in ``data``."""
    decoder = FrameDecoder(kind, tpdu_len)
    frames = decoder.feed(data)
    if not frames:
        raise ConnectionClosedMidFrame(f"{decoder.buffered} bytes do not form a complete frame")
    if len(frames) > 1 or decoder.buffered:
        raise FramingError("data holds more than one frame")
    return parse_xml(frames[0]) if decoder.kind is ChannelKind.XML else frames[0]


async def read_frame(reader: asyncio.StreamReader, kind: ChannelKind, tpdu_len: int = 0) -> Frame:
    """Read one frame straight off a stream."""
    kind = ChannelKind(kind)
    started = False
    try:
        if kind is ChannelKind.ASCII:
            header = await reader.readexactly(4)
            started = True
            if not header.isdigit():
                raise BadLengthHeader(f"ascii length header {header!r} is not 4 digits")
            return await reader.readexactly(int(header))
        if kind is ChannelKind.NAC:
            size = int.from_bytes(await reader.readexactly(2), "big")
            started = True
            if size == 0 or size < tpdu_len:
                raise BadLengthHeader(f"nac length {size} cannot hold a message")
            return (await reader.readexactly(size))[tpdu_len:]
        document = await reader.readuntil(_XML_END)
        return parse_xml(document.strip())
    except asyncio.IncompleteReadError as exc:
        if not started and not exc.partial.strip():
            raise PeerClosed("peer closed the connection") from None
        raise ConnectionClosedMidFrame("peer closed in the middle of a frame") from None
    except asyncio.LimitOverrunError:
        raise MalformedXml("xml frame exceeds stream limit") from None


def encode_message(msg: IsoMsg, endpoint: Endpoint, packager: Packager,
                   direction: WireDirection = WireDirection.OUTGOING) -> bytes:
    """Turn a message into the exact bytes written for one send."""
    if endpoint.kind is ChannelKind.XML:
        return frame_xml(msg, direction)
    payload = packager.pack(msg)
    if endpoint.kind is ChannelKind.ASCII:
        return frame_ascii(payload)
    return frame_nac(payload, endpoint.tpdu)


_connection_ids = itertools.count(1)


class Connection:
    """One persistent TCP connection carrying framed ISO messages.

    Sends are serialized by an internal lock so each message is written in a
    single piece. Receives must come from a single reader task.
    """

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, endpoint: Endpoint,
                 packager: Packager | None = None, direction: WireDirection = WireDirection.OUTGOING):
        self.id = next(_connection_ids)
        self.endpoint = endpoint
        self.packager = packager or default_packager()
        self.direction = direction
        self._reader = reader
        self._writer = writer
        self._decoder = FrameDecoder(endpoint.kind, len(endpoint.tpdu or b""))
        self._pending: list[bytes] = []
        self._lock = asyncio.Lock()

    @property
    def kind(self) -> ChannelKind:
        return self.endpoint.kind

    async def send(self, msg: IsoMsg) -> None:
        data = encode_message(msg, self.endpoint, self.packager, self.direction)
        async with self._lock:
            if self._writer.is_closing():
                raise PeerClosed("connection is closed")
            self._writer.write(data)
            try:
                await self._writer.drain()
            except ConnectionError as exc:
                raise PeerClosed(str(exc)) from None

    async def receive_frame(self, timeout: float) -> bytes:
        """Next raw frame (payload for ascii/nac, document for xml)."""
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        start = time.monotonic()
        try:
            return await asyncio.wait_for(self._next_frame(), timeout)
        except asyncio.TimeoutError:
            raise ChannelTimeout(time.monotonic() - start) from None

    async def next_frame(self) -> bytes:
        """Next raw frame, waiting as long as it takes."""
        return await self._next_frame()

    async def receive(self, timeout: float) -> IsoMsg:
        frame = await self.receive_frame(timeout)
        return self.decode(frame)

    def decode(self, frame: bytes) -> IsoMsg:
        if self.kind is ChannelKind.XML:
            return parse_xml(frame)
        return self.packager.unpack(frame)

    async def _next_frame(self) -> bytes:
        while not self._pending:
            try:
                chunk = await self._reader.read(65536)
            except ConnectionError as exc:
                raise PeerClosed(str(exc)) from None
            if not chunk:
                if self._decoder.buffered:
                    raise ConnectionClosedMidFrame(f"peer closed with {self._decoder.buffered} bytes of a frame")
                raise PeerClosed("peer closed the connection")
            self._pending.extend(self._decoder.feed(chunk))
        return self._pending.pop(0)

    async def close(self) -> None:
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass

    async def __aenter__(self) -> Connection:
        return self

    async def __aexit__(self, *exc) -> None:
        await self.close()


async def connect(endpoint: Endpoint, packager: Packager | None = None, timeout: float = 5.0) -> Connection:
    try:
        reader, writer = await asyncio.wait_for(asyncio.open_connection(endpoint.host, endpoint.port), timeout)
    except (OSError, asyncio.TimeoutError) as exc:
        raise ConnectRefused(f"cannot connect to {endpoint}: {exc}") from None
    return Connection(reader, writer, endpoint, packager)


async def listen(endpoint: Endpoint, handler: Callable[[Connection], Awaitable[None]],
                 packager: Packager | None = None) -> asyncio.base_events.Server:
    """Accept connections on ``endpoint``; each one runs ``handler`` in its own task."""
    packager = packager or default_packager()

    async def on_accept(reader, writer):
        conn = Connection(reader, writer, endpoint, packager, WireDirection.OUTGOING)
        try:
            await handler(conn)
        finally:
            await conn.close()

    return await asyncio.start_server(on_accept, endpoint.host, endpoint.port)
