import asyncio
import random
import xml.etree.ElementTree as ET

import pytest

from switchsim.channels import (
    DEFAULT_TPDU,
    BadLengthHeader,
    ChannelKind,
    ChannelTimeout,
    ConnectionClosedMidFrame,
    ConnectRefused,
    Endpoint,
    FrameDecoder,
    MalformedXml,
    PayloadTooLarge,
    PeerClosed,
    WireDirection,
    connect,
    deframe,
    frame_ascii,
    frame_nac,
    frame_xml,
    listen,
    parse_xml,
    read_frame,
    xml_direction,
)
from switchsim.codec import IsoMsg

from .conftest import free_port
from .strategies import random_text_message


def test_frame_ascii_examples():
    payload = bytes(range(120))
    assert frame_ascii(payload) == b"0120" + payload
    assert frame_ascii(b"") == b"0000"
    with pytest.raises(PayloadTooLarge):
        frame_ascii(b"x" * 10000)
    assert frame_ascii(b"x" * 9999)[:4] == b"9999"


def test_frame_nac_examples():
    assert frame_nac(b"a" * 120) == b"\x00\x78" + b"a" * 120
    assert frame_nac(b"a" * 256)[:2] == b"\x01\x00"
    assert frame_nac(b"abc", DEFAULT_TPDU) == b"\x00\x08" + b"\x60\x00\x00\x00\x00" + b"abc"
    with pytest.raises(PayloadTooLarge):
        frame_nac(b"a" * 65531, DEFAULT_TPDU)
    assert len(frame_nac(b"a" * 65530, DEFAULT_TPDU)) == 65537


def test_frame_xml_example():
    doc = frame_xml(IsoMsg("0200", {3: "310000"}), WireDirection.OUTGOING)
    assert doc == (b'<isomsg direction="outgoing"><field id="0" value="0200"/>'
                   b'<field id="3" value="310000"/></isomsg>')
    assert deframe(doc, ChannelKind.XML) == IsoMsg("0200", {3: "310000"})
    assert xml_direction(doc) is WireDirection.OUTGOING


def test_frame_xml_empty_and_escaping():
    assert frame_xml(IsoMsg("0800"), WireDirection.INCOMING) == (
        b'<isomsg direction="incoming"><field id="0" value="0800"/></isomsg>')
    doc = frame_xml(IsoMsg("0200", {48: 'say "hi" & <bye>'}))
    assert b"&quot;hi&quot; &amp; &lt;bye&gt;" in doc
    assert parse_xml(doc).get(48) == 'say "hi" & <bye>'


def test_xml_binary_field_roundtrip():
    msg = IsoMsg("0200", {52: b"\x01\xff\x00\x10\x20\x30\x40\x50"})
    assert parse_xml(frame_xml(msg)) == msg


def test_deframe_examples():
    assert deframe(b"0005HELLO", ChannelKind.ASCII) == b"HELLO"
    with pytest.raises(BadLengthHeader):
        deframe(b"12x4HELLO", ChannelKind.ASCII)
    with pytest.raises(BadLengthHeader):
        deframe(b"\x00\x00", ChannelKind.NAC)
    with pytest.raises(ConnectionClosedMidFrame):
        deframe(b"0010HEL", ChannelKind.ASCII)
    with pytest.raises(MalformedXml):
        deframe(b"<isomsg><field id='0' value='02'/></isomsg>", ChannelKind.XML)
    with pytest.raises(MalformedXml):
        deframe(b"<isomsg><oops></isomsg>", ChannelKind.XML)


def test_nac_tpdu_is_stripped():
    decoder = FrameDecoder(ChannelKind.NAC, tpdu_len=5)
    assert decoder.feed(frame_nac(b"0800", DEFAULT_TPDU)) == [b"0800"]
    assert decoder.last_tpdu == DEFAULT_TPDU


def _random_payloads(rng, kind, count=1000):
    for i in range(count):
        if kind is ChannelKind.XML:
            yield random_text_message(rng)
        else:
            # nac rejects a zero length header, so its payloads are never empty
            low = 1 if kind is ChannelKind.NAC else 0
            yield bytes(rng.getrandbits(8) for _ in range(rng.randint(low, 300)))


def _frame(kind, item, tpdu=None):
    if kind is ChannelKind.ASCII:
        return frame_ascii(item)
    if kind is ChannelKind.NAC:
        return frame_nac(item, tpdu)
    return frame_xml(item)


@pytest.mark.parametrize("kind", list(ChannelKind))
def test_framing_roundtrip_random(kind):
    rng = random.Random(kind.value)
    for item in _random_payloads(rng, kind):
        assert deframe(_frame(kind, item), kind) == item


@pytest.mark.parametrize("kind", list(ChannelKind))
def test_byte_at_a_time_segmentation(kind):
    rng = random.Random(42)
    items = list(_random_payloads(rng, kind, 50))
    tpdu = DEFAULT_TPDU if kind is ChannelKind.NAC else None
    stream = b"".join(_frame(kind, item, tpdu) for item in items)
    decoder = FrameDecoder(kind, tpdu_len=5 if tpdu else 0)
    out = []
    for i in range(len(stream)):
        out.extend(decoder.feed(stream[i:i + 1]))
    if kind is ChannelKind.XML:
        out = [parse_xml(doc) for doc in out]
    assert out == items
    assert decoder.buffered == 0


def test_two_frames_back_to_back():
    decoder = FrameDecoder(ChannelKind.ASCII)
    assert decoder.feed(b"0002AB0003CDE") == [b"AB", b"CDE"]


def test_xml_output_is_well_formed_for_printable_values():
    rng = random.Random(7)
    for _ in range(200):
        msg = random_text_message(rng)
        root = ET.fromstring(frame_xml(msg))
        ids = [int(el.get("id")) for el in root]
        assert ids == [0] + sorted(msg.fields)


def test_channel_kind_parse():
    assert ChannelKind.parse("ASCII") is ChannelKind.ASCII
    assert ChannelKind.parse(" Nac ") is ChannelKind.NAC
    with pytest.raises(ValueError):
        ChannelKind.parse("bogus")


def test_endpoint_invariants():
    assert str(Endpoint.parse("localhost:8001", "ascii")) == "localhost:8001/ascii"
    Endpoint("h", 8002, ChannelKind.NAC, DEFAULT_TPDU)
    with pytest.raises(ValueError):
        Endpoint("h", 8001, ChannelKind.ASCII, DEFAULT_TPDU)
    with pytest.raises(ValueError):
        Endpoint("h", 0, ChannelKind.ASCII)
    with pytest.raises(ValueError):
        Endpoint.parse("nohost", "ascii")


async def _echo_server(endpoint):
    async def handler(conn):
        while True:
            try:
                msg = await conn.receive(timeout=5)
            except PeerClosed:
                return
            await conn.send(msg.with_mti("0810"))

    return await listen(endpoint, handler)


@pytest.mark.parametrize("kind", list(ChannelKind))
def test_send_receive_loopback(kind):
    async def scenario():
        tpdu = DEFAULT_TPDU if kind is ChannelKind.NAC else None
        endpoint = Endpoint("127.0.0.1", free_port(), kind, tpdu)
        server = await _echo_server(endpoint)
        try:
            async with await connect(endpoint) as conn:
                for stan in ("000001", "000002"):
                    await conn.send(IsoMsg("0800", {11: stan}))
                first = await conn.receive(timeout=2)
                second = await conn.receive(timeout=2)
        finally:
            server.close()
            await server.wait_closed()
        return first, second

    first, second = asyncio.run(scenario())
    assert first == IsoMsg("0810", {11: "000001"})
    assert second == IsoMsg("0810", {11: "000002"})


def test_receive_times_out_on_silent_peer():
    async def scenario():
        endpoint = Endpoint("127.0.0.1", free_port(), ChannelKind.ASCII)

        async def silent(conn):
            await asyncio.sleep(1)

        server = await listen(endpoint, silent)
        try:
            async with await connect(endpoint) as conn:
                with pytest.raises(ChannelTimeout) as exc:
                    await conn.receive(timeout=0.1)
                assert 0.09 <= exc.value.elapsed < 0.5
                with pytest.raises(ValueError):
                    await conn.receive(timeout=0)
        finally:
            server.close()
            await server.wait_closed()

    asyncio.run(scenario())


def test_connect_refused():
    async def scenario():
        with pytest.raises(ConnectRefused):
            await connect(Endpoint("127.0.0.1", free_port(), ChannelKind.ASCII), timeout=1)

    asyncio.run(scenario())


def test_read_frame_from_stream():
    async def scenario():
        reader = asyncio.StreamReader()
        reader.feed_data(b"0005HELLO" + frame_xml(IsoMsg("0200")))
        reader.feed_data(b"\x00\x07" + DEFAULT_TPDU + b"OK" + b"00")
        reader.feed_eof()
        assert await read_frame(reader, ChannelKind.ASCII) == b"HELLO"
        assert await read_frame(reader, ChannelKind.XML) == IsoMsg("0200")
        assert await read_frame(reader, ChannelKind.NAC, tpdu_len=5) == b"OK"
        with pytest.raises(ConnectionClosedMidFrame):
            await read_frame(reader, ChannelKind.NAC)

    asyncio.run(scenario())
