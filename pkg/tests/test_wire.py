import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vse_attest.errors import CodecError, Status
from vse_attest.wire import (
    MAX_BODY,
    Command,
    Frame,
    FrameReader,
    Incomplete,
    MsgType,
    Request,
    Response,
    decode_frame,
    decode_request,
    decode_response,
    decode_whole_frame,
    encode_frame,
    encode_request,
    encode_response,
    pack_fields,
    request_frame,
    response_frame,
    unpack_fields,
)

from fuzzing import classify, mutate, random_frame

fields_st = st.lists(st.binary(max_size=300), max_size=8).map(tuple)


def test_extend_request_round_trip():
    req = Request(Command.PCR_EXTEND, (bytes(range(256)) * 3 + bytes(88), b"\x05", b"\xaa" * 32))
    assert len(req.fields[0]) == 856
    data = request_frame(req)
    frame = decode_whole_frame(data)
    assert frame.msg_type == MsgType.REQUEST
    assert decode_request(frame.body) == req


def test_frame_header_bytes():
    data = request_frame(Request(Command.GET_CAPS))
    assert data.hex() == "5741574c" "01" "01" "00000008" "0001" "00000000" "0000"


@settings(max_examples=300)
@given(st.integers(0, 0xFFFF), fields_st, st.binary(max_size=64))
def test_request_round_trip(command, fields, cred):
    req = Request(command, fields, cred)
    assert decode_request(encode_request(req)) == req


@settings(max_examples=300)
@given(st.sampled_from(list(Status)), fields_st)
def test_response_round_trip(status, fields):
    resp = Response(status, fields if status == Status.OK else ())
    assert decode_response(encode_response(resp)) == resp


def test_error_response_has_no_fields():
    with pytest.raises(CodecError):
        encode_response(Response(Status.BAD_HMAC, (b"x",)))
    body = b"\x00\x03" + pack_fields((b"x",))
    with pytest.raises(CodecError):
        decode_response(body)


def test_unknown_status_rejected():
    with pytest.raises(CodecError):
        decode_response(b"\x00\x63\x00\x00")


@pytest.mark.parametrize("data", [
    b"XXXX\x01\x01\x00\x00\x00\x00",
    b"WAWL\x02\x01\x00\x00\x00\x00",
    b"WAWL\x01\x07\x00\x00\x00\x00",
    b"WAWL\x01\x01" + (MAX_BODY + 1).to_bytes(4, "big"),
])
def test_bad_headers_malformed(data):
    with pytest.raises(CodecError) as exc:
        decode_frame(data)
    assert exc.value.status == Status.MALFORMED


def test_short_input_requests_more():
    data = request_frame(Request(Command.PCR_READ, (b"a" * 100,)))
    for cut in (0, 3, 9, 10, len(data) - 1):
        with pytest.raises(Incomplete) as exc:
            decode_frame(data[:cut])
        assert exc.value.needed > 0
    with pytest.raises(CodecError):
        decode_whole_frame(data[:-1])
    with pytest.raises(CodecError):
        decode_whole_frame(data + b"\x00")


def test_body_len_beyond_buffer_is_incomplete():
    data = b"WAWL\x01\x01\x00\x00\x10\x00" + bytes(20)
    with pytest.raises(Incomplete) as exc:
        decode_frame(data)
    assert exc.value.needed == 0x1000 - 20


def test_oversize_body_refused_on_encode():
    with pytest.raises(CodecError):
        encode_frame(Frame(MsgType.REQUEST, bytes(MAX_BODY + 1)))


def test_field_list_exact_end():
    packed = pack_fields((b"ab", b""))
    assert unpack_fields(packed) == (b"ab", b"")
    with pytest.raises(CodecError):
        unpack_fields(packed + b"\x00")
    with pytest.raises(CodecError):
        unpack_fields(packed[:-1])  # truncated length word of the empty field
    with pytest.raises(CodecError):
        unpack_fields(b"\x00\x01\xff\xff\xff\xff")


def test_credential_overrun():
    with pytest.raises(CodecError):
        decode_request(b"\x00\x02\x00\x00\x01\x00abc\x00\x00")


def test_frame_reader_splits_and_joins():
    frames = [request_frame(Request(Command.PCR_READ, (bytes([i]) * i,))) for i in range(1, 6)]
    stream = b"".join(frames)
    reader = FrameReader()
    got = []
    r = random.Random(3)
    pos = 0
    while pos < len(stream):
        step = r.randrange(1, 17)
        got += reader.feed(stream[pos:pos + step])
        pos += step
    assert [decode_request(f.body) for f in got] == [
        Request(Command.PCR_READ, (bytes([i]) * i,)) for i in range(1, 6)
    ]
    assert reader.pending == 0


def test_frame_reader_raises_on_garbage():
    with pytest.raises(CodecError):
        FrameReader().feed(b"HTTP/1.1 200 OK\r\n")


def test_mutation_fuzz_small():
    r = random.Random(99)
    outcomes = {"valid": 0, "malformed": 0}
    for _ in range(2000):
        outcomes[classify(mutate(random_frame(r), r))] += 1
    assert outcomes["malformed"] > 0 and outcomes["valid"] > 0


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_arbitrary_bytes_never_crash(data):
    assert classify(data) in ("valid", "malformed")
    try:
        FrameReader().feed(data)
    except CodecError:
        pass
