import io
import json
import socket
import struct
import threading

import numpy as np
import pytest

from voxflood.protocol import (
    ExternalSegmenter,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    read_frame,
    serve_stream,
    write_frame,
)
from voxflood.segmenter import (
    REQUEST_SIZE,
    DensePrompt,
    MaskChannel,
    OracleFloodSegmenter,
    PointPrompt,
    SegmenterRequest,
    SegmenterResponse,
    TransportError,
    pool_logits,
)


def sample_request(with_dense=True):
    rng = np.random.default_rng(5)
    image = rng.integers(0, 256, (REQUEST_SIZE, REQUEST_SIZE, 3)).astype(np.uint8)
    dense = None
    if with_dense:
        dense = DensePrompt(rng.random((REQUEST_SIZE, REQUEST_SIZE)) < 0.1)
    return SegmenterRequest(image=image, points=(PointPrompt((12, 900)),), dense=dense)


class EchoBackend:
    """Returns the dense prompt (or an empty mask) as the single channel."""

    def segment(self, request):
        mask = request.dense.mask if request.dense is not None else np.zeros(request.image.shape[:2], bool)
        return SegmenterResponse((MaskChannel(mask, 1.0, pool_logits(mask)),))


def test_frame_roundtrip():
    buf = io.BytesIO()
    write_frame(buf, b"hello")
    write_frame(buf, b"")
    write_frame(buf, b"world")
    buf.seek(0)
    assert read_frame(buf) == b"hello"
    assert read_frame(buf) == b""
    assert read_frame(buf) == b"world"
    assert read_frame(buf) is None  # clean EOF


def test_frame_layout_little_endian():
    buf = io.BytesIO()
    write_frame(buf, b"abc")
    raw = buf.getvalue()
    assert raw[:4] == struct.pack("<I", 3)
    assert raw[4:] == b"abc"


def test_frame_truncations():
    with pytest.raises(TransportError):
        read_frame(io.BytesIO(b"\x01\x00"))
    with pytest.raises(TransportError):
        read_frame(io.BytesIO(struct.pack("<I", 10) + b"abc"))


def test_request_codec_roundtrip():
    req = sample_request()
    req_id, back = decode_request(encode_request(req, 42))
    assert req_id == 42
    assert np.array_equal(back.image, req.image)
    assert back.points == req.points
    assert np.array_equal(back.dense.mask, req.dense.mask)


def test_request_codec_json_fields():
    doc = json.loads(encode_request(sample_request(with_dense=False), 7).decode())
    assert doc["id"] == 7
    assert doc["w"] == REQUEST_SIZE and doc["h"] == REQUEST_SIZE
    assert doc["points"] == [[12, 900]]
    assert doc["dense"] is None


def test_response_codec_roundtrip():
    rng = np.random.default_rng(1)
    mask = rng.random((REQUEST_SIZE, REQUEST_SIZE)) < 0.5
    logits = rng.normal(size=(REQUEST_SIZE // 4, REQUEST_SIZE // 4)).astype(np.float32)
    resp = SegmenterResponse((MaskChannel(mask, 0.75, logits),))
    got_id, got = decode_response(encode_response(resp, 9), REQUEST_SIZE, REQUEST_SIZE)
    assert got_id == 9
    assert np.array_equal(got.channels[0].mask, mask)
    assert np.array_equal(got.channels[0].logits, logits)
    assert got.channels[0].predicted_iou == 0.75


def _spawn_server(backend):
    """In-process protocol server over a socket pair; returns the client."""
    server_sock, client_sock = socket.socketpair()
    sf = server_sock.makefile("rwb")

    def run():
        try:
            serve_stream(backend, sf, sf)
        finally:
            sf.close()
            server_sock.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    cf = client_sock.makefile("rwb")
    client = ExternalSegmenter(cf, cf)
    return client, client_sock, thread


def test_client_server_echo_roundtrip():
    client, sock, thread = _spawn_server(EchoBackend())
    try:
        req = sample_request()
        resp = client.segment(req)
        assert np.array_equal(resp.channels[0].mask, req.dense.mask)
    finally:
        client.close()
        sock.close()


def test_client_server_matches_direct_oracle():
    client, sock, thread = _spawn_server(OracleFloodSegmenter())
    try:
        img = np.zeros((REQUEST_SIZE, REQUEST_SIZE, 3), dtype=np.uint8)
        img[500:540, 480:520] = 230
        req = SegmenterRequest(image=img, points=(PointPrompt((500, 520)),))
        over_wire = client.segment(req)
        direct = OracleFloodSegmenter().segment(req)
        assert np.array_equal(over_wire.channels[0].mask, direct.channels[0].mask)
        assert np.array_equal(over_wire.channels[0].logits, direct.channels[0].logits)
    finally:
        client.close()
        sock.close()


def test_server_error_response_keeps_connection_up():
    client, sock, thread = _spawn_server(OracleFloodSegmenter())
    try:
        # malformed payload (valid JSON, bad fields) -> error response, then normal traffic
        write_frame(client._writer, json.dumps({"id": 5, "w": 2}).encode())
        payload = read_frame(client._reader)
        doc = json.loads(payload.decode())
        assert doc["id"] == 5 and "error" in doc
        resp = client.segment(sample_request(with_dense=False))
        assert len(resp.channels) == 1
    finally:
        client.close()
        sock.close()


def test_handshake_missing_raises_transport_error():
    reader = io.BytesIO()  # immediate EOF
    writer = io.BytesIO()
    with pytest.raises(TransportError):
        ExternalSegmenter(reader, writer)


def test_bad_handshake_version():
    buf = io.BytesIO()
    write_frame(buf, json.dumps({"proto": 99}).encode())
    buf.seek(0)
    with pytest.raises(TransportError):
        ExternalSegmenter(buf, io.BytesIO())


def test_remote_error_response_raises():
    class ErrorBackend:
        def segment(self, request):
            raise RuntimeError("synthetic failure")

    client, sock, thread = _spawn_server(ErrorBackend())
    try:
        with pytest.raises(TransportError):
            client.segment(sample_request(with_dense=False))
    finally:
        client.close()
        sock.close()


def test_stdio_endpoint_roundtrip(tmp_path):
    # a stdio echo server spawned as a child process
    script = tmp_path / "echo_server.py"
    script.write_text(
        "import sys\n"
        "import numpy as np\n"
        "from voxflood.protocol import serve_stream\n"
        "from voxflood.segmenter import MaskChannel, SegmenterResponse, pool_logits\n"
        "class Echo:\n"
        "    def segment(self, request):\n"
        "        m = request.dense.mask if request.dense is not None else np.zeros(request.image.shape[:2], bool)\n"
        "        return SegmenterResponse((MaskChannel(m, 1.0, pool_logits(m)),))\n"
        "serve_stream(Echo(), sys.stdin.buffer, sys.stdout.buffer)\n"
    )
    client = ExternalSegmenter.from_endpoint(f"stdio:python3 {script}")
    try:
        req = sample_request()
        resp = client.segment(req)
        assert np.array_equal(resp.channels[0].mask, req.dense.mask)
    finally:
        client.close()


def test_tcp_endpoint_roundtrip():
    # serve the oracle over a real TCP socket in a background thread
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]

    def serve_once():
        conn, _ = listener.accept()
        f = conn.makefile("rwb")
        try:
            serve_stream(OracleFloodSegmenter(), f, f)
        finally:
            f.close()
            conn.close()

    thread = threading.Thread(target=serve_once, daemon=True)
    thread.start()
    client = ExternalSegmenter.from_endpoint(f"tcp:127.0.0.1:{port}")
    try:
        img = np.zeros((REQUEST_SIZE, REQUEST_SIZE, 3), dtype=np.uint8)
        img[100:140, 200:260] = 210
        req = SegmenterRequest(image=img, points=(PointPrompt((230, 120)),))
        over_wire = client.segment(req)
        direct = OracleFloodSegmenter().segment(req)
        assert np.array_equal(over_wire.channels[0].mask, direct.channels[0].mask)
    finally:
        client.close()
        listener.close()


def test_concurrent_segment_calls_match_by_id():
    # the backend contract allows up to 3 workers sharing one client
    client, sock, thread = _spawn_server(OracleFloodSegmenter())
    try:
        blobs = [(200, 200), (500, 500), (800, 800)]
        requests = []
        for bx, by in blobs:
            img = np.zeros((REQUEST_SIZE, REQUEST_SIZE, 3), dtype=np.uint8)
            img[by - 20 : by + 20, bx - 20 : bx + 20] = 240
            requests.append(SegmenterRequest(image=img, points=(PointPrompt((bx, by)),)))
        results = [None] * 3
        expected = [OracleFloodSegmenter().segment(r) for r in requests]

        def worker(i):
            results[i] = client.segment(requests[i])

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for got, want in zip(results, expected):
            assert np.array_equal(got.channels[0].mask, want.channels[0].mask)
    finally:
        client.close()
        sock.close()
