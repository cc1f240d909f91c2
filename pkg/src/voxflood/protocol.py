"""External-segmenter wire protocol: length-prefixed JSON frames.

Framing: 4-byte little-endian payload length, then the UTF-8 JSON payload.
On connect the server sends a ``{"proto": 1}`` handshake frame. Requests and
responses carry base64 payloads: the image as w*h*3 interleaved RGB bytes in
row-major order, masks as w*h bytes of 0/1, logits as (w/4)*(h/4) little-endian
float32 values.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import struct
import subprocess
import threading
from typing import BinaryIO, Optional, Tuple

import numpy as np

from .segmenter import (
    DensePrompt,
    MaskChannel,
    PointPrompt,
    SegmenterBackend,
    SegmenterRequest,
    SegmenterResponse,
    TransportError,
)

PROTO_VERSION = 1
_LEN = struct.Struct("<I")


def write_frame(stream: BinaryIO, payload: bytes) -> None:
    stream.write(_LEN.pack(len(payload)))
    stream.write(payload)
    stream.flush()


def read_frame(stream: BinaryIO) -> Optional[bytes]:
    """One frame, or None on clean EOF at a frame boundary."""
    header = stream.read(_LEN.size)
    if not header:
        return None
    if len(header) < _LEN.size:
        raise TransportError("truncated frame header")
    (length,) = _LEN.unpack(header)
    payload = stream.read(length)
    if payload is None or len(payload) < length:
        raise TransportError("truncated frame payload")
    return payload


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def encode_request(request: SegmenterRequest, req_id: int) -> bytes:
    h, w = request.image.shape[:2]
    doc = {
        "id": req_id,
        "w": w,
        "h": h,
        "image": _b64(request.image.tobytes()),
        "points": [[int(p.position[0]), int(p.position[1])] for p in request.points],
        "dense": _b64(request.dense.mask.astype(np.uint8).tobytes()) if request.dense else None,
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def decode_request(payload: bytes) -> Tuple[int, SegmenterRequest]:
    doc = json.loads(payload.decode("utf-8"))
    req_id = int(doc["id"])
    w, h = int(doc["w"]), int(doc["h"])
    image = np.frombuffer(base64.b64decode(doc["image"]), dtype=np.uint8)
    if image.size != w * h * 3:
        raise ValueError("image payload size does not match dims")
    image = image.reshape(h, w, 3)
    points = tuple(PointPrompt((int(x), int(y))) for x, y in doc.get("points") or [])
    dense = None
    if doc.get("dense") is not None:
        bits = np.frombuffer(base64.b64decode(doc["dense"]), dtype=np.uint8)
        if bits.size != w * h:
            raise ValueError("dense payload size does not match dims")
        dense = DensePrompt(bits.reshape(h, w) != 0)
    return req_id, SegmenterRequest(image=image, points=points, dense=dense)


def encode_response(response: SegmenterResponse, req_id: int) -> bytes:
    channels = []
    for c in response.channels:
        channels.append(
            {
                "mask": _b64(c.mask.astype(np.uint8).tobytes()),
                "iou": float(c.predicted_iou),
                "logits": _b64(c.logits.astype("<f4").tobytes()),
            }
        )
    return json.dumps({"id": req_id, "channels": channels}, separators=(",", ":")).encode("utf-8")


def encode_error(req_id: int, message: str) -> bytes:
    return json.dumps({"id": req_id, "error": message}, separators=(",", ":")).encode("utf-8")


def decode_response(payload: bytes, w: int, h: int) -> Tuple[int, SegmenterResponse]:
    doc = json.loads(payload.decode("utf-8"))
    req_id = int(doc.get("id", -1))
    if "error" in doc:
        raise SegmenterRemoteError(req_id, str(doc["error"]))
    channels = []
    for c in doc["channels"]:
        mask = np.frombuffer(base64.b64decode(c["mask"]), dtype=np.uint8)
        if mask.size != w * h:
            raise TransportError("mask payload size does not match dims")
        logits = np.frombuffer(base64.b64decode(c["logits"]), dtype="<f4")
        if logits.size != (w // 4) * (h // 4):
            raise TransportError("logits payload size does not match dims")
        channels.append(MaskChannel(mask.reshape(h, w) != 0, float(c["iou"]), logits.reshape(h // 4, w // 4)))
    return req_id, SegmenterResponse(tuple(channels))


class SegmenterRemoteError(TransportError):
    def __init__(self, req_id: int, message: str):
        super().__init__(f"backend error for request {req_id}: {message}")
        self.req_id = req_id


class ExternalSegmenter:
    """Protocol client over stdio (child process) or TCP.

    Safe for concurrent segment() calls: requests serialize on an internal
    lock and responses are matched by id.
    """

    def __init__(self, reader: BinaryIO, writer: BinaryIO, proc: Optional[subprocess.Popen] = None):
        self._reader = reader
        self._writer = writer
        self._proc = proc
        self._lock = threading.Lock()
        self._next_id = 0
        hello = read_frame(self._reader)
        if hello is None:
            raise TransportError("backend closed the connection before the handshake")
        try:
            doc = json.loads(hello.decode("utf-8"))
        except ValueError as exc:
            raise TransportError(f"bad handshake frame: {exc}") from exc
        if doc.get("proto") != PROTO_VERSION:
            raise TransportError(f"unsupported protocol handshake {doc!r}")

    @classmethod
    def from_endpoint(cls, endpoint: str) -> "ExternalSegmenter":
        if endpoint.startswith("stdio:"):
            cmd = shlex.split(endpoint[len("stdio:") :])
            proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            return cls(proc.stdout, proc.stdin, proc=proc)
        if endpoint.startswith("tcp:"):
            host, _, port = endpoint[len("tcp:") :].rpartition(":")
            sock = socket.create_connection((host, int(port)))
            f = sock.makefile("rwb")
            return cls(f, f)
        raise ValueError(f"unknown backend endpoint {endpoint!r}")

    def segment(self, request: SegmenterRequest) -> SegmenterResponse:
        h, w = request.image.shape[:2]
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            try:
                write_frame(self._writer, encode_request(request, req_id))
                while True:
                    payload = read_frame(self._reader)
                    if payload is None:
                        raise TransportError("backend closed the connection mid-request")
                    got_id, response = decode_response(payload, w, h)
                    if got_id == req_id:
                        return response
                    # response for a request this client never sent
                    raise TransportError(f"response id {got_id} does not match request {req_id}")
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"backend connection failed: {exc}") from exc

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


def serve_stream(backend: SegmenterBackend, reader: BinaryIO, writer: BinaryIO) -> None:
    """Serve a backend over one framed stream pair until EOF.

    Sends the handshake, then answers requests in arrival order; malformed
    payloads produce an error response (id -1 if undecodable) and the
    connection stays up.
    """
    write_frame(writer, json.dumps({"proto": PROTO_VERSION}).encode("utf-8"))
    while True:
        payload = read_frame(reader)
        if payload is None:
            return
        req_id = -1
        try:
            doc = json.loads(payload.decode("utf-8"))
            req_id = int(doc.get("id", -1))
            req_id, request = decode_request(payload)
            response = backend.segment(request)
        except Exception as exc:  # noqa: BLE001 - protocol boundary
            write_frame(writer, encode_error(req_id, str(exc)))
            continue
        write_frame(writer, encode_response(response, req_id))
