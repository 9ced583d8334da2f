"""Stream transport for framed requests: a threaded TCP server and a client.

Channel security is modeled, not implemented: callers authenticate through
the request's credential field and the transport is assumed to be a trusted
loopback/testbed link.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from typing import Callable

from .errors import AttestError, CodecError, Status, TransportError
from .wire import (
    FrameReader,
    MsgType,
    Request,
    Response,
    decode_request,
    decode_response,
    request_frame,
    response_frame,
)

log = logging.getLogger(__name__)

Handler = Callable[[Request], Response]


def parse_endpoint(endpoint) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def format_endpoint(address) -> str:
    return f"{address[0]}:{address[1]}"


def guarded(handler: Handler, req: Request) -> Response:
    """Run ``handler`` and turn raised errors into status responses."""
    try:
        return handler(req)
    except AttestError as exc:
        if exc.status is None:
            log.warning("request %#06x failed without status: %s", req.command, exc)
            return Response(Status.MALFORMED)
        return Response(exc.status)
    except Exception:
        log.exception("request %#06x crashed", req.command)
        return Response(Status.MALFORMED)


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        reader = FrameReader()
        sock = self.request
        while True:
            try:
                data = sock.recv(65536)
            except OSError:
                return
            if not data:
                return
            try:
                frames = reader.feed(data)
            except CodecError as exc:
                # framing is lost; answer once and drop the stream
                log.debug("dropping connection: %s", exc)
                sock.sendall(response_frame(Response(Status.MALFORMED)))
                return
            for frame in frames:
                if frame.msg_type != MsgType.REQUEST:
                    resp = Response(Status.MALFORMED)
                else:
                    try:
                        resp = guarded(self.server.app, decode_request(frame.body))
                    except CodecError:
                        resp = Response(Status.MALFORMED)
                try:
                    sock.sendall(response_frame(resp))
                except OSError:
                    return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128


class FrameServer:
    """Serve ``app(Request) -> Response`` on a TCP address in a background thread."""

    def __init__(self, app: Handler, listen=("127.0.0.1", 0), name: str = "server"):
        self.name = name
        self._server = _Server(parse_endpoint(listen), _ConnectionHandler, bind_and_activate=True)
        self._server.app = app
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def endpoint(self) -> str:
        return format_endpoint(self.address)

    def start(self) -> FrameServer:
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05},
            name=self.name, daemon=True,
        )
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever(poll_interval=0.2)

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class Connection:
    """Client side of a framed stream with a simple retry policy.

    A call is attempted up to ``attempts`` times; each attempt reconnects if
    the previous socket failed. After the last failure a
    :class:`TransportError` is raised.
    """

    def __init__(self, endpoint, *, timeout: float = 5.0, attempts: int = 3, backoff: float = 0.05):
        self.address = parse_endpoint(endpoint)
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._sock: socket.socket | None = None
        self._reader = FrameReader()
        self._lock = threading.Lock()
        self.calls = 0

    @property
    def endpoint(self) -> str:
        return format_endpoint(self.address)

    def _connect(self) -> socket.socket:
        sock = socket.create_connection(self.address, timeout=self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = FrameReader()
        return sock

    def _roundtrip(self, payload: bytes) -> Response:
        if self._sock is None:
            self._sock = self._connect()
        self._sock.sendall(payload)
        while True:
            data = self._sock.recv(65536)
            if not data:
                raise ConnectionError("connection closed by peer")
            frames = self._reader.feed(data)
            if frames:
                if len(frames) > 1 or self._reader.pending:
                    raise CodecError(detail="unexpected extra frames")
                frame = frames[0]
                if frame.msg_type != MsgType.RESPONSE:
                    raise CodecError(detail="expected a response frame")
                return decode_response(frame.body)

    def call(self, req: Request) -> Response:
        payload = request_frame(req)
        last: Exception | None = None
        with self._lock:
            self.calls += 1
            for attempt in range(self.attempts):
                try:
                    return self._roundtrip(payload)
                except OSError as exc:
                    last = exc
                    self._drop()
                    if attempt + 1 < self.attempts:
                        time.sleep(self.backoff * (attempt + 1))
        raise TransportError(detail=f"{self.endpoint} unreachable after {self.attempts} attempts: {last}")

    def _drop(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self):
        with self._lock:
            self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalTransport:
    """In-process stand-in for :class:`Connection` that still runs the codecs."""

    def __init__(self, app: Handler):
        self.app = app
        self.calls = 0

    def call(self, req: Request) -> Response:
        self.calls += 1
        reader = FrameReader()
        (frame,) = reader.feed(request_frame(req))
        resp = guarded(self.app, decode_request(frame.body))
        (frame,) = reader.feed(response_frame(resp))
        return decode_response(frame.body)

    def close(self):
        pass
