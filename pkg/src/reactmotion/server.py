"""TCP streaming server: one generation session per connection.

A client sends subject frames (0x01). The first 30 fill the warmup window and
get no reply; every later frame is answered with one generated counterpart
frame (0x02) carrying the same frame index. End-of-stream (0x03) is echoed
and the connection closes. Invalid input or a diverging model gets an error
message (0x04) and the connection closes.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DivergenceError, ProtocolError, ValidationError
from .generation import GenerationSession, init_session, step, validate_pose
from .models import MotionModel
from .protocol import FrameMessage, MsgType, read_message, write_message
from .skeleton import PoseFrame, SkeletonTopology, default_topology
from .training import load_checkpoint

log = logging.getLogger(__name__)

DRAIN_TIMEOUT = 2.0


class _Handler(socketserver.StreamRequestHandler):
    server: "GenerationServer"

    def handle(self):
        srv = self.server
        warmup: list[PoseFrame] = []
        session: GenerationSession | None = None
        received = replies = current = 0
        ended: FrameMessage | None = None
        peer = self.client_address
        try:
            while True:
                msg = read_message(self.rfile)
                if msg is None:
                    log.info("%s: disconnected without end-of-stream", peer)
                    break
                if msg.msg_type is MsgType.END_OF_STREAM:
                    ended = msg
                    break
                if msg.msg_type is not MsgType.SUBJECT_FRAME:
                    raise ProtocolError(f"expected a subject frame, got {msg.msg_type.name}")
                if msg.person_id != 0:
                    raise ProtocolError("subject frames must carry person_id 0")
                received += 1
                current = msg.frame_index
                frame = PoseFrame(msg.joints, 0, msg.frame_index)
                if session is None:
                    validate_pose(frame.joints, srv.topo, index=frame.frame_index)
                    warmup.append(frame)
                    if len(warmup) == srv.model.cfg.ctx_len:
                        session = init_session(srv.model, warmup, None, srv.topo, validate=False)
                        session.validate = True
                    continue
                out = step(session, frame)
                write_message(self.wfile, FrameMessage.frame(MsgType.GENERATED_FRAME, 1, out.frame_index, out.joints))
                replies += 1
        except DivergenceError as exc:
            self._fail(f"divergence at frame {exc.index}", exc.index or 0)
        except (ValidationError, ProtocolError) as exc:
            self._fail(str(exc), current)
        except (ConnectionError, BrokenPipeError):
            log.info("%s: connection dropped", peer)
        finally:
            if session is not None and session.latencies:
                lat = np.asarray(session.latencies) * 1e3
                log.info(
                    "%s: %d frames in, %d out; step latency mean %.2f ms, p95 %.2f ms, max %.2f ms",
                    peer, received, replies, lat.mean(), np.percentile(lat, 95), lat.max(),
                )
            srv.record(received, replies)
        if ended:
            try:
                write_message(self.wfile, FrameMessage.end(ended.frame_index, ended.person_id))
            except OSError:
                pass

    def _fail(self, reason: str, index: int):
        log.warning("%s: %s", self.client_address, reason)
        try:
            write_message(self.wfile, FrameMessage.error(reason, frame_index=index))
            # Half-close and drain so frames already in flight do not turn the
            # close into a reset that could swallow the error message.
            self.connection.shutdown(socket.SHUT_WR)
            self.connection.settimeout(DRAIN_TIMEOUT)
            while self.connection.recv(65536):
                pass
        except OSError:
            pass


class GenerationServer(socketserver.ThreadingTCPServer):
    """Threaded server sharing one frozen model across connections."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, model: MotionModel, topo: SkeletonTopology | None = None):
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model
        self.topo = topo or default_topology()
        self._lock = threading.Lock()
        self.sessions: list[tuple[int, int]] = []
        super().__init__(address, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def record(self, received: int, replies: int) -> None:
        with self._lock:
            self.sessions.append((received, replies))


def make_server(model_or_ckpt, host: str = "127.0.0.1", port: int = 0, topo=None) -> GenerationServer:
    """Bind without serving; port 0 picks a free port."""
    model = model_or_ckpt if isinstance(model_or_ckpt, MotionModel) else load_checkpoint(Path(model_or_ckpt))
    return GenerationServer((host, port), model, topo)


def serve(port: int, checkpoint, host: str = "127.0.0.1", topo=None) -> None:
    """Serve until interrupted."""
    with make_server(checkpoint, host, port, topo) as srv:
        log.info("serving on %s:%d", host, srv.port)
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            log.info("shutting down")


def stream_frames(
    host: str,
    port: int,
    frames: Iterable[PoseFrame | np.ndarray],
    warmup: int = 30,
    end: bool = True,
    timeout: float = 30.0,
) -> list[FrameMessage]:
    """Minimal blocking client: send frames, collect every reply in order.

    After the warmup frames each sent frame waits for its reply. An error
    reply ends the exchange early and is returned as the last element; an
    error raised during warmup is picked up by the first read.
    """
    replies: list[FrameMessage] = []
    with socket.create_connection((host, port), timeout=timeout) as sock:
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")
        for k, f in enumerate(frames):
            if isinstance(f, PoseFrame):
                msg = FrameMessage.frame(MsgType.SUBJECT_FRAME, 0, f.frame_index, f.joints)
            else:
                msg = FrameMessage.frame(MsgType.SUBJECT_FRAME, 0, k, f)
            try:
                write_message(wfile, msg)
            except OSError:
                break
            if k + 1 > warmup:
                reply = read_message(rfile)
                if reply is None:
                    break
                replies.append(reply)
                if reply.msg_type is MsgType.ERROR:
                    return replies
        if end:
            try:
                write_message(wfile, FrameMessage.end())
                while (reply := read_message(rfile)) is not None:
                    replies.append(reply)
                    if reply.msg_type in (MsgType.END_OF_STREAM, MsgType.ERROR):
                        break
            except OSError:
                pass
    return replies
