from __future__ import annotations

import socket
import threading

import numpy as np
import pytest

from reactmotion.protocol import FrameMessage, MsgType, encode_frame, read_message, write_message
from reactmotion.server import make_server, stream_frames
from reactmotion.training import save_checkpoint

from .conftest import MirrorOracle, tiny_model


@pytest.fixture
def running():
    servers = []

    def start(model):
        srv = make_server(model)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


def test_thirty_warmup_then_one_reply_per_frame(running, pair):
    srv = running(tiny_model())
    replies = stream_frames("127.0.0.1", srv.port, pair.subject.frames[:40])
    frames = [r for r in replies if r.msg_type is MsgType.GENERATED_FRAME]
    assert len(frames) == 10
    assert [r.frame_index for r in frames] == list(range(30, 40))
    assert all(r.person_id == 1 for r in frames)
    assert replies[-1].msg_type is MsgType.END_OF_STREAM


@pytest.mark.parametrize("n", [0, 1, 29, 30, 31, 45])
def test_reply_cadence(running, pair, n):
    srv = running(MirrorOracle())
    sock = socket.create_connection(("127.0.0.1", srv.port), timeout=10)
    rfile, wfile = sock.makefile("rb"), sock.makefile("wb")
    replies = 0
    for k in range(n):
        f = pair.subject[k]
        write_message(wfile, FrameMessage.frame(MsgType.SUBJECT_FRAME, 0, f.frame_index, f.joints))
        if k >= 30:
            msg = read_message(rfile)
            assert msg.msg_type is MsgType.GENERATED_FRAME and msg.frame_index == f.frame_index
            replies += 1
        assert replies == max(0, k + 1 - 30)
    write_message(wfile, FrameMessage.end())
    assert read_message(rfile).msg_type is MsgType.END_OF_STREAM
    assert read_message(rfile) is None
    sock.close()


def test_replies_match_offline_stream_mode(running, pair):
    from reactmotion.generation import run_stream

    model = tiny_model(seed=2)
    srv = running(model)
    replies = stream_frames("127.0.0.1", srv.port, pair.subject.frames[:45])
    generated, _ = run_stream(model, pair.subject, 15)
    got = np.stack([r.joints for r in replies if r.msg_type is MsgType.GENERATED_FRAME])
    np.testing.assert_array_equal(got, generated.joints.astype(np.float32).astype(np.float64))


def test_bad_bone_gets_error_reply(running, pair):
    srv = running(tiny_model())
    frames = [f.joints for f in pair.subject.frames[:35]]
    bad = frames[-1].copy()
    bad[3] = bad[2] + 3 * (bad[3] - bad[2])
    frames[-1] = bad
    replies = stream_frames("127.0.0.1", srv.port, frames)
    assert [r.msg_type for r in replies[:-1]] == [MsgType.GENERATED_FRAME] * 4
    assert replies[-1].msg_type is MsgType.ERROR and replies[-1].frame_index == 34
    assert "bone length" in replies[-1].reason


def test_bad_warmup_frame_gets_error_reply(running, pair):
    srv = running(tiny_model())
    frames = [f.joints for f in pair.subject.frames[:40]]
    frames[3] = frames[3] * 2
    replies = stream_frames("127.0.0.1", srv.port, frames)
    assert len(replies) == 1 and replies[0].msg_type is MsgType.ERROR


def test_divergence_reports_frame(running, pair):
    srv = running(MirrorOracle(fail_at=3))
    replies = stream_frames("127.0.0.1", srv.port, pair.subject.frames[:40])
    assert len(replies) == 4
    assert replies[-1].msg_type is MsgType.ERROR
    assert replies[-1].reason == "divergence at frame 33" and replies[-1].frame_index == 33


def test_protocol_violation_gets_error(running, pair):
    srv = running(tiny_model())
    with socket.create_connection(("127.0.0.1", srv.port), timeout=10) as sock:
        sock.sendall(b"JUNK" + bytes(210))
        msg = read_message(sock.makefile("rb"))
    assert msg.msg_type is MsgType.ERROR and "magic" in msg.reason
    with socket.create_connection(("127.0.0.1", srv.port), timeout=10) as sock:
        f = pair.subject[0]
        sock.sendall(encode_frame(FrameMessage.frame(MsgType.GENERATED_FRAME, 1, 0, f.joints)))
        msg = read_message(sock.makefile("rb"))
    assert msg.msg_type is MsgType.ERROR


def test_sequential_connections_are_isolated(running, pair):
    srv = running(tiny_model(seed=1))
    frames = pair.subject.frames[:38]
    a = stream_frames("127.0.0.1", srv.port, frames)
    b = stream_frames("127.0.0.1", srv.port, frames)
    assert a == b and len(a) == 9
    assert srv.sessions == [(38, 8), (38, 8)]


def test_concurrent_connections(running, pair):
    srv = running(tiny_model(seed=1))
    frames = pair.subject.frames[:36]
    expected = stream_frames("127.0.0.1", srv.port, frames)
    results = [None] * 4

    def client(i):
        results[i] = stream_frames("127.0.0.1", srv.port, frames)

    threads = [threading.Thread(target=client, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(30)
    assert all(r == expected for r in results)


def test_server_from_checkpoint(tmp_path, running, pair):
    model = tiny_model(seed=4)
    save_checkpoint(model, tmp_path / "m.ckpt")
    srv = make_server(tmp_path / "m.ckpt")
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    try:
        replies = stream_frames("127.0.0.1", srv.port, pair.subject.frames[:31])
    finally:
        srv.shutdown()
        srv.server_close()
    assert replies[0].msg_type is MsgType.GENERATED_FRAME
