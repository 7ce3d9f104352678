"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured values
and then asserts, so a ``pytest -v`` log doubles as the acceptance report.
"""

from __future__ import annotations

import threading
import time

import numpy as np
import pytest
import torch

from reactmotion.formats import parse_clip, serialize_clip
from reactmotion.generation import run_offline
from reactmotion.harness import HarnessConfig, run_error_accumulation
from reactmotion.metrics import bone_drift
from reactmotion.models import Arch, ModelConfig, build_model
from reactmotion.nn import OptimizerConfig, mse_loss
from reactmotion.preprocess import (
    GapPolicy,
    SparseTrack,
    interpolate_gaps,
    map_coco_to_h36m,
    normalize_frame,
    retarget_frame,
)
from reactmotion.protocol import FrameMessage, MsgType, decode_frame, encode_frame
from reactmotion.server import make_server, stream_frames
from reactmotion.skeleton import PoseFrame, bone_lengths, default_topology, mirror_frame
from reactmotion.synthetic import analytic_counterpart, mirrored_delay_pair, synthetic_corpus
from reactmotion.training import TrainRunConfig, read_checkpoint, train

from .conftest import MirrorOracle
from .test_nn import GRAD_CFG, numeric_vs_analytic


@pytest.fixture
def report(capsys):
    def emit(criterion: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")

    return emit


def test_c01_preprocessing_suite(report):
    start = time.perf_counter()
    topo = default_topology()
    rng = np.random.default_rng(2024)
    worst_rel, retarget_fixed, normalize_fixed, involution = 0.0, True, True, True
    for k in range(1000):
        joints = rng.normal(0, rng.uniform(0.05, 2.0), (17, 3)) + rng.uniform(-5, 5, 3)
        f = PoseFrame(joints, k % 2, k)
        r = retarget_frame(f, topo)
        rel = np.abs(bone_lengths(r, topo) - topo.bone_reference) / topo.bone_reference
        worst_rel = max(worst_rel, float(rel.max()))
        retarget_fixed &= retarget_frame(r, topo) == r
        n = normalize_frame(r)
        normalize_fixed &= normalize_frame(n) == n and retarget_frame(n, topo) == n
        m = mirror_frame(mirror_frame(f))
        involution &= m.joints.tobytes() == f.joints.tobytes() and m == f

    # interpolation on linear tracks with gaps up to three frames
    worst_line = 0.0
    for trial in range(50):
        a, b = rng.normal(size=(17, 2)), rng.normal(size=(17, 2))
        present = [0]
        while present[-1] < 80:
            present.append(present[-1] + int(rng.integers(1, 5)))
        (seg,) = interpolate_gaps(SparseTrack(0, {t: a + b * t for t in present}), GapPolicy())
        expected = a + b * np.asarray(seg.frame_indices, dtype=float)[:, None, None]
        worst_line = max(worst_line, float(np.abs(seg.coords - expected).max()))

    def lens(indices):
        return [len(s) for s in interpolate_gaps(SparseTrack(0, {t: np.zeros((17, 2)) for t in indices}))]

    gap3 = lens(list(range(40)) + list(range(43, 80))) == [80]
    gap4 = lens(list(range(40)) + list(range(44, 80))) == [40, 36]
    drop29 = lens(range(29)) == [] and lens(range(30)) == [30]
    elapsed = time.perf_counter() - start

    ok = (
        worst_rel < 1e-6 and retarget_fixed and normalize_fixed and involution
        and worst_line < 1e-9 and gap3 and gap4 and drop29 and elapsed < 10
    )
    report(1, ok, f"retarget rel err {worst_rel:.2e} (<1e-6), retarget/normalize idempotent "
                  f"{retarget_fixed}/{normalize_fixed}, mirror involution {involution}, linear fill err "
                  f"{worst_line:.1e} (<1e-9), gap3 fill {gap3}, gap4 split {gap4}, 29-frame drop {drop29}, "
                  f"{elapsed:.1f}s (<10s)")
    assert ok


def test_c02_joint_mapping_golden(report):
    coco = np.array([[10.0 * i + 1, -3.0 * i + 2] for i in range(17)])
    h = map_coco_to_h36m(coco)
    c = {i: coco[i] for i in range(17)}
    neck = np.array([(c[5][0] + c[6][0]) / 2, (c[5][1] + c[6][1]) / 2])
    pelvis = np.array([(c[11][0] + c[12][0]) / 2, (c[11][1] + c[12][1]) / 2])
    # hand-written expectations, one per H36M row
    expected = {
        0: pelvis,
        1: c[12], 2: c[14], 3: c[16],
        4: c[11], 5: c[13], 6: c[15],
        7: np.array([(pelvis[0] + neck[0]) / 2, (pelvis[1] + neck[1]) / 2]),
        8: neck,
        9: c[0],
        10: np.array([2 * c[0][0] - neck[0], 2 * c[0][1] - neck[1]]),
        11: c[5], 12: c[7], 13: c[9],
        14: c[6], 15: c[8], 16: c[10],
    }
    rows = {i: bool(np.array_equal(h[i], expected[i])) for i in range(17)}
    # the worked examples with round numbers
    z = np.zeros((17, 2))
    z[11], z[12] = (1, 0), (3, 0)
    ex_pelvis = tuple(map_coco_to_h36m(z)[0]) == (2.0, 0.0)
    z = np.zeros((17, 2))
    z[5], z[6] = (2, 4), (4, 4)
    ex_neck = tuple(map_coco_to_h36m(z)[8]) == (3.0, 4.0)
    z = np.zeros((17, 2))
    z[0], z[5], z[6] = (3, 1), (2, 3), (4, 3)
    ex_head = tuple(map_coco_to_h36m(z)[10]) == (3.0, -1.0)
    ok = all(rows.values()) and ex_pelvis and ex_neck and ex_head
    failed = [i for i, good in rows.items() if not good]
    report(2, ok, f"{sum(rows.values())}/17 rows exact (failed: {failed}); pelvis/neck/head-top examples "
                  f"{ex_pelvis}/{ex_neck}/{ex_head}")
    assert ok


def test_c03_gradient_check(report):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        for arch in Arch:
            model = build_model(GRAD_CFG.with_(arch=arch, use_person_id=bool(seed % 2)), seed=seed).double()
            g = torch.Generator().manual_seed(seed)
            x = torch.randn(2, 30, 51, generator=g, dtype=torch.float64)
            y = torch.randn(2, 30, 51, generator=g, dtype=torch.float64)
            t = torch.randn(2, 51, generator=g, dtype=torch.float64)
            past = torch.cat([x, y], -1)[:, -10:]
            err = numeric_vs_analytic(model, lambda: mse_loss(model(x, y, past), t), 20, seed)
            worst = max(worst, err)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-3 and elapsed < 30
    report(3, ok, f"worst relative gradient error {worst:.2e} (<1e-3) over 20 seeds x 3 architectures, "
                  f"d_model=8 heads=1 ffn=16, {elapsed:.1f}s (<30s)")
    assert ok


def test_c04_architecture_suite(report):
    g = torch.Generator().manual_seed(0)
    x, y = torch.randn(1, 30, 51, generator=g), torch.randn(1, 30, 51, generator=g)
    past = torch.cat([x, y], -1)[:, -10:]
    shapes = {}
    for arch in Arch:
        model = build_model(ModelConfig(arch=arch), seed=0).eval()
        with torch.no_grad():
            out = model(x, y, past)
        shapes[arch.value] = tuple(out.shape) == (1, 51) and bool(torch.isfinite(out).all())

    simple = build_model(GRAD_CFG, seed=0).double().eval()
    xd, yd, pd = x.double(), y.double(), past.double()
    causal = True
    with torch.no_grad():
        memory = simple.encode(xd, yd)
        base = simple.decode(pd, memory)
        for k in range(10):
            moved = pd.clone()
            moved[:, k] += 1.0
            h = simple.decode(moved, memory)
            causal &= torch.equal(h[:, :k], base[:, :k]) and not torch.equal(h[:, k:], base[:, k:])

    series = torch.randn(2, 102, 30, generator=g, dtype=torch.float64)
    perm = torch.randperm(102, generator=g)
    owners = torch.tensor([0] * 51 + [1] * 51)
    inv_off = build_model(GRAD_CFG.with_(arch=Arch.INVERTED), seed=0).double().eval()
    inv_on = build_model(GRAD_CFG.with_(arch=Arch.INVERTED, use_person_id=True), seed=0).double().eval()
    with torch.no_grad():
        equi_off = torch.equal(inv_off.forward_variates(series)[:, perm].float(),
                               inv_off.forward_variates(series[:, perm]).float())
        broken_on = not torch.equal(inv_on.forward_variates(series, owners)[:, perm].float(),
                                    inv_on.forward_variates(series[:, perm], owners).float())

    cross = build_model(ModelConfig(arch=Arch.CROSS_SEGMENT), seed=0).eval()
    with torch.no_grad():
        enc = cross.encode(torch.cat([x, y], -1).transpose(1, 2), None)
    enc_tokens = tuple(enc.shape[1:3])
    dec_tokens = tuple(cross.dec_pos.shape[1:3])
    tokens_ok = enc_tokens == (102, 6) and dec_tokens == (102, 1)

    ok = all(shapes.values()) and causal and equi_off and broken_on and tokens_ok
    report(4, ok, f"1x51 finite outputs {shapes}; causal mask {causal}; inverted equivariance ID-off "
                  f"{equi_off}, broken ID-on {broken_on}; CrossSegment tokens encoder {enc_tokens[0]}x"
                  f"{enc_tokens[1]}, decoder {dec_tokens[0]}x{dec_tokens[1]}")
    assert ok


def test_c05_overfit_and_regenerate(report):
    start = time.perf_counter()
    topo = default_topology()
    pair = mirrored_delay_pair(200, topo, seed=0)
    cfg = TrainRunConfig(
        model=ModelConfig(d_model=64, n_heads=4, d_ffn=128, dropout=0.0),
        optimizer=OptimizerConfig(learning_rate=1e-3, batch_size=32),
        epochs=10**6,
        max_steps=2000,
        seed=0,
    )
    result = train(cfg, [pair])
    final_loss = result.losses[-1]
    generated, subject = run_offline(result.model, pair, 100, topo)
    # analytic counterpart of frame t is the mirrored subject frame t - 1
    truth = analytic_counterpart(pair.subject.joints[29:130])
    assert np.array_equal(truth, pair.counterpart.joints[30:130])
    per_frame = ((generated.joints - truth) ** 2).mean(axis=(1, 2))
    drift = bone_drift(generated, topo)
    drift100 = float(drift.mean_rel_err[-1])
    elapsed = time.perf_counter() - start
    ok = final_loss < 1e-3 and len(result.losses) <= 2000 and per_frame.max() < 1e-2 and drift100 < 0.05
    ok = ok and elapsed < 300
    report(5, ok, f"final training loss {final_loss:.2e} after {len(result.losses)} steps (<1e-3 within 2000); "
                  f"worst per-frame MSE {per_frame.max():.2e} (<1e-2) over 100 frames; mean bone drift at "
                  f"frame 100 {drift100:.2%} (<5%); {elapsed:.0f}s (<300s)")
    assert ok


def test_c06_error_accumulation_report(report, tmp_path):
    cfg = HarnessConfig(
        n_pairs=3,
        n_frames=120,
        horizon=60,
        max_steps=60,
        model=ModelConfig(d_model=16, n_heads=2, d_ffn=32, dropout=0.0, n_routers=4),
    )
    results = run_error_accumulation(tmp_path, cfg)
    csvs = sorted(p.name for p in tmp_path.glob("drift_*.csv"))
    monotone = True
    for r in results:
        rows = (tmp_path / f"{r.name}.csv").read_text().splitlines()[1:]
        frames = [int(row.split(",")[0]) for row in rows]
        expected_len = cfg.horizon if r.diverged_at is None else len(frames)
        monotone &= frames == list(range(frames[0], frames[0] + len(frames))) and len(frames) == expected_len
    final = {r.name.removeprefix("drift_"): round(float(r.report.mean_rel_err[-1]), 3) for r in results}
    ok = len(results) == 12 and len(csvs) == 12 and monotone
    report(6, ok, f"{len(csvs)} drift CSVs, monotone horizons {monotone}; final mean drift (observation only): "
                  f"{final}")
    assert ok


def test_c07_person_id_effect(report):
    g = torch.Generator().manual_seed(1)
    x, y = torch.randn(4, 30, 51, generator=g), torch.randn(4, 30, 51, generator=g)
    pairs = synthetic_corpus(1, 40, seed=5)
    grads, swaps = {}, {}
    for arch in Arch:
        cfg = GRAD_CFG.with_(arch=arch, use_person_id=True)
        model = build_model(cfg, seed=0)
        run = TrainRunConfig(model=cfg, optimizer=OptimizerConfig(batch_size=8), epochs=1, max_steps=1, seed=0)
        # capture the gradient of the very first batch
        seen = []
        model.person_embedding.register_hook(lambda grad: seen.append(grad.clone()))
        train(run, pairs, model=model)
        grads[arch.value] = bool(seen and torch.all(seen[0].abs().sum(-1) > 0))
        with torch.no_grad():
            swaps[arch.value] = not torch.equal(model(x, y, None, (0, 1)), model(x, y, None, (1, 0)))
    ok = all(grads.values()) and all(swaps.values())
    report(7, ok, f"non-zero first-batch embedding gradients {grads}; output changes on ownership swap {swaps}")
    assert ok


def test_c08_reproducibility(report, tmp_path):
    pairs = synthetic_corpus(2, 60, seed=8)
    cfg = TrainRunConfig(
        model=GRAD_CFG.with_(arch=Arch.SIMPLE, d_model=16, n_heads=2, d_ffn=32, dropout=0.1, use_person_id=True),
        optimizer=OptimizerConfig(learning_rate=1e-3, batch_size=16),
        epochs=2,
        seed=42,
    )
    a = train(cfg, pairs, tmp_path / "a.ckpt")
    b = train(cfg, pairs, tmp_path / "b.ckpt")
    same_ckpt = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    same_hist = a.losses == b.losses
    ga, _ = run_offline(a.model, pairs[0], 25)
    gb, _ = run_offline(b.model, pairs[0], 25)
    gc, _ = run_offline(a.model, pairs[0], 25)
    same_out = ga.joints.tobytes() == gb.joints.tobytes() == gc.joints.tobytes()
    seed_recorded = read_checkpoint(tmp_path / "a.ckpt").seed == 42
    ok = same_ckpt and same_hist and same_out and seed_recorded
    report(8, ok, f"bit-identical checkpoints {same_ckpt}, loss histories {same_hist}, run_offline outputs "
                  f"{same_out}, seed recorded {seed_recorded}")
    assert ok


def test_c09_protocol_suite(report):
    rng = np.random.default_rng(9)
    msg = FrameMessage(MsgType.SUBJECT_FRAME, 0, 123, rng.normal(size=51))
    buf = encode_frame(msg)
    roundtrip = decode_frame(buf) == msg and encode_frame(decode_frame(buf)) == buf
    length_ok = len(buf) == 214
    crashes = 0
    for _ in range(10_000):
        try:
            decode_frame(rng.bytes(int(rng.integers(0, 300))))
        except Exception as exc:  # noqa: BLE001
            crashes += not isinstance(exc, (ValueError, OSError)) or type(exc).__module__ != "reactmotion.errors"
    pair = mirrored_delay_pair(60, seed=2)

    def serve_once(model, n):
        srv = make_server(model)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        try:
            return stream_frames("127.0.0.1", srv.port, pair.subject.frames[:n])
        finally:
            srv.shutdown()
            srv.server_close()

    cadence = {}
    for n in (10, 30, 31, 45):
        replies = serve_once(build_model(GRAD_CFG, seed=0), n)
        cadence[n] = sum(r.msg_type is MsgType.GENERATED_FRAME for r in replies)
    cadence_ok = all(v == max(0, n - 30) for n, v in cadence.items())
    diverged = serve_once(MirrorOracle(fail_at=7), 45)
    err = diverged[-1]
    div_ok = err.msg_type is MsgType.ERROR and err.reason == "divergence at frame 37" and err.frame_index == 37
    ok = roundtrip and length_ok and crashes == 0 and cadence_ok and div_ok
    report(9, ok, f"round-trip {roundtrip}, 214-byte frame {length_ok}, fuzz crashes {crashes}/10000, replies "
                  f"by frames received {cadence}, divergence reply {err.msg_type.name} '{err.reason}'")
    assert ok


def test_c10_clip_file_fixed_point(report):
    corpus = synthetic_corpus(4, 200, seed=10)
    fixed = []
    six_digits = True
    for pair in corpus:
        first = serialize_clip(pair)
        second = serialize_clip(parse_clip(first))
        fixed.append(first == second)
        for line in first.splitlines()[1:50]:
            for cell in line.split(",")[2:]:
                digits = cell.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
                six_digits &= len(digits) <= 6
    ok = all(fixed) and six_digits
    report(10, ok, f"serialize-parse-serialize byte-identical on {sum(fixed)}/{len(fixed)} synthetic pairs; "
                   f"at most 6 significant digits {six_digits}")
    assert ok
