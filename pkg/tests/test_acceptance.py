"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 7 trains the smoke profile for its full iteration budget through
the CLI and takes roughly 20 minutes on one CPU core.
"""

import statistics
import struct
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from tgafnet import functional as F
from tgafnet.autograd import Tensor, float64_mode
from tgafnet.cli import main
from tgafnet.data import synthetic_sequence
from tgafnet.deform import dcn_forward, offset_channels
from tgafnet.errors import CheckpointFormatError, UnsupportedVersionError
from tgafnet.gradcheck import SUITES, TOLERANCE_F64, run_all
from tgafnet.metrics import PSNR_CAP, psnr, ssim
from tgafnet.model import SDCB, ModelConfig, build_model, param_count
from tgafnet.train import (SMOKE_MODEL, AdamState, TrainConfig, adam_step, charbonnier_loss, load_checkpoint,
                           save_checkpoint, snapshot)
from tgafnet.videoio import VideoSequence, quantize, read_yuv420, write_yuv420

from test_metrics import brute_psnr, brute_ssim
from test_train import scalar_adam

SIZE = 96
FRAMES = 10
STRENGTH = 3


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _write_sequence(path, frames):
    write_yuv420(VideoSequence(SIZE, SIZE, [quantize(f) for f in frames]), path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """One raw synthetic sequence plus its strength-3 companion produced by the CLI."""
    root = tmp_path_factory.mktemp("corpus")
    raw = root / f"synthetic_{SIZE}x{SIZE}.yuv"
    _write_sequence(raw, synthetic_sequence(FRAMES, SIZE, SIZE, seed=0))
    lq = root / f"synthetic_{SIZE}x{SIZE}.lq.yuv"
    code = main(["degrade", "--in", str(raw), "--out", str(lq), "--width", str(SIZE), "--height", str(SIZE),
                 "--strength", str(STRENGTH)])
    assert code == 0
    return root, raw, lq


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_all(seeds=range(5), float64=True)
    elapsed = time.perf_counter() - start
    covered = {r.name for r in results}
    dcn_args = {k for r in results if r.name == "dcn" for k in r.errors}
    worst = max(r.max_error for r in results)
    ok = (all(r.passed for r in results) and covered == set(SUITES) and len(results) == 5 * len(SUITES)
          and dcn_args == {"input", "offsets", "weight", "bias"} and elapsed < 300)
    report(1, ok, f"{len(results)} checks over {len(covered)} ops, worst rel err {worst:.2e} "
                  f"(< {TOLERANCE_F64:g}), {elapsed:.1f}s")


def test_criterion_2_dcn_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    with float64_mode():
        for k in (1, 3, 5):
            x = rng.standard_normal((1, 3, 12, 12))
            w = rng.standard_normal((4, 3, k, k))
            b = rng.standard_normal(4)
            off = np.zeros((1, offset_channels(k, 3), 12, 12))
            got = dcn_forward(Tensor(x), Tensor(off), Tensor(w), Tensor(b), 3).data
            ref = F.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=(k - 1) // 2).data
            worst = max(worst, np.abs(got - ref).max())
        c = 64  # per-channel groups as used by the fusion stage
        x = rng.standard_normal((1, c, 8, 8))
        w = rng.standard_normal((c, c, 1, 1))
        b = rng.standard_normal(c)
        got = dcn_forward(Tensor(x), Tensor(np.zeros((1, 2 * c, 8, 8))), Tensor(w), Tensor(b), c).data
        worst = max(worst, np.abs(got - F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data).max())
        shift_worst = 0.0
        for dy, dx in ((1, 0), (-2, 1), (2, 2)):
            x = rng.standard_normal((1, 3, 16, 16))
            w = rng.standard_normal((2, 3, 3, 3))
            off = np.zeros((1, 1, 9, 2, 16, 16))
            off[:, :, :, 0], off[:, :, :, 1] = dy, dx
            got = dcn_forward(Tensor(x), Tensor(off.reshape(1, 18, 16, 16)), Tensor(w), None, 1).data
            ref = F.conv2d(Tensor(np.roll(x, (-dy, -dx), axis=(2, 3))), Tensor(w), None, padding=1).data
            m = 3
            shift_worst = max(shift_worst, np.abs(got - ref)[..., m:-m, m:-m].max())
    report(2, worst < 1e-5 and shift_worst < 1e-5,
           f"zero-offset max diff {worst:.1e}, integer-shift interior max diff {shift_worst:.1e}")


def test_criterion_3_residual_identity_through_cli(corpus, tmp_path):
    _, _, lq = corpus
    model = build_model(ModelConfig(**SMOKE_MODEL), seed=0)
    model.fe.tail.weight.data[:] = 0
    model.fe.tail.bias.data[:] = 0
    save_checkpoint(snapshot(model, 0), tmp_path / "zero_tail.ckpt")
    out = tmp_path / "identity.yuv"
    code = main(["enhance", "--in", str(lq), "--out", str(out), "--width", str(SIZE), "--height", str(SIZE),
                 "--ckpt", str(tmp_path / "zero_tail.ckpt")])
    same = code == 0 and out.read_bytes() == lq.read_bytes()
    report(3, same, f"enhance exit {code}, output file {'equals' if same else 'differs from'} input")


def test_criterion_4_shape_contract():
    model = build_model(ModelConfig(), seed=0)
    shapes = []
    for h, w in ((64, 64), (70, 46), (128, 128)):
        frames = np.random.default_rng(h).random((1, 7, h, w), dtype=np.float32)
        shapes.append(((h, w), model.forward(frames).shape[2:]))
    report(4, all(a == b for a, b in shapes), ", ".join(f"{a[0]}x{a[1]}->{b[0]}x{b[1]}" for a, b in shapes))


def test_criterion_5_offset_channels():
    model = build_model(ModelConfig(), seed=0)
    intra = [b.ocn_intra.weight.shape[0] for b in model.branches]
    inter = model.fusion.ocn_inter.weight.shape[0]
    report(5, intra == [6, 54, 150] and inter == 128, f"intra offset channels {intra}, inter {inter}")


def test_criterion_6_adam_and_charbonnier():
    rng = np.random.default_rng(6)
    cfg = TrainConfig(lr=1e-3)
    with float64_mode():
        theta0 = rng.standard_normal(8)
        grads = rng.standard_normal((100, 8))
        p = Tensor(theta0, requires_grad=True)
        state = AdamState()
        for g in grads:
            p.grad = g.copy()
            adam_step({"theta": p}, state, cfg)
        ref = np.array([scalar_adam(theta0[i], grads[:, i], cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                        for i in range(8)])
        err = np.abs(p.data - ref).max()
        y = rng.random((2, 1, 8, 8))
        at_equal = charbonnier_loss(Tensor(y), y, 1e-3).item()
    report(6, err <= 1e-12 and at_equal == 1e-3,
           f"Adam max diff {err:.1e} over 100 steps, Charbonnier at pred=target {at_equal!r}")


@pytest.mark.slow
def test_criterion_7_overfit_smoke(corpus, tmp_path):
    root, raw, lq = corpus
    dims = ["--width", str(SIZE), "--height", str(SIZE)]
    ckpt, log, enhanced = tmp_path / "smoke.ckpt", tmp_path / "loss.log", tmp_path / "enhanced.yuv"
    start = time.perf_counter()
    code_train = main(["train", "--data-dir", str(root), "--out-ckpt", str(ckpt), "--seed", "0", "--smoke",
                       "--log-file", str(log)])
    code_enh = main(["enhance", "--in", str(lq), "--out", str(enhanced), *dims, "--ckpt", str(ckpt)])
    code_eval = main(["eval", "--raw", str(raw), "--degraded", str(lq), "--enhanced", str(enhanced), *dims])
    elapsed = time.perf_counter() - start

    losses = [float(line.split("loss=")[1]) for line in log.read_text().splitlines()]
    medians = [statistics.median(losses[i * 100:(i + 1) * 100]) for i in range(10)]
    decreasing = len(losses) >= 1000 and all(a > b for a, b in zip(medians, medians[1:]))
    to_float = [p.astype(np.float64) / 255 for p in read_yuv420(raw, SIZE, SIZE).y]
    deg = [p.astype(np.float64) / 255 for p in read_yuv420(lq, SIZE, SIZE).y]
    enh = [p.astype(np.float64) / 255 for p in read_yuv420(enhanced, SIZE, SIZE).y]
    gain = np.mean([psnr(e, r) for e, r in zip(enh, to_float)]) - np.mean([psnr(d, r) for d, r in zip(deg, to_float)])
    ok = (code_train, code_enh, code_eval) == (0, 0, 0) and gain >= 1.0 and decreasing and elapsed < 1800
    report(7, ok, f"ΔPSNR {gain:+.2f} dB after {len(losses)} iterations in {elapsed / 60:.1f} min; "
                  f"window medians {'strictly decrease' if decreasing else 'do not strictly decrease'} "
                  f"({', '.join(f'{m:.4f}' for m in medians)})")


def test_criterion_8_metric_oracles():
    rng = np.random.default_rng(8)
    psnr_err = ssim_err = 0.0
    for _ in range(10):
        a = rng.random((24, 24))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.2), a.shape), 0, 1)
        psnr_err = max(psnr_err, abs(psnr(a, b) - brute_psnr(a, b)))
        ssim_err = max(ssim_err, abs(ssim(a, b) - brute_ssim(a, b)))
    a = rng.random((24, 24))
    ok = psnr_err < 1e-6 and ssim_err < 1e-4 and ssim(a, a) == 1.0 and psnr(a, a) == PSNR_CAP
    report(8, ok, f"PSNR max diff {psnr_err:.1e} dB, SSIM max diff {ssim_err:.1e}, identity cases exact")


def test_criterion_9_determinism_and_checkpoint_format(corpus, tmp_path):
    root = corpus[0]
    outputs = []
    for run in ("a", "b"):
        ckpt, log = tmp_path / f"{run}.ckpt", tmp_path / f"{run}.log"
        code = main(["train", "--data-dir", str(root), "--out-ckpt", str(ckpt), "--seed", "3", "--smoke",
                     "--iters", "5", "--log-file", str(log)])
        outputs.append((code, ckpt.read_bytes(), log.read_text()))
    identical = outputs[0] == outputs[1] and outputs[0][0] == 0

    original = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(original, tmp_path / "c.ckpt")
    reloaded = load_checkpoint(tmp_path / "c.ckpt")
    lossless = (all(reloaded.params[k].tobytes() == v.tobytes() for k, v in original.params.items())
                and reloaded.config == original.config and reloaded.iteration == original.iteration
                and (tmp_path / "c.ckpt").read_bytes() == outputs[0][1])

    data = outputs[0][1]
    (tmp_path / "t.ckpt").write_bytes(data[:len(data) // 2])
    (tmp_path / "v.ckpt").write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
    errors = []
    for name, kind in (("t.ckpt", CheckpointFormatError), ("v.ckpt", UnsupportedVersionError)):
        try:
            load_checkpoint(tmp_path / name)
            errors.append(False)
        except kind:
            errors.append(True)
    report(9, identical and lossless and all(errors),
           f"repeat runs {'bitwise identical' if identical else 'differ'}, round trip "
           f"{'lossless' if lossless else 'lossy'}, truncation/version errors raised: {errors}")


def test_criterion_10_parameter_accounting():
    total = param_count(build_model(ModelConfig(), seed=0))
    sdcb = param_count(SDCB(64, 0.1, np.random.default_rng(0)))
    report(10, 700_000 <= total <= 2_800_000 and sdcb == 73_920,
           f"default model {total:,} parameters, one SDCB at C=64 {sdcb:,}")
