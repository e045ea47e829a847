import numpy as np
import pytest

from tgafnet.errors import DataFormatError
from tgafnet.videoio import VideoSequence, frame_bytes, quantize, read_yuv420, write_pgm, write_yuv420


def _random_yuv(path, w, h, frames, seed=0):
    data = np.random.default_rng(seed).integers(0, 256, frames * frame_bytes(w, h), dtype=np.uint8)
    path.write_bytes(data.tobytes())
    return data.tobytes()


def test_two_frame_64x64_file(tmp_path):
    raw = _random_yuv(tmp_path / "a.yuv", 64, 64, 2)
    assert len(raw) == 12_288
    seq = read_yuv420(tmp_path / "a.yuv", 64, 64)
    assert seq.frame_count == 2
    assert seq.y[0].shape == (64, 64) and seq.u[0].shape == (32, 32)


def test_roundtrip_is_bytewise(tmp_path):
    raw = _random_yuv(tmp_path / "a.yuv", 12, 6, 3)
    write_yuv420(read_yuv420(tmp_path / "a.yuv", 12, 6), tmp_path / "b.yuv")
    assert (tmp_path / "b.yuv").read_bytes() == raw


def test_plane_order_is_y_u_v(tmp_path):
    w, h = 4, 2
    frame = bytes([1] * 8 + [2] * 2 + [3] * 2)
    (tmp_path / "f.yuv").write_bytes(frame)
    seq = read_yuv420(tmp_path / "f.yuv", w, h)
    assert seq.y[0].min() == 1 and seq.u[0].min() == 2 and seq.v[0].min() == 3


def test_truncated_file_reports_sizes(tmp_path):
    raw = _random_yuv(tmp_path / "a.yuv", 8, 8, 2)
    (tmp_path / "a.yuv").write_bytes(raw[:-1])
    with pytest.raises(DataFormatError, match="191"):
        read_yuv420(tmp_path / "a.yuv", 8, 8)


@pytest.mark.parametrize("w,h", [(0, 4), (4, 0), (5, 4)])
def test_invalid_dims(tmp_path, w, h):
    (tmp_path / "a.yuv").write_bytes(b"\0" * 96)
    with pytest.raises(DataFormatError):
        read_yuv420(tmp_path / "a.yuv", w, h)


def test_luma_normalised_and_quantize_inverts():
    y = np.arange(256, dtype=np.uint8).reshape(16, 16)
    seq = VideoSequence(16, 16, [y])
    luma = seq.luma()[0]
    assert luma.min() == 0.0 and luma.max() == 1.0
    assert np.array_equal(quantize(luma), y)


def test_quantize_clamps_and_rounds_half_up():
    q = quantize(np.array([1.0, -0.01, 1.5, 0.5 / 255, 1.49 / 255]))
    assert q.tolist() == [255, 0, 255, 1, 1]


def test_with_luma_keeps_chroma(tmp_path):
    _random_yuv(tmp_path / "a.yuv", 8, 4, 2, seed=3)
    seq = read_yuv420(tmp_path / "a.yuv", 8, 4)
    out = seq.with_luma([np.zeros((4, 8))] * 2)
    assert all(np.array_equal(a, b) for a, b in zip(out.u, seq.u))
    assert all(np.array_equal(a, b) for a, b in zip(out.v, seq.v))
    assert not out.y[0].any()


def test_write_without_chroma_uses_neutral_grey(tmp_path):
    write_yuv420(VideoSequence(4, 2, [np.zeros((2, 4), np.uint8)]), tmp_path / "g.yuv")
    assert (tmp_path / "g.yuv").read_bytes() == bytes(8) + bytes([128] * 4)


def test_write_to_missing_directory_names_path(tmp_path):
    with pytest.raises(OSError, match="nowhere"):
        write_yuv420(VideoSequence(2, 2, [np.zeros((2, 2), np.uint8)]), tmp_path / "nowhere" / "x.yuv")


def test_pgm_header_and_payload(tmp_path):
    write_pgm(np.zeros((48, 64)), tmp_path / "z.pgm")
    data = (tmp_path / "z.pgm").read_bytes()
    header = b"P5\n64 48\n255\n"
    assert data.startswith(header)
    assert data[len(header):] == bytes(3072)


def test_pgm_readable_by_pillow(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    frame = np.random.default_rng(0).random((5, 7))
    write_pgm(frame, tmp_path / "r.pgm")
    with Image.open(tmp_path / "r.pgm") as im:
        assert np.array_equal(np.asarray(im), quantize(frame))
