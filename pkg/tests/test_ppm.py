import numpy as np
import pytest

from freqmoa.ppm import (read_pgm, read_ppm, read_raw_grid, write_pgm,
                         write_ppm, write_raw_grid)


def test_ppm_roundtrip_quantized(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(3, 8, 6))
    p = tmp_path / "a.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back.shape == (3, 8, 6)
    # quantization error bounded by half a byte step
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_ppm_second_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, size=(3, 5, 5))
    p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_ppm(p1, img)
    once = read_ppm(p1)
    write_ppm(p2, once)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(read_ppm(p2), once)


def test_ppm_header_comment(tmp_path):
    p = tmp_path / "c.ppm"
    body = bytes([10, 20, 30] * 4)
    p.write_bytes(b"P6\n# a comment\n2 2\n255\n" + body)
    img = read_ppm(p)
    assert img.shape == (3, 2, 2)
    assert np.allclose(img[0], 10 / 255)


def test_ppm_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n2 2\n255\n")
    with pytest.raises(ValueError, match="P6"):
        read_ppm(p)


def test_ppm_rejects_maxval(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + b"\0" * 6)
    with pytest.raises(ValueError, match="maxval"):
        read_ppm(p)


def test_ppm_truncated(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + b"\0" * 10)
    with pytest.raises(ValueError, match="truncated"):
        read_ppm(p)


def test_ppm_clips_out_of_range(tmp_path):
    img = np.array([[[-0.5]], [[0.5]], [[1.5]]])
    p = tmp_path / "clip.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back[0, 0, 0] == 0.0
    assert back[2, 0, 0] == 1.0


def test_pgm_roundtrip(tmp_path):
    labels = np.arange(12).reshape(3, 4) % 4
    p = tmp_path / "l.pgm"
    write_pgm(p, labels)
    assert np.array_equal(read_pgm(p), labels)


def test_pgm_rejects_wide_labels(tmp_path):
    with pytest.raises(ValueError, match="byte"):
        write_pgm(tmp_path / "x.pgm", np.array([[300]]))


def test_raw_grid_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(2)
    grid = rng.normal(size=(5, 7, 3))
    p = tmp_path / "g.bin"
    write_raw_grid(p, grid)
    assert np.array_equal(read_raw_grid(p), grid)


def test_raw_grid_header(tmp_path):
    p = tmp_path / "g.bin"
    write_raw_grid(p, np.zeros((2, 3, 4)))
    assert p.read_bytes().startswith(b"EAGRID1 2 3 4\n")


def test_raw_grid_rejects_garbage(tmp_path):
    p = tmp_path / "g.bin"
    p.write_bytes(b"nope\n")
    with pytest.raises(ValueError, match="EAGRID1"):
        read_raw_grid(p)
