import numpy as np
import pytest

from vtondit import formats
from vtondit.errors import ParseError, VtonError
from vtondit.tensor import make_rng


def test_ppm_round_trip(tmp_path):
    rng = make_rng(0)
    image = rng.uniform(-1, 1, size=(3, 5, 4)).astype(np.float32)
    path = tmp_path / "a.ppm"
    formats.write_ppm(path, image)
    decoded = formats.read_ppm(path)
    second = tmp_path / "b.ppm"
    formats.write_ppm(second, decoded)
    assert path.read_bytes() == second.read_bytes()
    assert np.abs(decoded - image).max() <= 1.0 / 255.0 + 1e-6


def test_ppm_known_bytes():
    # 2x2, channels R,G,B per pixel: 0 -> -1.0, 255 -> 1.0
    blob = b"P6\n2 2\n255\n" + bytes([0, 0, 0, 255, 255, 255, 0, 255, 0, 255, 0, 0])
    path_free = blob
    import tempfile, os
    with tempfile.NamedTemporaryFile(delete=False, suffix=".ppm") as fh:
        fh.write(path_free)
        name = fh.name
    try:
        image = formats.read_ppm(name)
    finally:
        os.unlink(name)
    assert image.shape == (3, 2, 2)
    np.testing.assert_allclose(image[:, 0, 0], [-1, -1, -1])
    np.testing.assert_allclose(image[:, 0, 1], [1, 1, 1])
    np.testing.assert_allclose(image[:, 1, 0], [-1, 1, -1])
    np.testing.assert_allclose(image[:, 1, 1], [1, -1, -1])


def test_pgm_round_trip_and_threshold(tmp_path):
    mask = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)[None]
    path = tmp_path / "m.pgm"
    formats.write_pgm(path, mask)
    decoded = formats.read_pgm(path)
    np.testing.assert_array_equal(decoded, mask)
    second = tmp_path / "m2.pgm"
    formats.write_pgm(second, decoded)
    assert path.read_bytes() == second.read_bytes()

    # mid-gray maps by the >= 128 rule
    blob = b"P5\n2 1\n255\n" + bytes([127, 128])
    path.write_bytes(blob)
    np.testing.assert_array_equal(formats.read_pgm(path)[0, 0], [0.0, 1.0])


def test_ppm_truncated_payload_names_lengths(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 5)
    with pytest.raises(ParseError) as err:
        formats.read_ppm(path)
    assert "12" in str(err.value) and "5" in str(err.value)


def test_cvt1_round_trip(tmp_path):
    rng = make_rng(1)
    for dtype in (np.float32, np.float64):
        arr = rng.normal(size=(3, 5)).astype(dtype)
        path = tmp_path / f"t_{arr.dtype}.cvt"
        formats.write_tensor(path, arr)
        back = formats.read_tensor(path)
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)
        second = tmp_path / "again.cvt"
        formats.write_tensor(second, back)
        assert path.read_bytes() == second.read_bytes()


def test_cvt1_truncation_and_magic(tmp_path):
    arr = np.ones((2, 2), dtype=np.float32)
    blob = formats.tensor_to_bytes(arr)
    path = tmp_path / "x.cvt"
    path.write_bytes(blob[:-3])
    with pytest.raises(ParseError) as err:
        formats.read_tensor(path)
    assert "16" in str(err.value) and "13" in str(err.value)
    path.write_bytes(b"XVT1" + blob[4:])
    with pytest.raises(ParseError):
        formats.read_tensor(path)


def test_cvtw_round_trip(tmp_path):
    rng = make_rng(2)
    params = {"a.w": rng.normal(size=(2, 3)).astype(np.float32),
              "b.g": rng.normal(size=(4,)).astype(np.float32)}
    config = {"hidden": 8, "name": "toy"}
    path = tmp_path / "ck.cvtw"
    formats.write_checkpoint(path, config, params)
    got_config, got_params = formats.read_checkpoint(path)
    assert got_config == config
    assert set(got_params) == set(params)
    for key in params:
        np.testing.assert_array_equal(got_params[key], params[key])
    second = tmp_path / "ck2.cvtw"
    formats.write_checkpoint(second, got_config, got_params)
    assert path.read_bytes() == second.read_bytes()


def fuzz_reject(blob: bytes, reader, header_len: int, rng, tries: int):
    rejected = 0
    for _ in range(tries):
        pos = int(rng.integers(0, header_len))
        delta = int(rng.integers(1, 256))
        mutated = bytearray(blob)
        mutated[pos] = (mutated[pos] + delta) % 256
        try:
            reader(bytes(mutated))
        except VtonError:
            rejected += 1
        # any non-VtonError exception (or success) is a failure of the parser contract
    return rejected


def test_fuzzed_headers_rejected(tmp_path):
    rng = make_rng(3)
    arr = np.arange(1, 16, dtype=np.float32).reshape(3, 5)
    cvt_blob = formats.tensor_to_bytes(arr)

    def read_cvt(blob):
        return formats.tensor_from_bytes(blob)

    assert fuzz_reject(cvt_blob, read_cvt, 16, rng, 150) == 150

    ppm_path = tmp_path / "f.ppm"
    formats.write_ppm(ppm_path, rng.uniform(-1, 1, size=(3, 3, 5)).astype(np.float32))
    ppm_blob = ppm_path.read_bytes()

    def read_ppm_blob(blob):
        ppm_path.write_bytes(blob)
        return formats.read_ppm(ppm_path)

    assert fuzz_reject(ppm_blob, read_ppm_blob, 11, rng, 100) == 100
