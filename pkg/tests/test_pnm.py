import numpy as np
import pytest

from dpe.errors import FormatError
from dpe.plane import ImagePlane
from dpe.pnm import read_image, write_image

from conftest import random_plane


class TestRoundTrip:
    def test_16bit_quantization_bound(self, rng, tmp_path):
        plane = random_plane(rng, (1, 9, 13))
        path = tmp_path / "img.pgm"
        write_image(plane, path, maxval=65535)
        back = read_image(path)
        assert back.shape == plane.shape
        assert np.max(np.abs(back.data - plane.data)) <= 0.5 / 65535

    def test_8bit_round_trip(self, rng, tmp_path):
        plane = random_plane(rng, (3, 6, 7))
        path = tmp_path / "img.ppm"
        write_image(plane, path, maxval=255)
        back = read_image(path)
        assert back.shape == plane.shape
        assert np.max(np.abs(back.data - plane.data)) <= 0.5 / 255

    def test_rgb_has_three_channels(self, rng, tmp_path):
        plane = random_plane(rng, (3, 4, 5))
        path = tmp_path / "img.ppm"
        write_image(plane, path)
        assert read_image(path).channels == 3

    def test_shape_preserved_always(self, rng, tmp_path):
        for shape in [(1, 2, 3), (3, 5, 2), (1, 17, 1)]:
            plane = random_plane(rng, shape)
            path = tmp_path / "x.pnm"
            write_image(plane, path)
            assert read_image(path).shape == shape


class TestHeaders:
    def test_comments_allowed(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = bytes([0, 128, 255, 64])
        path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + payload)
        plane = read_image(path)
        assert plane.shape == (1, 2, 2)
        assert plane.data[0, 0, 1] == 128 / 255

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P7\n1 1\n255\n\x00")
        with pytest.raises(FormatError, match="magic"):
            read_image(path)

    def test_bad_maxval(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n1023\n\x00\x00")
        with pytest.raises(FormatError, match="maxval"):
            read_image(path)

    def test_nonnumeric_header(self, tmp_path):
        path = tmp_path / "h.pgm"
        path.write_bytes(b"P5\nwide 2\n255\n\x00\x00")
        with pytest.raises(FormatError, match="non-numeric"):
            read_image(path)


class TestTruncation:
    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))  # needs 16
        with pytest.raises(FormatError, match="byte"):
            read_image(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4")
        with pytest.raises(FormatError):
            read_image(path)

    def test_16bit_is_big_endian(self, tmp_path):
        path = tmp_path / "be.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\xff\x00")
        plane = read_image(path)
        assert plane.data[0, 0, 0] == 0xFF00 / 65535
