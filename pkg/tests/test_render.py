import numpy as np
import pytest

from motionblend import geometry as geo
from motionblend import render as rd
from motionblend import skinning as sk
from motionblend.errors import ValidationError


def front_camera(w=33, h=33):
    # unit focal, principal point at image center, world origin 2 units ahead
    return rd.Camera(10.0, 10.0, (w - 1) / 2, (h - 1) / 2, w, h, geo.Pose(geo.QUAT_IDENTITY, [0, 0, 2.0]))


class TestRenderPoints:
    def test_axis_splat_hits_principal_pixel(self):
        cam = front_camera()
        splats = sk.Splats(np.zeros((1, 3)), colors=[[1.0, 0.0, 0.0]])
        img = rd.render_points(splats, cam, radius_px=1)
        assert tuple(img[16, 16]) == (255, 0, 0)
        assert img.sum() == 255 * 5  # center + 4-neighborhood footprint

    def test_nearer_splat_wins(self):
        cam = front_camera()
        splats = sk.Splats(
            [[0, 0, 0], [0, 0, 1]], colors=[[1, 0, 0], [0, 1, 0]]
        )  # z=1 is farther from the camera at z=-2
        img = rd.render_points(splats, cam, radius_px=0)
        assert tuple(img[16, 16]) == (255, 0, 0)

    def test_behind_camera_skipped(self):
        cam = front_camera()
        splats = sk.Splats([[0, 0, -5]], colors=[[1, 1, 1]])
        img = rd.render_points(splats, cam, radius_px=2)
        assert img.sum() == 0

    def test_transparent_skipped(self):
        cam = front_camera()
        splats = sk.Splats([[0, 0, 0]], colors=[[1, 1, 1]], opacities=[0.01])
        assert rd.render_points(splats, cam, radius_px=1).sum() == 0

    def test_depth_tie_lower_index(self):
        cam = front_camera()
        splats = sk.Splats([[0, 0, 0], [0, 0, 0]], colors=[[1, 0, 0], [0, 0, 1]])
        img = rd.render_points(splats, cam, radius_px=0)
        assert tuple(img[16, 16]) == (255, 0, 0)


class TestInstanceMask:
    def test_single_instance_single_pixel(self):
        cam = front_camera()
        splats = sk.Splats([[0, 0, 0]], instance_ids=[0])
        masks = rd.render_instance_mask(splats, cam, 1, radius_px=0)
        assert masks.shape == (1, 33, 33)
        assert masks.sum() == 1 and masks[0, 16, 16] == 1

    def test_occlusion(self):
        cam = front_camera()
        splats = sk.Splats([[0, 0, 1], [0, 0, 0]], instance_ids=[0, 1])
        masks = rd.render_instance_mask(splats, cam, 2, radius_px=0)
        assert masks[1, 16, 16] == 1 and masks[0, 16, 16] == 0

    def test_zero_splats(self):
        cam = front_camera()
        masks = rd.render_instance_mask(sk.Splats(np.zeros((0, 3))), cam, 3)
        assert masks.shape == (3, 33, 33) and masks.sum() == 0

    def test_out_of_range_instance(self):
        cam = front_camera()
        with pytest.raises(ValidationError):
            rd.render_instance_mask(sk.Splats([[0, 0, 0]], instance_ids=[5]), cam, 2)

    def test_every_set_bit_has_a_splat(self):
        rng = np.random.default_rng(0)
        cam = front_camera()
        splats = sk.Splats(rng.normal(size=(40, 3)) * 0.5, instance_ids=rng.integers(0, 3, 40))
        masks = rd.render_instance_mask(splats, cam, 3, radius_px=1)
        img = rd.render_points(splats, cam, radius_px=1)
        covered = masks.any(axis=0)
        assert np.array_equal(covered, img.any(axis=2) | covered)  # masks subset of coverage


class TestImageFiles:
    def test_png_decodes_with_opencv(self, tmp_path):
        import cv2

        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (20, 31, 3)).astype(np.uint8)
        p = tmp_path / "img.png"
        rd.write_image(p, img)
        back = cv2.imread(str(p), cv2.IMREAD_COLOR)[:, :, ::-1]  # BGR -> RGB
        assert np.array_equal(back, img)

    def test_png_bytes_deterministic(self):
        img = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
        assert rd.image_bytes(img, "png") == rd.image_bytes(img, "png")

    def test_ppm_round_trip(self, tmp_path):
        img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        p = tmp_path / "img.ppm"
        rd.write_image(p, img)
        data = p.read_bytes()
        assert data.startswith(b"P6\n3 2\n255\n")
        assert data.endswith(img.tobytes())

    def test_pgm_round_trip(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        p = tmp_path / "m.pgm"
        rd.write_pgm(p, img)
        assert np.array_equal(rd.read_pgm(p), img)

    def test_bad_extension(self, tmp_path):
        with pytest.raises(ValidationError):
            rd.write_image(tmp_path / "img.bmp", np.zeros((2, 2, 3), dtype=np.uint8))
