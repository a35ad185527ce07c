"""Tests for pooled CNN frame features and the .vqaf writer.

The scoring package's reader is used as the round-trip oracle; the
backbone tests run with random weights so no downloads are needed, which
leaves the architecture (channel count, strides, frozen state) fully
exercised.
"""

import os

import cv2
import numpy as np
import pytest
import torch

from vqaextract.backbone import load_backbone, preprocess
from vqaextract.cli import main as cli_main
from vqaextract.errors import BackboneError, DecodeError
from vqaextract.extract import extract_video_features, video_id_for
from vqaextract.frames import iter_frames
from vqaextract.pooling import mean_std_pool

from vqalign.featureio import read_features


class TinyEncoder(torch.nn.Module):
    """1x1-conv stand-in for the real trunk; fast and deterministic."""

    min_input_size = 1

    def __init__(self, channels=6):
        super().__init__()
        torch.manual_seed(0)
        self.conv = torch.nn.Conv2d(3, channels, kernel_size=1)
        self.channels = channels
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        return self.conv(x)


class ConstantEncoder(torch.nn.Module):
    """Every feature map is the same constant, regardless of input."""

    min_input_size = 1

    def __init__(self, value=0.5, channels=6):
        super().__init__()
        self.value = value
        self.channels = channels

    def forward(self, x):
        return torch.full((x.shape[0], self.channels, 3, 4), self.value)


@pytest.fixture(scope="module")
def frame_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("frames") / "clip"
    root.mkdir()
    rng = np.random.default_rng(21)
    for i in range(5):
        bgr = rng.integers(0, 256, size=(40, 32, 3), dtype=np.uint8)
        assert cv2.imwrite(str(root / f"f{i:03d}.png"), bgr)
    return root


@pytest.fixture(scope="module")
def random_resnet():
    return load_backbone("resnet50", pretrained=False)


class TestPooling:
    def test_constant_map_pools_to_value_and_zero(self):
        maps = torch.full((5, 4, 3), 0.5)
        out = mean_std_pool(maps)
        assert out.shape == (10,)
        assert torch.equal(out[:5], torch.full((5,), 0.5))
        assert torch.equal(out[5:], torch.zeros(5))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_numpy_population_convention(self, seed):
        rng = np.random.default_rng(seed)
        maps = rng.normal(size=(7, 5, 6))
        out = mean_std_pool(torch.from_numpy(maps)).numpy()
        np.testing.assert_allclose(out[:7], maps.mean(axis=(1, 2)), atol=1e-12)
        np.testing.assert_allclose(out[7:], maps.std(axis=(1, 2), ddof=0), atol=1e-12)

    def test_std_half_nonnegative(self):
        rng = np.random.default_rng(3)
        out = mean_std_pool(torch.from_numpy(rng.normal(size=(8, 9, 4))))
        assert (out[8:] >= 0).all()

    def test_single_pixel_map(self):
        out = mean_std_pool(torch.tensor([[[2.5]], [[-1.0]]]))
        assert torch.equal(out, torch.tensor([2.5, -1.0, 0.0, 0.0]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match=r"\[C, H, W\]"):
            mean_std_pool(torch.zeros(4, 4))


class TestBackbone:
    def test_feature_dimension_is_4096(self, random_resnet):
        frame = np.random.default_rng(0).integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
        with torch.inference_mode():
            maps = random_resnet(preprocess(frame).unsqueeze(0))[0]
        assert maps.shape[0] == 2048
        assert mean_std_pool(maps).shape == (4096,)

    def test_weights_frozen_and_eval_pinned(self, random_resnet):
        assert all(not p.requires_grad for p in random_resnet.parameters())
        random_resnet.train()
        assert not random_resnet.training

    def test_unknown_backbone(self):
        with pytest.raises(BackboneError, match="unknown backbone"):
            load_backbone("vgg16")

    def test_constructor_failure_becomes_environment_error(self, monkeypatch):
        import torchvision.models

        def boom(weights=None):
            raise RuntimeError("no weights here")

        monkeypatch.setattr(torchvision.models, "resnet50", boom)
        with pytest.raises(BackboneError, match="no weights here"):
            load_backbone("resnet50", pretrained=True)

    def test_too_small_frame_rejected_with_index(self, random_resnet, tmp_path):
        small = tmp_path / "small"
        small.mkdir()
        assert cv2.imwrite(str(small / "f0.png"), np.zeros((8, 8, 3), dtype=np.uint8))
        with pytest.raises(DecodeError, match="frame 0.*32-pixel minimum"):
            extract_video_features(str(small), str(tmp_path / "o.vqaf"), encoder=random_resnet)

    def test_preprocess_normalizes_without_resizing(self):
        frame = np.full((34, 55, 3), 255, dtype=np.uint8)
        x = preprocess(frame)
        assert x.shape == (3, 34, 55)
        # white maps to (1 - mean) / std in every channel
        assert torch.allclose(x[0], torch.full((34, 55), (1.0 - 0.485) / 0.229))

    def test_preprocess_rejects_non_rgb(self):
        with pytest.raises(ValueError, match="RGB frame"):
            preprocess(np.zeros((10, 10), dtype=np.uint8))


class TestFrameIteration:
    def test_directory_order_and_color_conversion(self, tmp_path):
        d = tmp_path / "clip"
        d.mkdir()
        blue_bgr = np.zeros((36, 36, 3), dtype=np.uint8)
        blue_bgr[..., 0] = 255
        assert cv2.imwrite(str(d / "b.png"), blue_bgr)
        frames = list(iter_frames(str(d)))
        assert [i for i, _ in frames] == [0]
        rgb = frames[0][1]
        # pure blue lands in the last RGB channel after conversion
        assert rgb[..., 2].min() == 255 and rgb[..., 0].max() == 0

    def test_stride_keeps_every_nth_source_index(self, frame_dir):
        assert [i for i, _ in iter_frames(str(frame_dir), stride=2)] == [0, 2, 4]

    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DecodeError, match="no frame images"):
            list(iter_frames(str(tmp_path / "empty")))

    def test_undecodable_image_names_frame(self, tmp_path):
        d = tmp_path / "clip"
        d.mkdir()
        (d / "a.png").write_bytes(b"this is not an image")
        with pytest.raises(DecodeError, match=r"frame 0 \(a\.png\): undecodable"):
            list(iter_frames(str(d)))

    def test_missing_input(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list(iter_frames(str(tmp_path / "nope.mp4")))

    def test_video_file_decoding(self, tmp_path):
        path = str(tmp_path / "clip.avi")
        writer = cv2.VideoWriter(
            path, cv2.VideoWriter_fourcc(*"MJPG"), 10.0, (64, 48)
        )
        if not writer.isOpened():
            pytest.skip("no MJPG encoder available")
        rng = np.random.default_rng(5)
        for _ in range(8):
            writer.write(rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8))
        writer.release()
        frames = list(iter_frames(path))
        assert [i for i, _ in frames] == list(range(8))
        assert frames[0][1].shape == (48, 64, 3)
        assert [i for i, _ in iter_frames(path, stride=3)] == [0, 3, 6]


class TestExtraction:
    def test_roundtrips_through_scoring_reader(self, frame_dir, tmp_path):
        out = str(tmp_path / "clip.vqaf")
        video_id, feats = extract_video_features(str(frame_dir), out, encoder=TinyEncoder())
        seq = read_features(out)
        assert seq.video_id == video_id == "clip"
        assert seq.features.shape == (5, 12)
        assert seq.features.dtype == np.float32
        np.testing.assert_array_equal(seq.features, feats)

    def test_matches_direct_per_frame_computation(self, frame_dir, tmp_path):
        enc = TinyEncoder()
        out = str(tmp_path / "clip.vqaf")
        extract_video_features(str(frame_dir), out, encoder=enc)
        want = []
        with torch.inference_mode():
            for _, rgb in iter_frames(str(frame_dir)):
                want.append(mean_std_pool(enc(preprocess(rgb).unsqueeze(0))[0]).numpy())
        np.testing.assert_array_equal(
            read_features(out).features, np.stack(want).astype(np.float32)
        )

    def test_same_input_twice_identical_bytes(self, frame_dir, tmp_path):
        enc = TinyEncoder()
        a, b = str(tmp_path / "a.vqaf"), str(tmp_path / "b.vqaf")
        extract_video_features(str(frame_dir), a, encoder=enc)
        extract_video_features(str(frame_dir), b, encoder=enc)
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_constant_maps_give_zero_std_half(self, frame_dir, tmp_path):
        out = str(tmp_path / "c.vqaf")
        _, feats = extract_video_features(str(frame_dir), out, encoder=ConstantEncoder(0.5))
        assert feats.shape == (5, 12)
        np.testing.assert_array_equal(feats[:, :6], np.full((5, 6), 0.5, dtype=np.float32))
        np.testing.assert_array_equal(feats[:, 6:], np.zeros((5, 6), dtype=np.float32))

    def test_stride_recorded_in_video_id(self, frame_dir, tmp_path):
        out = str(tmp_path / "s.vqaf")
        video_id, feats = extract_video_features(
            str(frame_dir), out, encoder=TinyEncoder(), stride=2
        )
        assert video_id == "clip#stride2"
        assert feats.shape[0] == 3
        assert read_features(out).video_id == "clip#stride2"

    def test_video_id_for_paths(self):
        assert video_id_for("a/b/movie.mp4") == "movie"
        assert video_id_for("a/b/movie.mp4", stride=4) == "movie#stride4"


class TestCli:
    def test_end_to_end_untrained_backbone(self, tmp_path, capsys):
        clip = tmp_path / "clip"
        clip.mkdir()
        rng = np.random.default_rng(8)
        for i in range(2):
            bgr = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
            assert cv2.imwrite(str(clip / f"f{i}.png"), bgr)
        out = tmp_path / "features"
        assert cli_main(["--out", str(out), "--untrained", str(clip)]) == 0
        path = out / "clip.vqaf"
        assert str(path) in capsys.readouterr().out
        seq = read_features(str(path))
        assert seq.video_id == "clip"
        assert seq.features.shape == (2, 4096)

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        code = cli_main(["--out", str(tmp_path / "o"), "--untrained", str(tmp_path / "no.mp4")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_undecodable_input_is_data_error(self, tmp_path, capsys):
        clip = tmp_path / "clip"
        clip.mkdir()
        (clip / "a.png").write_bytes(b"junk")
        assert cli_main(["--out", str(tmp_path / "o"), "--untrained", str(clip)]) == 2
        assert "undecodable" in capsys.readouterr().err

    def test_unknown_backbone_is_environment_error(self, tmp_path, capsys):
        code = cli_main(["--out", str(tmp_path / "o"), "--backbone", "vgg16", "x.mp4"])
        assert code == 3
        assert "unknown backbone" in capsys.readouterr().err

    def test_bad_stride_is_usage_error(self, tmp_path):
        assert cli_main(["--out", str(tmp_path / "o"), "--stride", "0", "x.mp4"]) == 1

    def test_missing_out_flag_is_usage_error(self):
        assert cli_main(["x.mp4"]) == 1
