import json
import struct

import numpy as np
import pytest

from actortubes.errors import FormatError, ValidationError
from actortubes.geometry import Box, Tube
from actortubes.ingest import (
    TENSOR_MAGIC,
    DetectionSet,
    FeatureTensor,
    GroundTruth,
    GroundTruthInstance,
    Manifest,
    ManifestEntry,
    VideoFrames,
    load_detections,
    load_ground_truth,
    load_manifest,
    load_tensor,
    save_detections,
    save_ground_truth,
    save_manifest,
    save_tensor,
)


def random_detections(rng, video_id="vid"):
    num_frames = int(rng.integers(1, 8))
    boxes = []
    for _ in range(int(rng.integers(0, 12))):
        f = int(rng.integers(0, num_frames))
        x1, y1 = rng.uniform(0, 20, size=2)
        w, h = rng.uniform(0, 10, size=2)
        boxes.append(Box(f, x1, y1, x1 + w, y1 + h, float(rng.uniform(0, 1))))
    return DetectionSet(video_id=video_id, num_frames=num_frames, detections=tuple(boxes))


class TestDetections:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(
            json.dumps(
                {
                    "format_version": 1,
                    "video_id": "v0",
                    "num_frames": 1,
                    "boxes": [{"frame": 0, "x1": 0, "y1": 0, "x2": 5, "y2": 5, "score": 0.9}],
                }
            )
        )
        dets = load_detections(path)
        assert dets.video_id == "v0"
        assert len(dets) == 1
        assert dets.detections[0].score == 0.9

    def test_frame_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(
            json.dumps(
                {
                    "format_version": 1,
                    "video_id": "v0",
                    "num_frames": 1,
                    "boxes": [{"frame": 1, "x1": 0, "y1": 0, "x2": 5, "y2": 5}],
                }
            )
        )
        with pytest.raises(ValidationError, match="frame 1"):
            load_detections(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text('{\n "format_version": 1,\n oops\n}')
        with pytest.raises(FormatError, match="line 3"):
            load_detections(path)

    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        for i in range(25):
            dets = random_detections(rng, f"v{i}")
            p1 = tmp_path / "a.json"
            p2 = tmp_path / "b.json"
            save_detections(p1, dets)
            save_detections(p2, load_detections(p1))
            assert p1.read_bytes() == p2.read_bytes()

    def test_per_frame_view(self):
        dets = DetectionSet(
            "v",
            3,
            (Box(2, 0, 0, 1, 1), Box(0, 0, 0, 1, 1), Box(2, 1, 1, 2, 2)),
        )
        per = dets.per_frame()
        assert [len(fr) for fr in per] == [1, 0, 2]


class TestTensorContainer:
    def test_zero_tensor(self, tmp_path):
        path = tmp_path / "t.tensor"
        save_tensor(path, np.zeros((1, 1, 2, 2)), kind="features")
        out = load_tensor(path)
        assert isinstance(out, FeatureTensor)
        assert out.data.shape == (1, 1, 2, 2)
        assert np.all(out.data == 0)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_bit_identical(self, tmp_path, dtype):
        rng = np.random.default_rng(9)
        arr = rng.standard_normal((2, 3, 4, 5)).astype(dtype)
        path = tmp_path / "t.tensor"
        save_tensor(path, arr, kind="features", spatial_scale=(2.0, 4.0))
        out = load_tensor(path)
        assert out.data.dtype == dtype
        assert out.data.tobytes() == arr.tobytes()
        assert out.spatial_scale == (2.0, 4.0)

    def test_frames_kind_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        frames = VideoFrames(data=rng.uniform(0, 1, size=(3, 3, 6, 7)))
        path = tmp_path / "f.tensor"
        save_tensor(path, frames.data, kind="frames")
        out = load_tensor(path)
        assert isinstance(out, VideoFrames)
        assert np.array_equal(out.data, frames.data)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.tensor"
        save_tensor(path, np.zeros((2, 2, 2, 2)), kind="features")
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="length mismatch"):
            load_tensor(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.tensor"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_tensor(path)

    def test_unknown_dtype(self, tmp_path):
        header = json.dumps(
            {"format_version": 1, "dims": [1], "dtype": "i8", "order": "row-major"}
        ).encode()
        path = tmp_path / "t.tensor"
        path.write_bytes(TENSOR_MAGIC + struct.pack("<I", len(header)) + header + b"\x00" * 8)
        with pytest.raises(FormatError, match="dtype"):
            load_tensor(path)

    def test_malformed_header_fuzz_never_crashes(self, tmp_path):
        rng = np.random.default_rng(12)
        path = tmp_path / "t.tensor"
        save_tensor(path, np.zeros((1, 1, 2, 2)), kind="features")
        good = bytearray(path.read_bytes())
        for _ in range(200):
            raw = bytearray(good)
            n_flips = int(rng.integers(1, 6))
            for _ in range(n_flips):
                pos = int(rng.integers(0, len(raw)))
                raw[pos] = int(rng.integers(0, 256))
            path.write_bytes(bytes(raw))
            try:
                load_tensor(path)
            except (FormatError, ValidationError):
                pass  # rejected cleanly


class TestGroundTruth:
    def _gt(self):
        tube = Tube(tuple(Box(f, 0, 0, 5, 5) for f in range(3)))
        return GroundTruth(
            classes={0: "run", 1: "jump"},
            videos={"v0": (GroundTruthInstance(class_id=1, tube=tube),)},
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "gt.json"
        save_ground_truth(path, self._gt())
        gt = load_ground_truth(path)
        assert gt.classes == {0: "run", 1: "jump"}
        assert gt.videos["v0"][0].class_id == 1
        assert len(gt.videos["v0"][0].tube) == 3
        # byte identity of a second save
        path2 = tmp_path / "gt2.json"
        save_ground_truth(path2, gt)
        assert path.read_bytes() == path2.read_bytes()

    def test_unknown_class_rejected(self, tmp_path):
        path = tmp_path / "gt.json"
        doc = {
            "format_version": 1,
            "classes": [{"id": 0, "name": "run"}],
            "videos": [
                {
                    "video_id": "v0",
                    "instances": [
                        {
                            "class_id": 3,
                            "boxes": [{"frame": 0, "x1": 0, "y1": 0, "x2": 1, "y2": 1}],
                        }
                    ],
                }
            ],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="class id 3"):
            load_ground_truth(path)

    def test_frame_gap_rejected(self, tmp_path):
        path = tmp_path / "gt.json"
        doc = {
            "format_version": 1,
            "classes": [{"id": 0, "name": "run"}],
            "videos": [
                {
                    "video_id": "v0",
                    "instances": [
                        {
                            "class_id": 0,
                            "boxes": [
                                {"frame": 0, "x1": 0, "y1": 0, "x2": 1, "y2": 1},
                                {"frame": 2, "x1": 0, "y1": 0, "x2": 1, "y2": 1},
                            ],
                        }
                    ],
                }
            ],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="consecutive"):
            load_ground_truth(path)


class TestManifest:
    def test_resolves_relative_paths(self, tmp_path):
        dets = random_detections(np.random.default_rng(0))
        sub = tmp_path / "data"
        sub.mkdir()
        save_detections(sub / "v.json", dets)
        manifest = Manifest(
            split="test",
            entries=(ManifestEntry(video_id="v", detections=sub / "v.json"),),
        )
        path = tmp_path / "manifest.json"
        save_manifest(path, manifest)
        loaded = load_manifest(path)
        assert loaded.entries[0].detections == sub / "v.json"

    def test_missing_file_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        doc = {
            "format_version": 1,
            "split": "test",
            "entries": [{"video_id": "v", "label": None, "detections": "nope.json"}],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="nope.json"):
            load_manifest(path)

    def test_train_entry_requires_label(self, tmp_path):
        path = tmp_path / "manifest.json"
        doc = {
            "format_version": 1,
            "split": "train",
            "entries": [{"video_id": "v", "label": None}],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="label"):
            load_manifest(path)

    def test_round_trip(self, tmp_path):
        dets = random_detections(np.random.default_rng(0))
        save_detections(tmp_path / "v.json", dets)
        manifest = Manifest(
            split="train",
            entries=(ManifestEntry(video_id="v", label=2, detections=tmp_path / "v.json"),),
        )
        p1 = tmp_path / "m1.json"
        p2 = tmp_path / "m2.json"
        save_manifest(p1, manifest)
        save_manifest(p2, load_manifest(p1))
        assert p1.read_bytes() == p2.read_bytes()


class TestWrapperInvariants:
    def test_frames_require_unit_range(self):
        with pytest.raises(ValidationError):
            VideoFrames(data=np.full((1, 3, 2, 2), 2.0))

    def test_frames_require_known_channel_count(self):
        with pytest.raises(ValidationError):
            VideoFrames(data=np.zeros((1, 4, 2, 2)))

    def test_feature_scale_positive(self):
        with pytest.raises(ValidationError):
            FeatureTensor(data=np.zeros((1, 1, 2, 2)), spatial_scale=(0.0, 1.0))

    def test_loaded_values_immutable(self, tmp_path):
        path = tmp_path / "t.tensor"
        save_tensor(path, np.zeros((1, 1, 2, 2)), kind="features")
        out = load_tensor(path)
        with pytest.raises(ValueError):
            out.data[0, 0, 0, 0] = 1.0
