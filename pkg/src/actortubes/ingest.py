"""File formats and loaders for detections, frames, feature tensors, ground
truth, and dataset manifests.

Detections, ground truth, and manifests are JSON documents with a
``format_version`` field. Numeric tensors (pixel frames and encoder feature
maps) use a small binary container: an 8-byte magic ``ATTENSR\\0``, a
little-endian u32 header length, a UTF-8 JSON header with ``dims``, ``dtype``
(``f32``/``f64``), and ``order`` (always ``row-major``), followed by the raw
little-endian payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Box, Tube

FORMAT_VERSION = 1
TENSOR_MAGIC = b"ATTENSR\0"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


# ---------------------------------------------------------------------------
# domain containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionSet:
    """Per-frame actor detections for one video.

    ``detections`` preserves file/insertion order; that order is the
    deterministic tie-breaker used by the linking stage.
    """

    video_id: str
    num_frames: int
    detections: tuple[Box, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.num_frames < 1:
            raise ValidationError("num_frames must be positive")
        for b in self.detections:
            if b.frame >= self.num_frames:
                raise ValidationError(
                    f"detection at frame {b.frame} out of range for {self.num_frames} frames"
                )

    def per_frame(self) -> list[list[Box]]:
        frames: list[list[Box]] = [[] for _ in range(self.num_frames)]
        for b in self.detections:
            frames[b.frame].append(b)
        return frames

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class VideoFrames:
    """Raw pixel frames as an (N, C, H, W) array with samples in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ValidationError(f"frames must be 4-D (N,C,H,W), got shape {data.shape}")
        n, c, _, _ = data.shape
        if n < 1:
            raise ValidationError("need at least one frame")
        if c not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {c}")
        if data.size and (float(data.min()) < 0.0 or float(data.max()) > 1.0):
            raise ValidationError("frame samples must lie in [0, 1]")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class FeatureTensor:
    """Encoder output of shape (N, C, W', H').

    ``spatial_scale`` is the pixel-per-cell factor (W/W', H/H'); dividing a
    pixel coordinate by it yields the matching feature-map coordinate.
    """

    data: np.ndarray
    spatial_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ValidationError(f"features must be 4-D (N,C,W',H'), got shape {data.shape}")
        sx, sy = self.spatial_scale
        if sx <= 0 or sy <= 0:
            raise ValidationError("spatial_scale components must be positive")
        object.__setattr__(self, "spatial_scale", (float(sx), float(sy)))
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def grid_scale(self) -> tuple[float, float]:
        """Multiplicative pixel-to-feature factor used to project boxes."""
        return (1.0 / self.spatial_scale[0], 1.0 / self.spatial_scale[1])


@dataclass(frozen=True)
class GroundTruthInstance:
    class_id: int
    tube: Tube


@dataclass(frozen=True)
class GroundTruth:
    """Class catalogue plus annotated tubes keyed by video id."""

    classes: dict[int, str]
    videos: dict[str, tuple[GroundTruthInstance, ...]]

    def __post_init__(self) -> None:
        for vid, instances in self.videos.items():
            for inst in instances:
                if inst.class_id not in self.classes:
                    raise ValidationError(
                        f"video {vid!r} references unknown class id {inst.class_id}"
                    )

    def class_name(self, class_id: int) -> str:
        return self.classes[class_id]

    def tubes_for(self, video_id: str, class_id: int | None = None) -> list[Tube]:
        out = []
        for inst in self.videos.get(video_id, ()):
            if class_id is None or inst.class_id == class_id:
                out.append(inst.tube)
        return out


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    label: int | None = None
    detections: Path | None = None
    frames: Path | None = None
    features: Path | None = None
    ground_truth: Path | None = None


@dataclass(frozen=True)
class Manifest:
    split: str
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.split == "train":
            for e in self.entries:
                if e.label is None:
                    raise ValidationError(f"train entry {e.video_id!r} is missing its label")


# ---------------------------------------------------------------------------
# shared JSON plumbing
# ---------------------------------------------------------------------------


def _read_json(path: Path | str) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top-level value must be an object")
    return doc


def _write_json(path: Path | str, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise FormatError(f"{where}: missing required field {key!r}")
    return doc[key]


def _check_version(doc: dict, where: str) -> None:
    version = _require(doc, "format_version", where)
    if version != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported format_version {version!r}")


def box_to_dict(b: Box, with_score: bool = True) -> dict:
    d = {"frame": b.frame, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}
    if with_score:
        d["score"] = b.score
    return d


def box_from_dict(d: dict, where: str) -> Box:
    try:
        return Box(
            frame=_require(d, "frame", where),
            x1=_require(d, "x1", where),
            y1=_require(d, "y1", where),
            x2=_require(d, "x2", where),
            y2=_require(d, "y2", where),
            score=d.get("score", 1.0),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------


def load_detections(path: Path | str) -> DetectionSet:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    boxes = _require(doc, "boxes", str(path))
    dets = [box_from_dict(b, f"{path}: boxes[{i}]") for i, b in enumerate(boxes)]
    try:
        return DetectionSet(
            video_id=str(_require(doc, "video_id", str(path))),
            num_frames=int(_require(doc, "num_frames", str(path))),
            detections=tuple(dets),
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_detections(path: Path | str, dets: DetectionSet) -> None:
    _write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "video_id": dets.video_id,
            "num_frames": dets.num_frames,
            "boxes": [box_to_dict(b) for b in dets.detections],
        },
    )


# ---------------------------------------------------------------------------
# binary tensor container
# ---------------------------------------------------------------------------


def save_tensor(
    path: Path | str,
    array: np.ndarray,
    kind: str = "features",
    spatial_scale: tuple[float, float] | None = None,
) -> None:
    """Write an array in the ``.tensor`` container.

    ``kind`` is ``features`` or ``frames`` (deciding which wrapper type
    :func:`load_tensor` reconstructs) or ``array`` for bare numeric payloads
    such as model parameters.
    """
    array = np.asarray(array)
    if array.dtype == np.float32:
        dtype = "f32"
    elif array.dtype == np.float64:
        dtype = "f64"
    else:
        raise ValidationError(f"tensor dtype must be float32 or float64, got {array.dtype}")
    if kind not in ("features", "frames", "array"):
        raise ValidationError(f"unknown tensor kind {kind!r}")
    header: dict = {
        "format_version": FORMAT_VERSION,
        "dims": [int(d) for d in array.shape],
        "dtype": dtype,
        "order": "row-major",
        "kind": kind,
    }
    if spatial_scale is not None:
        header["spatial_scale"] = [float(spatial_scale[0]), float(spatial_scale[1])]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_array(path: Path | str) -> tuple[np.ndarray, dict]:
    """Low-level tensor read: the raw array plus its parsed header."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(TENSOR_MAGIC) + 4 or raw[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    (header_len,) = struct.unpack_from("<I", raw, len(TENSOR_MAGIC))
    header_start = len(TENSOR_MAGIC) + 4
    header_end = header_start + header_len
    if header_end > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed tensor header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: tensor header must be an object")
    _check_version(header, str(path))
    dims = _require(header, "dims", str(path))
    dtype_name = _require(header, "dtype", str(path))
    if dtype_name not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype {dtype_name!r}")
    if header.get("order", "row-major") != "row-major":
        raise FormatError(f"{path}: unsupported element order {header.get('order')!r}")
    dtype = _DTYPES[dtype_name]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length mismatch: expected {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims), header


def load_tensor(path: Path | str) -> FeatureTensor | VideoFrames:
    path = Path(path)
    array, header = load_array(path)
    kind = header.get("kind", "features")
    try:
        if kind == "frames":
            return VideoFrames(data=array)
        if kind == "features":
            scale = header.get("spatial_scale", [1.0, 1.0])
            return FeatureTensor(data=array, spatial_scale=(scale[0], scale[1]))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    raise FormatError(f"{path}: tensor kind {kind!r} is not loadable as frames or features")


def save_frames(path: Path | str, frames: VideoFrames) -> None:
    save_tensor(path, frames.data, kind="frames")


def save_features(path: Path | str, features: FeatureTensor) -> None:
    save_tensor(path, features.data, kind="features", spatial_scale=features.spatial_scale)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def load_ground_truth(path: Path | str) -> GroundTruth:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    classes: dict[int, str] = {}
    for entry in _require(doc, "classes", str(path)):
        classes[int(_require(entry, "id", str(path)))] = str(_require(entry, "name", str(path)))
    videos: dict[str, tuple[GroundTruthInstance, ...]] = {}
    for ventry in _require(doc, "videos", str(path)):
        vid = str(_require(ventry, "video_id", str(path)))
        instances = []
        for i, inst in enumerate(_require(ventry, "instances", str(path))):
            where = f"{path}: video {vid!r} instance {i}"
            class_id = int(_require(inst, "class_id", where))
            if class_id not in classes:
                raise ValidationError(f"{where}: unknown class id {class_id}")
            boxes = [box_from_dict(b, where) for b in _require(inst, "boxes", where)]
            try:
                tube = Tube(tuple(boxes))
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from exc
            instances.append(GroundTruthInstance(class_id=class_id, tube=tube))
        videos[vid] = tuple(instances)
    return GroundTruth(classes=classes, videos=videos)


def save_ground_truth(path: Path | str, gt: GroundTruth) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "classes": [{"id": cid, "name": name} for cid, name in sorted(gt.classes.items())],
        "videos": [
            {
                "video_id": vid,
                "instances": [
                    {
                        "class_id": inst.class_id,
                        "boxes": [box_to_dict(b) for b in inst.tube.boxes],
                    }
                    for inst in instances
                ],
            }
            for vid, instances in sorted(gt.videos.items())
        ],
    }
    _write_json(path, doc)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

_PATH_FIELDS = ("detections", "frames", "features", "ground_truth")


def load_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    split = str(_require(doc, "split", str(path)))
    base = path.parent
    entries = []
    for i, entry in enumerate(_require(doc, "entries", str(path))):
        where = f"{path}: entries[{i}]"
        vid = str(_require(entry, "video_id", where))
        label = entry.get("label")
        resolved: dict[str, Path | None] = {}
        for key in _PATH_FIELDS:
            value = entry.get(key)
            if value is None:
                resolved[key] = None
                continue
            candidate = Path(value)
            if not candidate.is_absolute():
                candidate = base / candidate
            if not candidate.exists():
                raise ValidationError(f"{where}: referenced file does not exist: {candidate}")
            resolved[key] = candidate
        entries.append(
            ManifestEntry(
                video_id=vid,
                label=None if label is None else int(label),
                **resolved,
            )
        )
    try:
        return Manifest(split=split, entries=tuple(entries))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_manifest(path: Path | str, manifest: Manifest) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path | None) -> str | None:
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "format_version": FORMAT_VERSION,
        "split": manifest.split,
        "entries": [
            {
                "video_id": e.video_id,
                "label": e.label,
                "detections": rel(e.detections),
                "frames": rel(e.frames),
                "features": rel(e.features),
                "ground_truth": rel(e.ground_truth),
            }
            for e in manifest.entries
        ],
    }
    _write_json(path, doc)
