"""Actor-of-interest pooling, top-k attention classification, exact
reverse-mode gradients, and the SGD trainer.

The pooled representation of proposal p is built by bilinear sampling of the
feature map at an X x Y grid inside each of its boxes with the triangle
kernel k(d) = max(0, 1 - |d|), followed by a temporal average. A linear
classifier scores every proposal per class; the video-level logit of a class
is the mean of its k highest proposal scores, and the backward pass routes
gradient only through that selection mask.

Everything here is plain numpy with hand-written gradients so the whole
chain can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Box, Tube
from .ingest import (
    FORMAT_VERSION,
    _check_version,
    _read_json,
    _require,
    box_from_dict,
    box_to_dict,
    load_array,
    save_tensor,
)


@dataclass(frozen=True)
class AttentionConfig:
    num_classes: int
    grid_x: int = 5
    grid_y: int = 5
    top_k: int = 12
    num_proposals: int = 20
    frames_per_video: int = 16

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if not 1 <= self.top_k <= self.num_proposals:
            raise ValidationError("top_k must satisfy 1 <= k <= num_proposals")
        if min(self.grid_x, self.grid_y, self.frames_per_video) < 1:
            raise ValidationError("grid dims and frames_per_video must be >= 1")


@dataclass(frozen=True)
class ClassifierParams:
    weights: np.ndarray  # (C*X*Y, K)
    bias: np.ndarray  # (K,)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ValidationError(f"inconsistent parameter shapes {w.shape} / {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValidationError("classifier parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


class Velocity(NamedTuple):
    weights: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    initial_lr: float = 0.001
    momentum: float = 0.95
    anneal_factor: float = 0.25
    anneal_every: int = 5
    weight_decay: float = 1e-4
    batch_size: int = 4
    horizontal_flip: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.initial_lr <= 0 or self.momentum < 0:
            raise ValidationError("bad optimizer settings")
        if not 0.0 < self.anneal_factor < 1.0:
            raise ValidationError("anneal_factor must lie in (0, 1)")
        if self.anneal_every < 1 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValidationError("bad schedule settings")


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel standard scaling followed by a clamp of the output range."""

    mean: tuple[float, ...] = (0.485, 0.456, 0.406)
    std: tuple[float, ...] = (0.229, 0.224, 0.225)
    clamp: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.std) or any(s <= 0 for s in self.std):
            raise ValidationError("std must be positive and match mean length")


@dataclass(frozen=True)
class SamplingGrid:
    """Per-frame grid coordinates (in feature-map space) for one proposal.

    ``xs``/``ys`` have shape (N, X, Y); ``degenerate`` flags frames whose
    projected box had zero area (all points collapsed to its center).
    """

    xs: np.ndarray
    ys: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self) -> None:
        if self.xs.shape != self.ys.shape or self.xs.ndim != 3:
            raise ValidationError("grid coordinate arrays must share an (N, X, Y) shape")
        if not (np.isfinite(self.xs).all() and np.isfinite(self.ys).all()):
            raise ValidationError("grid coordinates must be finite")


def grid_for_boxes(
    boxes: Sequence[Box], scale: tuple[float, float], grid_x: int, grid_y: int
) -> SamplingGrid:
    """Uniform cell-center grid inside each box projected by ``scale``."""
    if grid_x < 1 or grid_y < 1:
        raise ValidationError("grid dims must be >= 1")
    sx, sy = scale
    n = len(boxes)
    xs = np.empty((n, grid_x, grid_y))
    ys = np.empty((n, grid_x, grid_y))
    degenerate = np.zeros(n, dtype=bool)
    for i, b in enumerate(boxes):
        px1, px2 = b.x1 * sx, b.x2 * sx
        py1, py2 = b.y1 * sy, b.y2 * sy
        if px2 - px1 <= 0.0 or py2 - py1 <= 0.0:
            degenerate[i] = True
            xs[i] = 0.5 * (px1 + px2)
            ys[i] = 0.5 * (py1 + py2)
            continue
        cx = px1 + (np.arange(grid_x) + 0.5) * (px2 - px1) / grid_x
        cy = py1 + (np.arange(grid_y) + 0.5) * (py2 - py1) / grid_y
        xs[i] = cx[:, None]
        ys[i] = cy[None, :]
    return SamplingGrid(xs=xs, ys=ys, degenerate=degenerate)


def build_grid(t: Tube, scale: tuple[float, float], grid_x: int, grid_y: int) -> SamplingGrid:
    return grid_for_boxes(t.boxes, scale, grid_x, grid_y)


def _kernel_terms(coords: np.ndarray, size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """The at-most-two (index, weight) pairs with nonzero triangle kernel,
    already masked to the valid index range."""
    i0 = np.floor(coords).astype(np.intp)
    frac = coords - i0
    terms = []
    for offset, weight in ((0, 1.0 - frac), (1, frac)):
        idx = i0 + offset
        valid = (idx >= 0) & (idx < size)
        terms.append((np.clip(idx, 0, size - 1), np.where(valid, weight, 0.0)))
    return terms


def actor_of_interest_pool(U: np.ndarray, grids: Sequence[SamplingGrid]) -> np.ndarray:
    """Bilinear sampling of U (N, C, W', H') at each proposal's grids,
    averaged over frames; returns (P, C, X, Y).

    Grid coordinates live in feature-index space: an integer coordinate hits
    one cell exactly, out-of-range coordinates contribute nothing.
    """
    U = np.asarray(U)
    if U.ndim != 4:
        raise ValidationError(f"feature map must be 4-D, got shape {U.shape}")
    n, c, wp, hp = U.shape
    if not grids:
        raise ValidationError("need at least one sampling grid")
    gx, gy = grids[0].xs.shape[1], grids[0].xs.shape[2]
    out = np.empty((len(grids), c, gx, gy), dtype=U.dtype)
    n_idx = np.arange(n)[:, None, None]
    for p, grid in enumerate(grids):
        if grid.xs.shape != (n, gx, gy):
            raise ValidationError(
                f"grid {p} has shape {grid.xs.shape}, expected {(n, gx, gy)}"
            )
        acc = np.zeros((n, c, gx, gy), dtype=np.result_type(U.dtype, np.float64))
        for ix, wx in _kernel_terms(grid.xs, wp):
            for iy, wy in _kernel_terms(grid.ys, hp):
                vals = U[n_idx, :, ix, iy]  # (N, X, Y, C)
                acc += (wx * wy)[:, None, :, :] * np.moveaxis(vals, 3, 1)
        out[p] = acc.mean(axis=0)
    return out


def pool_backward(
    dpooled: np.ndarray, grids: Sequence[SamplingGrid], feature_shape: tuple[int, ...]
) -> np.ndarray:
    """Scatter pooled-feature gradients back onto the feature map."""
    n, c, wp, hp = feature_shape
    dU = np.zeros(feature_shape)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    for p, grid in enumerate(grids):
        g = dpooled[p] / n  # temporal mean routes 1/N to every frame
        for ix, wx in _kernel_terms(grid.xs, wp):
            for iy, wy in _kernel_terms(grid.ys, hp):
                vals = (wx * wy)[:, None, :, :] * g[None, :, :, :]
                ii = ix[:, None, :, :]
                jj = iy[:, None, :, :]
                np.add.at(dU, (nn, cc, ii, jj), vals)
    return dU


def classify(pooled: np.ndarray, params: ClassifierParams) -> np.ndarray:
    """Per-proposal logits: flatten (c, i, j) row-major, then affine map."""
    pooled = np.asarray(pooled)
    flat = pooled.reshape(pooled.shape[0], -1)
    if flat.shape[1] != params.weights.shape[0]:
        raise ValidationError(
            f"pooled feature size {flat.shape[1]} does not match weight rows "
            f"{params.weights.shape[0]}"
        )
    return flat @ params.weights + params.bias


def topk_aggregate(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per class: mean of the k largest proposal scores plus the selection mask.

    Ties at the k-th value go to the lowest proposal index; the selected
    values are summed in ascending proposal-index order so the result does
    not depend on their score order.
    """
    logits = np.asarray(logits)
    p, num_classes = logits.shape
    if k > p:
        raise ValidationError(f"top_k={k} exceeds {p} proposals")
    order = np.argsort(-logits, axis=0, kind="stable")
    sel = np.sort(order[:k], axis=0)  # (k, K), ascending proposal index
    cols = np.arange(num_classes)
    mask = np.zeros((p, num_classes), dtype=bool)
    mask[sel, cols] = True
    acc = np.zeros(num_classes)
    for r in range(k):
        acc += logits[sel[r], cols]
    return acc / k, mask


def softmax_cross_entropy(video_logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Max-subtracted stable softmax; loss is -log p(label)."""
    logits = np.asarray(video_logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValidationError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    probs = exp / total
    loss = float(np.log(total) - shifted[label])
    return loss, probs


class ForwardState(NamedTuple):
    pooled: np.ndarray
    logits: np.ndarray
    video_logits: np.ndarray
    mask: np.ndarray
    probs: np.ndarray
    loss: float


class Gradients(NamedTuple):
    dweights: np.ndarray
    dbias: np.ndarray
    dinput: np.ndarray
    loss: float
    state: ForwardState


def forward(
    U: np.ndarray,
    grids: Sequence[SamplingGrid],
    params: ClassifierParams,
    label: int,
    cfg: AttentionConfig,
) -> ForwardState:
    pooled = actor_of_interest_pool(U, grids)
    logits = classify(pooled, params)
    video_logits, mask = topk_aggregate(logits, cfg.top_k)
    loss, probs = softmax_cross_entropy(video_logits, label)
    return ForwardState(pooled, logits, video_logits, mask, probs, loss)


def backward(
    U: np.ndarray,
    grids: Sequence[SamplingGrid],
    params: ClassifierParams,
    label: int,
    cfg: AttentionConfig,
    weight_decay: float = 0.0,
) -> Gradients:
    """Exact gradients of the classification loss.

    Gradient flows through the top-k selection as a binary mask (1/k on
    selected entries, 0 elsewhere), through the affine classifier, the
    temporal average, and the sampling kernel back to the feature map. Grid
    coordinates are fixed inputs and never differentiated. The weight-decay
    term ``weight_decay * W`` is added to the weight gradient.
    """
    state = forward(U, grids, params, label, cfg)
    dvideo = state.probs.copy()
    dvideo[label] -= 1.0
    dlogits = np.where(state.mask, dvideo[None, :] / cfg.top_k, 0.0)
    flat = state.pooled.reshape(state.pooled.shape[0], -1)
    dweights = flat.T @ dlogits + weight_decay * params.weights
    dbias = dlogits.sum(axis=0)
    dpooled = (dlogits @ params.weights.T).reshape(state.pooled.shape)
    dinput = pool_backward(dpooled, grids, np.asarray(U).shape)
    return Gradients(dweights, dbias, dinput, state.loss, state)


def sgd_step(
    params: ClassifierParams,
    grads: Gradients,
    velocity: Velocity,
    lr: float,
    momentum: float,
) -> tuple[ClassifierParams, Velocity]:
    """Heavy-ball update: v <- momentum*v - lr*g; w <- w + v."""
    vw = momentum * velocity.weights - lr * grads.dweights
    vb = momentum * velocity.bias - lr * grads.dbias
    return (
        ClassifierParams(weights=params.weights + vw, bias=params.bias + vb),
        Velocity(weights=vw, bias=vb),
    )


def init_classifier(rng: np.random.Generator, feature_dim: int, num_classes: int) -> ClassifierParams:
    """Xavier-uniform weights, zero bias."""
    limit = np.sqrt(6.0 / (feature_dim + num_classes))
    weights = rng.uniform(-limit, limit, size=(feature_dim, num_classes))
    return ClassifierParams(weights=weights, bias=np.zeros(num_classes))


def normalize_frames(data: np.ndarray, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Channel-wise standard scaling with the output clamped to spec.clamp.

    ``data`` is (N, C, ...) with C matching the spec's channel count.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim < 2 or data.shape[1] != len(spec.mean):
        raise ValidationError(
            f"expected channel axis of size {len(spec.mean)}, got shape {data.shape}"
        )
    shape = (1, len(spec.mean)) + (1,) * (data.ndim - 2)
    mean = np.asarray(spec.mean).reshape(shape)
    std = np.asarray(spec.std).reshape(shape)
    return np.clip((data - mean) / std, spec.clamp[0], spec.clamp[1])


def rank_proposals(logits: np.ndarray, class_id: int) -> list[tuple[int, float]]:
    """Proposal indices with scores, descending by the class logit; ties keep
    index order."""
    logits = np.asarray(logits)
    if not 0 <= class_id < logits.shape[1]:
        raise ValidationError(f"class id {class_id} out of range")
    order = np.argsort(-logits[:, class_id], kind="stable")
    return [(int(i), float(logits[i, class_id])) for i in order]


# ---------------------------------------------------------------------------
# training pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainVideo:
    """One training example: features, its proposal tubes, the video label."""

    video_id: str
    label: int
    features: np.ndarray  # (N, C, W', H')
    grid_scale: tuple[float, float]
    tubes: tuple[Tube, ...]
    frame_width: float  # pixel width, for mirroring boxes under flips
    normalize: bool = False  # features are pixel frames; apply channel scaling

    def __post_init__(self) -> None:
        if np.asarray(self.features).ndim != 4:
            raise ValidationError("features must be (N, C, W', H')")
        if not self.tubes:
            raise ValidationError(f"video {self.video_id!r} has no proposals")


def pad_proposals(tubes: Sequence[Tube], count: int) -> tuple[Tube, ...]:
    """Deterministically pad (by cycling) or trim a tube list to ``count``."""
    if not tubes:
        raise ValidationError("cannot pad an empty proposal list")
    if len(tubes) >= count:
        return tuple(tubes[:count])
    return tuple(tubes[i % len(tubes)] for i in range(count))


def stratified_frame_indices(num_frames: int, m: int, rng: np.random.Generator) -> list[int]:
    """One uniform-random frame from each of m equal segments; short videos
    sample with repetition."""
    idx = []
    for i in range(m):
        lo = (i * num_frames) // m
        hi = ((i + 1) * num_frames) // m
        if hi <= lo:
            hi = lo + 1
        idx.append(int(rng.integers(lo, min(hi, num_frames))) if lo < num_frames else num_frames - 1)
    return idx


def center_frame_indices(num_frames: int, m: int) -> list[int]:
    """Deterministic segment-center sampling used at evaluation time."""
    return [min(((2 * i + 1) * num_frames) // (2 * m), num_frames - 1) for i in range(m)]


def mirror_box(b: Box, width: float) -> Box:
    return Box(b.frame, width - b.x2, b.y1, width - b.x1, b.y2, b.score)


def _boxes_at(tube: Tube, frame_indices: Sequence[int]) -> list[Box]:
    return [tube.box_at(f) for f in frame_indices]


def _video_grids(
    tubes: Sequence[Tube],
    frame_indices: Sequence[int],
    grid_scale: tuple[float, float],
    cfg: AttentionConfig,
    flip: bool = False,
    frame_width: float = 0.0,
) -> list[SamplingGrid]:
    grids = []
    for tube in tubes:
        boxes = _boxes_at(tube, frame_indices)
        if flip:
            boxes = [mirror_box(b, frame_width) for b in boxes]
        grids.append(grid_for_boxes(boxes, grid_scale, cfg.grid_x, cfg.grid_y))
    return grids


def train(
    videos: Sequence[TrainVideo],
    cfg: AttentionConfig,
    tcfg: TrainConfig,
    seed: int = 0,
    norm: NormalizationSpec = NormalizationSpec(),
) -> tuple[ClassifierParams, list[float]]:
    """SGD over video-level labels only; returns final parameters and the
    per-epoch mean loss history.

    All randomness (init, shuffling, frame sampling, flips) flows from
    ``seed``, so reruns are bit-identical.
    """
    if not videos:
        raise ValidationError("training set is empty")
    channels = {np.asarray(v.features).shape[1] for v in videos}
    if len(channels) != 1:
        raise ValidationError(f"videos disagree on channel count: {sorted(channels)}")
    feature_dim = channels.pop() * cfg.grid_x * cfg.grid_y
    for v in videos:
        if not 0 <= v.label < cfg.num_classes:
            raise ValidationError(f"video {v.video_id!r} has label {v.label} out of range")

    rng = np.random.default_rng(seed)
    params = init_classifier(rng, feature_dim, cfg.num_classes)
    velocity = Velocity(np.zeros_like(params.weights), np.zeros_like(params.bias))
    padded = [pad_proposals(v.tubes, cfg.num_proposals) for v in videos]
    history: list[float] = []

    for epoch in range(tcfg.epochs):
        lr = tcfg.initial_lr * tcfg.anneal_factor ** (epoch // tcfg.anneal_every)
        order = rng.permutation(len(videos))
        losses: list[float] = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start : start + tcfg.batch_size]
            acc_w = np.zeros_like(params.weights)
            acc_b = np.zeros_like(params.bias)
            for vi in batch:
                video = videos[vi]
                n = np.asarray(video.features).shape[0]
                frame_idx = stratified_frame_indices(n, cfg.frames_per_video, rng)
                flip = bool(tcfg.horizontal_flip and rng.random() < 0.5)
                u = np.asarray(video.features, dtype=np.float64)[frame_idx]
                if flip:
                    u = u[:, :, ::-1, :].copy()
                if video.normalize:
                    u = normalize_frames(u, norm)
                grids = _video_grids(
                    padded[vi], frame_idx, video.grid_scale, cfg, flip, video.frame_width
                )
                grads = backward(u, grids, params, video.label, cfg, tcfg.weight_decay)
                acc_w += grads.dweights
                acc_b += grads.dbias
                losses.append(grads.loss)
            mean_grads = Gradients(
                dweights=acc_w / len(batch),
                dbias=acc_b / len(batch),
                dinput=np.empty(0),
                loss=0.0,
                state=None,  # type: ignore[arg-type]
            )
            params, velocity = sgd_step(params, mean_grads, velocity, lr, tcfg.momentum)
        history.append(float(np.mean(losses)))
    return params, history


def score_proposals(
    features: np.ndarray,
    tubes: Sequence[Tube],
    params: ClassifierParams,
    cfg: AttentionConfig,
    grid_scale: tuple[float, float],
    normalize: bool = False,
    norm: NormalizationSpec = NormalizationSpec(),
) -> np.ndarray:
    """Per-tube class logits with deterministic segment-center frame sampling."""
    features = np.asarray(features, dtype=np.float64)
    frame_idx = center_frame_indices(features.shape[0], cfg.frames_per_video)
    u = features[frame_idx]
    if normalize:
        u = normalize_frames(u, norm)
    grids = _video_grids(tubes, frame_idx, grid_scale, cfg)
    pooled = actor_of_interest_pool(u, grids)
    return classify(pooled, params)


def predict_video(
    features: np.ndarray,
    tubes: Sequence[Tube],
    params: ClassifierParams,
    cfg: AttentionConfig,
    grid_scale: tuple[float, float],
    normalize: bool = False,
) -> tuple[int, np.ndarray]:
    """Video-level prediction from padded proposals; returns (label, logits)."""
    logits = score_proposals(
        features, pad_proposals(tubes, cfg.num_proposals), params, cfg, grid_scale, normalize
    )
    video_logits, _ = topk_aggregate(logits, cfg.top_k)
    return int(np.argmax(video_logits)), video_logits


def evaluate_accuracy(videos: Sequence[TrainVideo], params: ClassifierParams, cfg: AttentionConfig) -> float:
    correct = 0
    for v in videos:
        label, _ = predict_video(
            v.features, v.tubes, params, cfg, v.grid_scale, normalize=v.normalize
        )
        correct += int(label == v.label)
    return correct / len(videos)


# ---------------------------------------------------------------------------
# checkpoint and ranking files
# ---------------------------------------------------------------------------


def save_checkpoint(path: Path | str, params: ClassifierParams, cfg: AttentionConfig) -> None:
    """Write <path> (JSON header) plus sibling weight/bias tensor files."""
    path = Path(path)
    weights_path = path.with_suffix(".weights.tensor")
    bias_path = path.with_suffix(".bias.tensor")
    save_tensor(weights_path, params.weights, kind="array")
    save_tensor(bias_path, params.bias, kind="array")
    doc = {
        "format_version": FORMAT_VERSION,
        "attention": {
            "num_classes": cfg.num_classes,
            "grid_x": cfg.grid_x,
            "grid_y": cfg.grid_y,
            "top_k": cfg.top_k,
            "num_proposals": cfg.num_proposals,
            "frames_per_video": cfg.frames_per_video,
        },
        "weights": weights_path.name,
        "bias": bias_path.name,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: Path | str) -> tuple[ClassifierParams, AttentionConfig]:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    acfg = AttentionConfig(**_require(doc, "attention", str(path)))
    weights, _ = load_array(path.parent / _require(doc, "weights", str(path)))
    bias, _ = load_array(path.parent / _require(doc, "bias", str(path)))
    return ClassifierParams(weights=weights, bias=bias), acfg


def save_rankings(
    path: Path | str, video_id: str, num_frames: int, tubes: Sequence[Tube], logits: np.ndarray
) -> None:
    logits = np.asarray(logits)
    if logits.shape[0] != len(tubes):
        raise ValidationError("one logit row per tube required")
    doc = {
        "format_version": FORMAT_VERSION,
        "video_id": video_id,
        "num_frames": num_frames,
        "num_classes": int(logits.shape[1]),
        "tubes": [{"boxes": [box_to_dict(b) for b in t.boxes]} for t in tubes],
        "logits": [[float(v) for v in row] for row in logits],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_rankings(path: Path | str) -> tuple[str, list[Tube], np.ndarray]:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    video_id = str(_require(doc, "video_id", str(path)))
    tubes = []
    for i, entry in enumerate(_require(doc, "tubes", str(path))):
        where = f"{path}: tubes[{i}]"
        boxes = [box_from_dict(b, where) for b in _require(entry, "boxes", where)]
        try:
            tubes.append(Tube(tuple(boxes)))
        except ValidationError as exc:
            raise FormatError(f"{where}: {exc}") from exc
    logits = np.asarray(_require(doc, "logits", str(path)), dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] != len(tubes):
        raise FormatError(f"{path}: logits table must have one row per tube")
    return video_id, tubes, logits
