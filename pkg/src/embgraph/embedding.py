"""Full-network embedding postprocessing: spatial pooling, standardization, ternarization.

Per-image activations from every layer are average-pooled to one value per
channel, concatenated in manifest layer order, standardized per feature across
the whole image set, then discretized to {-1, 0, +1} with a pair of thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensorio
from .errors import (
    LengthMismatchError,
    MissingLayerError,
    SchemaError,
    TooFewImagesError,
)
from .tensorio import ActivationTensor, DatasetManifest, LayerDescriptor


@dataclass(frozen=True)
class FneConfig:
    """Discretization thresholds. Values strictly above/below become +1/-1."""

    threshold_neg: float = -2.0
    threshold_pos: float = 2.0

    def __post_init__(self):
        if not (self.threshold_neg < 0.0 < self.threshold_pos):
            raise ValueError(
                f"thresholds must satisfy neg < 0 < pos, got "
                f"({self.threshold_neg}, {self.threshold_pos})"
            )


@dataclass
class RawEmbeddingMatrix:
    """Pooled (or standardized) embedding: one row per image, one column per feature."""

    values: np.ndarray
    image_ids: list[str]
    feature_index: list[tuple[str, int]]

    @property
    def n_images(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass
class FeatureStats:
    """Per-feature mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class TernaryEmbedding:
    """Discretized embedding over {-1, 0, +1}, stored as int8."""

    values: np.ndarray
    image_ids: list[str]
    feature_index: list[tuple[str, int]]

    @property
    def n_images(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.values))


def spatial_average_pool(tensor: ActivationTensor) -> np.ndarray:
    """Collapse the spatial axes to one mean value per channel.

    For fully-connected layers (1x1 spatial) this is the identity on the
    channel vector. Output is float64.
    """
    return tensor.values.mean(axis=(0, 1), dtype=np.float64)


def assemble_raw(
    pooled: Mapping[str, Mapping[str, np.ndarray]],
    image_ids: Sequence[str],
    layers: Sequence[LayerDescriptor],
) -> RawEmbeddingMatrix:
    """Stack per-image pooled layer vectors into the N x F embedding matrix.

    ``pooled[image_id][layer_id]`` holds that image's pooled vector. Rows follow
    ``image_ids`` order; columns concatenate layers in the given order with
    channels ascending inside each layer.
    """
    n_features = sum(layer.channels for layer in layers)
    values = np.empty((len(image_ids), n_features), dtype=np.float64)
    for i, image_id in enumerate(image_ids):
        per_layer = pooled.get(image_id, {})
        offset = 0
        for layer in layers:
            vec = per_layer.get(layer.layer_id)
            if vec is None:
                raise MissingLayerError(image_id, layer.layer_id)
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (layer.channels,):
                raise LengthMismatchError(
                    f"image {image_id!r}, layer {layer.layer_id!r}: pooled vector "
                    f"has shape {vec.shape}, expected ({layer.channels},)"
                )
            values[i, offset : offset + layer.channels] = vec
            offset += layer.channels
    feature_index = [(layer.layer_id, c) for layer in layers for c in range(layer.channels)]
    return RawEmbeddingMatrix(values=values, image_ids=list(image_ids), feature_index=feature_index)


def standardize(raw: RawEmbeddingMatrix) -> tuple[RawEmbeddingMatrix, FeatureStats]:
    """Z-score each feature across all images (population standard deviation).

    Constant features (std 0) standardize to 0 everywhere. Requires at least
    two images.
    """
    if raw.n_images < 2:
        raise TooFewImagesError(f"standardization needs >= 2 images, got {raw.n_images}")
    mean = raw.values.mean(axis=0)
    std = raw.values.std(axis=0)
    out = np.zeros_like(raw.values)
    active = std > 0.0
    out[:, active] = (raw.values[:, active] - mean[active]) / std[active]
    return (
        RawEmbeddingMatrix(values=out, image_ids=list(raw.image_ids), feature_index=list(raw.feature_index)),
        FeatureStats(mean=mean, std=std),
    )


def discretize(standardized: RawEmbeddingMatrix, config: FneConfig) -> TernaryEmbedding:
    """Map each standardized value to {-1, 0, +1} by strict threshold exceedance.

    Values exactly equal to a threshold map to 0.
    """
    values = standardized.values
    out = np.zeros(values.shape, dtype=np.int8)
    out[values > config.threshold_pos] = 1
    out[values < config.threshold_neg] = -1
    return TernaryEmbedding(
        values=out,
        image_ids=list(standardized.image_ids),
        feature_index=list(standardized.feature_index),
    )


def compute_fne(
    manifest: DatasetManifest, config: FneConfig | None = None
) -> tuple[TernaryEmbedding, FeatureStats]:
    """Run the whole embedding pipeline for a manifest: read, pool, standardize, discretize."""
    config = config or FneConfig()
    pooled: dict[str, dict[str, np.ndarray]] = {}
    for img in manifest.images:
        per_layer = {}
        for layer in manifest.layers:
            tensor = tensorio.read_tensor(manifest.activation_path(img, layer), layer)
            per_layer[layer.layer_id] = spatial_average_pool(tensor)
        pooled[img.image_id] = per_layer
    raw = assemble_raw(pooled, manifest.image_ids, manifest.layers)
    standardized, stats = standardize(raw)
    return discretize(standardized, config), stats


def save_ternary(embedding: TernaryEmbedding, tensor_path: Path | str) -> None:
    """Dump a ternary embedding as a float32 tensor file plus a JSON sidecar.

    The sidecar (same path with ``.json``) records image ids and the
    (layer_id, channel) feature index.
    """
    tensor_path = Path(tensor_path)
    tensorio.write_tensor(tensor_path, embedding.values.astype(np.float32))
    sidecar = {
        "image_ids": embedding.image_ids,
        "feature_index": [[layer_id, channel] for layer_id, channel in embedding.feature_index],
    }
    tensor_path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def load_ternary(tensor_path: Path | str) -> TernaryEmbedding:
    """Read back a ternary embedding dumped by :func:`save_ternary`."""
    tensor_path = Path(tensor_path)
    values = tensorio.read_tensor_file(tensor_path)
    if values.ndim != 2:
        raise SchemaError(f"{tensor_path}: ternary dump must be rank 2, got {values.ndim}")
    if not np.isin(values, (-1.0, 0.0, 1.0)).all():
        raise SchemaError(f"{tensor_path}: ternary dump holds values outside {{-1, 0, 1}}")
    sidecar_path = tensor_path.with_suffix(".json")
    if not sidecar_path.is_file():
        raise SchemaError(f"{tensor_path}: missing sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    image_ids = sidecar["image_ids"]
    feature_index = [(str(l), int(c)) for l, c in sidecar["feature_index"]]
    if values.shape != (len(image_ids), len(feature_index)):
        raise LengthMismatchError(
            f"{tensor_path}: shape {values.shape} disagrees with sidecar "
            f"({len(image_ids)} images, {len(feature_index)} features)"
        )
    return TernaryEmbedding(
        values=values.astype(np.int8), image_ids=image_ids, feature_index=feature_index
    )
