"""Bit-exact reading and writing of activation tensors, weight tensors, and dataset manifests.

Tensor files use a minimal binary layout: 6 magic bytes ``EGT1\\x00\\x00``,
one rank byte (1..4), ``rank`` little-endian uint32 dims, then the payload as
little-endian IEEE-754 float32 in row-major order (last dim fastest).

Manifests are UTF-8 JSON. Each image's ``activation_file`` entry names a
directory (relative to the manifest) holding one ``<layer_id>.egt`` tensor per
manifest layer. ``weight_files`` lists one tensor per consecutive layer pair,
in forward order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    LayerMismatchError,
    LengthMismatchError,
    MissingFileError,
    NonFiniteValueError,
    SchemaError,
    ShapeMismatchError,
)

MAGIC = b"EGT1\x00\x00"
_HEADER_FMT = "<6sB"
MAX_RANK = 4

CONVOLUTIONAL = "convolutional"
FULLY_CONNECTED = "fully_connected"

TENSOR_SUFFIX = ".egt"


@dataclass(frozen=True)
class LayerDescriptor:
    """One layer of the source network, in forward order."""

    layer_id: str
    kind: str
    channels: int
    spatial_height: int = 1
    spatial_width: int = 1

    def __post_init__(self):
        if self.kind not in (CONVOLUTIONAL, FULLY_CONNECTED):
            raise SchemaError(f"layer {self.layer_id!r}: unknown kind {self.kind!r}")
        if self.channels < 1:
            raise SchemaError(f"layer {self.layer_id!r}: channels must be positive")
        if self.spatial_height < 1 or self.spatial_width < 1:
            raise SchemaError(f"layer {self.layer_id!r}: spatial dims must be positive")
        if self.kind == FULLY_CONNECTED and (self.spatial_height, self.spatial_width) != (1, 1):
            raise SchemaError(f"layer {self.layer_id!r}: fully_connected layers are 1x1 spatial")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.spatial_height, self.spatial_width, self.channels)


@dataclass(frozen=True)
class ManifestImage:
    image_id: str
    class_label: str
    activation_file: str


@dataclass
class ActivationTensor:
    """Raw activations of one image at one layer, shape (H, W, C)."""

    layer_id: str
    values: np.ndarray


@dataclass
class LayerWeights:
    """Weights connecting ``from_layer`` to ``to_layer``.

    Shape (C_out, C_in, R_h, R_w) for convolutional targets, (C_out, C_in)
    for fully-connected targets.
    """

    from_layer: str
    to_layer: str
    values: np.ndarray


@dataclass
class DatasetManifest:
    dataset_name: str
    images: list[ManifestImage]
    layers: list[LayerDescriptor]
    weight_files: list[str]
    root: Path = field(default_factory=Path, compare=False)

    @property
    def feature_count(self) -> int:
        return sum(layer.channels for layer in self.layers)

    @property
    def image_ids(self) -> list[str]:
        return [img.image_id for img in self.images]

    @property
    def class_labels(self) -> list[str]:
        return [img.class_label for img in self.images]

    @property
    def n_classes(self) -> int:
        return len(set(self.class_labels))

    def feature_index(self) -> list[tuple[str, int]]:
        """Global feature order: layers in manifest order, channels ascending."""
        return [(layer.layer_id, c) for layer in self.layers for c in range(layer.channels)]

    def activation_path(self, image: ManifestImage, layer: LayerDescriptor) -> Path:
        return self.root / image.activation_file / f"{layer.layer_id}{TENSOR_SUFFIX}"

    def weight_path(self, pair_index: int) -> Path:
        return self.root / self.weight_files[pair_index]


def write_tensor(path: Path | str, values: np.ndarray) -> None:
    """Write an array of rank 1..4 as a little-endian float32 tensor file."""
    values = np.asarray(values)
    if values.ndim < 1 or values.ndim > MAX_RANK:
        raise ShapeMismatchError(f"tensor rank {values.ndim} outside 1..{MAX_RANK}")
    payload = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack(_HEADER_FMT, MAGIC, values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(payload.tobytes())


def _read_header(fh, path) -> tuple[int, ...]:
    head = fh.read(7)
    if len(head) < 7:
        raise SchemaError(f"{path}: truncated header")
    magic, rank = struct.unpack(_HEADER_FMT, head)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    if rank < 1 or rank > MAX_RANK:
        raise SchemaError(f"{path}: bad rank {rank}")
    dims_raw = fh.read(4 * rank)
    if len(dims_raw) < 4 * rank:
        raise SchemaError(f"{path}: truncated dims")
    return struct.unpack(f"<{rank}I", dims_raw)


def peek_tensor_shape(path: Path | str) -> tuple[int, ...]:
    """Read only the header of a tensor file and return its dims."""
    if not Path(path).is_file():
        raise MissingFileError(f"no such tensor file: {path}")
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def read_tensor_file(path: Path | str) -> np.ndarray:
    """Read any tensor file into a float32 array with the header's shape."""
    if not Path(path).is_file():
        raise MissingFileError(f"no such tensor file: {path}")
    with open(path, "rb") as fh:
        dims = _read_header(fh, path)
        payload = fh.read()
    count = int(np.prod(dims, dtype=np.int64))
    if len(payload) != 4 * count:
        raise LengthMismatchError(
            f"{path}: payload is {len(payload)} bytes, header shape {dims} needs {4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims)


def read_tensor(path: Path | str, descriptor: LayerDescriptor) -> ActivationTensor:
    """Read one image's activations for ``descriptor``; shape must match exactly."""
    values = read_tensor_file(path)
    if values.shape != descriptor.shape:
        raise LengthMismatchError(
            f"{path}: shape {values.shape} does not match layer "
            f"{descriptor.layer_id!r} {descriptor.shape}"
        )
    if not np.isfinite(values).all():
        raise NonFiniteValueError(f"{path}: activations contain NaN or infinity")
    return ActivationTensor(layer_id=descriptor.layer_id, values=values)


def read_weights(
    path: Path | str, from_layer: LayerDescriptor, to_layer: LayerDescriptor
) -> LayerWeights:
    """Read the weights connecting two consecutive layers.

    Convolutional targets expect rank 4 (C_out, C_in, R_h, R_w); fully-connected
    targets rank 2 (C_out, C_in).
    """
    if not Path(path).is_file():
        raise MissingFileError(f"no such weight file: {path}")
    with open(path, "rb") as fh:
        dims = _read_header(fh, path)
        payload = fh.read()
    expected_rank = 4 if to_layer.kind == CONVOLUTIONAL else 2
    if len(dims) != expected_rank:
        raise ShapeMismatchError(
            f"{path}: rank {len(dims)}, expected {expected_rank} for "
            f"{to_layer.kind} target {to_layer.layer_id!r}"
        )
    if dims[0] != to_layer.channels or dims[1] != from_layer.channels:
        raise ShapeMismatchError(
            f"{path}: shape {dims} inconsistent with layers "
            f"{from_layer.layer_id!r} (C={from_layer.channels}) -> "
            f"{to_layer.layer_id!r} (C={to_layer.channels})"
        )
    count = int(np.prod(dims, dtype=np.int64))
    if len(payload) != 4 * count:
        raise ShapeMismatchError(
            f"{path}: payload holds {len(payload) // 4} values, header shape {dims} needs {count}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.isfinite(values).all():
        raise NonFiniteValueError(f"{path}: weights contain NaN or infinity")
    return LayerWeights(from_layer=from_layer.layer_id, to_layer=to_layer.layer_id, values=values)


def _require(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, typ):
        raise SchemaError(f"{where}: field {key!r} has type {type(value).__name__}")
    return value


def read_manifest(path: Path | str) -> DatasetManifest:
    """Read and fully validate a dataset manifest.

    Validation covers schema, unique image ids, weight-file pairing, and the
    existence plus header consistency of every referenced tensor file.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")

    name = _require(doc, "dataset_name", str, str(path))
    raw_images = _require(doc, "images", list, str(path))
    raw_layers = _require(doc, "layers", list, str(path))
    raw_weights = _require(doc, "weight_files", list, str(path))

    layers = []
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: layers[{i}] must be an object")
        where = f"{path}: layers[{i}]"
        layers.append(
            LayerDescriptor(
                layer_id=_require(entry, "layer_id", str, where),
                kind=_require(entry, "kind", str, where),
                channels=_require(entry, "channels", int, where),
                spatial_height=_require(entry, "spatial_height", int, where),
                spatial_width=_require(entry, "spatial_width", int, where),
            )
        )
    if not layers:
        raise SchemaError(f"{path}: layers is empty")
    layer_ids = [layer.layer_id for layer in layers]
    if len(set(layer_ids)) != len(layer_ids):
        raise SchemaError(f"{path}: duplicate layer_id")

    images = []
    seen = set()
    for i, entry in enumerate(raw_images):
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: images[{i}] must be an object")
        where = f"{path}: images[{i}]"
        img = ManifestImage(
            image_id=_require(entry, "image_id", str, where),
            class_label=_require(entry, "class_label", str, where),
            activation_file=_require(entry, "activation_file", str, where),
        )
        if img.image_id in seen:
            raise SchemaError(f"{path}: duplicate image_id {img.image_id!r}")
        seen.add(img.image_id)
        images.append(img)
    if not images:
        raise SchemaError(f"{path}: images is empty")

    for i, entry in enumerate(raw_weights):
        if not isinstance(entry, str):
            raise SchemaError(f"{path}: weight_files[{i}] must be a path string")
    if len(raw_weights) != len(layers) - 1:
        raise LayerMismatchError(
            f"{path}: {len(raw_weights)} weight files for {len(layers)} layers "
            f"(need one per consecutive pair, {len(layers) - 1})"
        )

    manifest = DatasetManifest(
        dataset_name=name,
        images=images,
        layers=layers,
        weight_files=list(raw_weights),
        root=path.parent,
    )

    # Cheap structural pass over every referenced file: existence + header.
    for img in images:
        for layer in layers:
            tpath = manifest.activation_path(img, layer)
            if not tpath.is_file():
                raise MissingFileError(f"{path}: missing activation file {tpath}")
            dims = peek_tensor_shape(tpath)
            if tuple(dims) != layer.shape:
                raise LayerMismatchError(
                    f"{tpath}: shape {dims} does not match layer {layer.layer_id!r} {layer.shape}"
                )
    for i in range(len(layers) - 1):
        wpath = manifest.weight_path(i)
        if not wpath.is_file():
            raise MissingFileError(f"{path}: missing weight file {wpath}")
        dims = peek_tensor_shape(wpath)
        expected_rank = 4 if layers[i + 1].kind == CONVOLUTIONAL else 2
        if len(dims) != expected_rank or dims[0] != layers[i + 1].channels or dims[1] != layers[i].channels:
            raise LayerMismatchError(
                f"{wpath}: shape {dims} inconsistent with pair "
                f"{layers[i].layer_id!r} -> {layers[i + 1].layer_id!r}"
            )
    return manifest


def write_manifest(path: Path | str, manifest: DatasetManifest) -> None:
    """Write a manifest as JSON; paths are stored as given (relative to the manifest)."""
    doc = {
        "dataset_name": manifest.dataset_name,
        "images": [
            {
                "image_id": img.image_id,
                "class_label": img.class_label,
                "activation_file": img.activation_file,
            }
            for img in manifest.images
        ],
        "layers": [
            {
                "layer_id": layer.layer_id,
                "kind": layer.kind,
                "channels": layer.channels,
                "spatial_height": layer.spatial_height,
                "spatial_width": layer.spatial_width,
            }
            for layer in manifest.layers
        ],
        "weight_files": list(manifest.weight_files),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_all_weights(manifest: DatasetManifest) -> list[LayerWeights]:
    """Read every consecutive-pair weight tensor in forward order."""
    return [
        read_weights(manifest.weight_path(i), manifest.layers[i], manifest.layers[i + 1])
        for i in range(len(manifest.layers) - 1)
    ]
