"""Construction of the embedding graph: typed vertices, image-feature and feature-feature edges.

Vertices come in three kinds: one per image, plus a positive and a negative
vertex per feature. Image-feature edges follow the nonzero entries of the
ternary embedding. Feature-feature edges link consecutive-layer feature pairs
whose connecting weight is an outlier (beyond k population standard deviations
of the target neuron's incoming weights); convolutional kernels are first
summed over their receptive field.

Between operations, edges travel as (E, 4) int64 arrays with columns
(kind_u, index_u, kind_v, index_v). The assembled graph stores a compact CSR
adjacency over block-coded vertices; isolated vertices are not part of the
vertex set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .embedding import TernaryEmbedding
from .errors import DegenerateLayerError, EmptyGraphError, LayerMismatchError
from .tensorio import CONVOLUTIONAL, LayerDescriptor, LayerWeights


class VertexKind(IntEnum):
    IMAGE = 0
    FEATURE_POS = 1
    FEATURE_NEG = 2


class VertexId(NamedTuple):
    kind: VertexKind
    index: int


_KIND_TOKEN = {VertexKind.IMAGE: "i", VertexKind.FEATURE_POS: "p", VertexKind.FEATURE_NEG: "n"}
_TOKEN_KIND = {v: k for k, v in _KIND_TOKEN.items()}


@dataclass(frozen=True)
class GraphBuildConfig:
    """k scales how many standard deviations beyond the row mean a weight must lie."""

    k: float = 1.5

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")


def empty_edges() -> np.ndarray:
    return np.empty((0, 4), dtype=np.int64)


def canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Normalize an (E, 4) typed edge array to set semantics.

    Endpoints inside a row are ordered by (kind, index); rows are sorted
    lexicographically and deduplicated.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 4)
    if len(edges) == 0:
        return empty_edges()
    swap = (edges[:, 0] > edges[:, 2]) | (
        (edges[:, 0] == edges[:, 2]) & (edges[:, 1] > edges[:, 3])
    )
    out = edges.copy()
    out[swap] = out[swap][:, [2, 3, 0, 1]]
    return np.unique(out, axis=0)


def build_image_feature_edges(embedding: TernaryEmbedding) -> np.ndarray:
    """One edge per nonzero ternary entry: +1 links the positive feature vertex,
    -1 the negative one. Zeros produce nothing."""
    rows, cols = np.nonzero(embedding.values)
    signs = embedding.values[rows, cols]
    kind = np.where(signs > 0, VertexKind.FEATURE_POS, VertexKind.FEATURE_NEG).astype(np.int64)
    edges = np.column_stack(
        [np.zeros(len(rows), dtype=np.int64), rows.astype(np.int64), kind, cols.astype(np.int64)]
    )
    return canonical_edges(edges)


def reduce_receptive_field(weights: LayerWeights) -> np.ndarray:
    """Collapse convolutional kernels to one scalar per (out, in) channel pair.

    Rank-4 weights are summed over their two receptive-field axes;
    fully-connected (rank-2) weights pass through unchanged. Output is float64
    (C_out, C_in).
    """
    values = weights.values
    if values.ndim == 4:
        return values.sum(axis=(2, 3), dtype=np.float64)
    if values.ndim == 2:
        return values.astype(np.float64)
    raise ValueError(f"weights must be rank 2 or 4, got rank {values.ndim}")


def feature_correlations(reduced: np.ndarray, config: GraphBuildConfig) -> np.ndarray:
    """Find outlier weights per output feature.

    For each row (output feature) of the reduced C_out x C_in matrix, compute
    the mean and population standard deviation of its incoming weights; entries
    strictly above mean + std*k correlate positively, strictly below
    mean - std*k negatively. Returns an (M, 3) int64 array of
    (in_feature, out_feature, sign) with sign in {+1, -1}.
    """
    reduced = np.asarray(reduced, dtype=np.float64)
    if reduced.ndim != 2:
        raise ValueError(f"reduced weights must be a matrix, got rank {reduced.ndim}")
    if reduced.shape[1] < 2:
        raise DegenerateLayerError(
            f"row statistics need >= 2 input channels, got {reduced.shape[1]}"
        )
    mu = reduced.mean(axis=1, keepdims=True)
    sigma = reduced.std(axis=1, keepdims=True)
    pos_out, pos_in = np.nonzero(reduced > mu + sigma * config.k)
    neg_out, neg_in = np.nonzero(reduced < mu - sigma * config.k)
    out_feature = np.concatenate([pos_out, neg_out]).astype(np.int64)
    in_feature = np.concatenate([pos_in, neg_in]).astype(np.int64)
    sign = np.concatenate(
        [np.ones(len(pos_out), dtype=np.int64), -np.ones(len(neg_out), dtype=np.int64)]
    )
    corr = np.column_stack([in_feature, out_feature, sign])
    order = np.lexsort((corr[:, 2], corr[:, 1], corr[:, 0]))
    return corr[order]


def offset_correlations(correlations: np.ndarray, in_offset: int, out_offset: int) -> np.ndarray:
    """Shift layer-local channel indices to global feature indices."""
    corr = np.asarray(correlations, dtype=np.int64).reshape(-1, 3).copy()
    corr[:, 0] += in_offset
    corr[:, 1] += out_offset
    return corr


def build_feature_feature_edges(correlations: np.ndarray) -> np.ndarray:
    """Expand correlations into edges between feature vertices.

    A positive correlation links same-sign vertex pairs (pos-pos and neg-neg);
    a negative correlation links the cross-sign pairs. Every correlation yields
    two edges; duplicates collapse.
    """
    corr = np.asarray(correlations, dtype=np.int64).reshape(-1, 3)
    if len(corr) == 0:
        return empty_edges()
    f_in, f_out, sign = corr[:, 0], corr[:, 1], corr[:, 2]
    pos, neg = VertexKind.FEATURE_POS, VertexKind.FEATURE_NEG
    same = sign > 0
    first = np.column_stack(
        [np.full(len(corr), pos, dtype=np.int64), f_in, np.where(same, pos, neg), f_out]
    )
    second = np.column_stack(
        [np.full(len(corr), neg, dtype=np.int64), f_in, np.where(same, neg, pos), f_out]
    )
    return canonical_edges(np.concatenate([first, second]))


@dataclass
class EmbeddingGraph:
    """Undirected, unweighted embedding graph with CSR adjacency.

    Vertices are block-coded integers: images occupy [0, n_images), positive
    feature vertices [n_images, n_images + n_features), negative ones the block
    after that. Numeric code order therefore equals (kind, index) order. Codes
    with degree 0 exist in the code space but are not graph vertices.
    """

    n_images: int
    n_features: int
    edges: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @property
    def n_codes(self) -> int:
        return self.n_images + 2 * self.n_features

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_vertices(self) -> int:
        return int(np.count_nonzero(self.degrees()))

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, code: int) -> np.ndarray:
        return self.indices[self.indptr[code] : self.indptr[code + 1]]

    def degree(self, code: int) -> int:
        return int(self.indptr[code + 1] - self.indptr[code])

    def vertex_codes(self) -> np.ndarray:
        """Codes of all present (degree >= 1) vertices, in (kind, index) order."""
        return np.flatnonzero(self.degrees())

    def image_codes(self) -> np.ndarray:
        degrees = self.degrees()[: self.n_images]
        return np.flatnonzero(degrees)

    def is_image_code(self, code: int) -> bool:
        return code < self.n_images

    def code(self, vertex: VertexId) -> int:
        kind, index = vertex
        if kind == VertexKind.IMAGE:
            if not 0 <= index < self.n_images:
                raise IndexError(f"image index {index} out of range")
            return index
        if not 0 <= index < self.n_features:
            raise IndexError(f"feature index {index} out of range")
        base = self.n_images if kind == VertexKind.FEATURE_POS else self.n_images + self.n_features
        return base + index

    def decode(self, code: int) -> VertexId:
        if code < self.n_images:
            return VertexId(VertexKind.IMAGE, int(code))
        code -= self.n_images
        if code < self.n_features:
            return VertexId(VertexKind.FEATURE_POS, int(code))
        return VertexId(VertexKind.FEATURE_NEG, int(code - self.n_features))

    def vertices(self) -> Iterator[VertexId]:
        for code in self.vertex_codes():
            yield self.decode(code)

    def typed_edges(self) -> np.ndarray:
        """Edges as a canonical (E, 4) (kind, index, kind, index) array."""
        out = np.empty((len(self.edges), 4), dtype=np.int64)
        for col, src in ((0, self.edges[:, 0]), (2, self.edges[:, 1])):
            kind = np.where(
                src < self.n_images, 0, np.where(src < self.n_images + self.n_features, 1, 2)
            )
            index = src - np.where(
                src < self.n_images,
                0,
                np.where(src < self.n_images + self.n_features, self.n_images, self.n_images + self.n_features),
            )
            out[:, col] = kind
            out[:, col + 1] = index
        return out


def assemble_graph(
    e_if: np.ndarray, e_ff: np.ndarray, n_images: int, n_features: int
) -> EmbeddingGraph:
    """Merge edge sets into the final graph, dropping isolated vertices.

    Validates endpoint ranges and edge typing (no self-loops, no image-image
    edges), canonicalizes to set semantics, and builds a sorted CSR adjacency.
    """
    merged = canonical_edges(
        np.concatenate([np.asarray(e_if, dtype=np.int64).reshape(-1, 4),
                        np.asarray(e_ff, dtype=np.int64).reshape(-1, 4)])
        if len(e_if) or len(e_ff)
        else empty_edges()
    )
    if len(merged) == 0:
        raise EmptyGraphError("no edges; refusing to build an empty graph")

    kinds = merged[:, [0, 2]]
    idxs = merged[:, [1, 3]]
    if kinds.min() < 0 or kinds.max() > 2:
        raise ValueError("edge endpoint kind outside {0, 1, 2}")
    image_mask = kinds == VertexKind.IMAGE
    if np.any(idxs[image_mask] >= n_images) or np.any(idxs < 0):
        raise ValueError("image vertex index out of range")
    if np.any(idxs[~image_mask] >= n_features):
        raise ValueError("feature vertex index out of range")
    if np.any(image_mask[:, 0] & image_mask[:, 1]):
        raise ValueError("image-image edges are not part of the model")
    if np.any((merged[:, 0] == merged[:, 2]) & (merged[:, 1] == merged[:, 3])):
        raise ValueError("self-loops are not part of the model")

    base = np.array([0, n_images, n_images + n_features], dtype=np.int64)
    codes = np.column_stack([base[merged[:, 0]] + merged[:, 1], base[merged[:, 2]] + merged[:, 3]])

    n_codes = n_images + 2 * n_features
    both = np.concatenate([codes, codes[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n_codes)
    indptr = np.zeros(n_codes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return EmbeddingGraph(
        n_images=n_images,
        n_features=n_features,
        edges=codes,
        indptr=indptr,
        indices=np.ascontiguousarray(both[:, 1]),
    )


def layer_offsets(layers: Sequence[LayerDescriptor]) -> list[int]:
    """Starting global feature index of each layer."""
    offsets = [0]
    for layer in layers[:-1]:
        offsets.append(offsets[-1] + layer.channels)
    return offsets


def build_graph(
    embedding: TernaryEmbedding,
    weights: Sequence[LayerWeights],
    layers: Sequence[LayerDescriptor],
    config: GraphBuildConfig | None = None,
) -> EmbeddingGraph:
    """Full graph construction: image-feature edges plus consecutive-layer
    feature-feature edges, with layer-local channels mapped to global indices."""
    config = config or GraphBuildConfig()
    if len(weights) != len(layers) - 1:
        raise LayerMismatchError(
            f"{len(weights)} weight tensors for {len(layers)} layers"
        )
    e_if = build_image_feature_edges(embedding)
    offsets = layer_offsets(layers)
    corr_blocks = []
    for i, w in enumerate(weights):
        reduced = reduce_receptive_field(w)
        if reduced.shape != (layers[i + 1].channels, layers[i].channels):
            raise LayerMismatchError(
                f"weights {w.from_layer!r} -> {w.to_layer!r}: reduced shape {reduced.shape} "
                f"does not match layer channels ({layers[i + 1].channels}, {layers[i].channels})"
            )
        corr = feature_correlations(reduced, config)
        corr_blocks.append(offset_correlations(corr, offsets[i], offsets[i + 1]))
    if corr_blocks:
        e_ff = build_feature_feature_edges(np.concatenate(corr_blocks))
    else:
        e_ff = empty_edges()
    return assemble_graph(e_if, e_ff, embedding.n_images, embedding.n_features)


def format_vertex(vertex: VertexId) -> str:
    return f"{_KIND_TOKEN[VertexKind(vertex.kind)]}:{vertex.index}"


def parse_vertex(token: str) -> VertexId:
    head, _, tail = token.partition(":")
    if head not in _TOKEN_KIND or not tail.isdigit():
        raise ValueError(f"bad vertex token {token!r}")
    return VertexId(_TOKEN_KIND[head], int(tail))


def write_edge_list(graph: EmbeddingGraph, path: Path | str) -> None:
    """Export the graph as text: one `<vertex> <vertex>` line per edge,
    vertices spelled i:/p:/n: plus index, lines sorted lexicographically."""
    typed = graph.typed_edges()
    lines = [
        f"{format_vertex(VertexId(VertexKind(int(k1)), int(i1)))} "
        f"{format_vertex(VertexId(VertexKind(int(k2)), int(i2)))}"
        for k1, i1, k2, i2 in typed
    ]
    lines.sort()
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path: Path | str) -> EmbeddingGraph:
    """Import a graph written by :func:`write_edge_list`.

    Vertex-space sizes are inferred from the largest indices present.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two vertex tokens")
        u, v = parse_vertex(parts[0]), parse_vertex(parts[1])
        rows.append([u.kind, u.index, v.kind, v.index])
    if not rows:
        raise EmptyGraphError(f"{path}: no edges")
    edges = np.asarray(rows, dtype=np.int64)
    image_idx = edges[:, [1, 3]][edges[:, [0, 2]] == VertexKind.IMAGE]
    feature_idx = edges[:, [1, 3]][edges[:, [0, 2]] != VertexKind.IMAGE]
    n_images = int(image_idx.max()) + 1 if len(image_idx) else 0
    n_features = int(feature_idx.max()) + 1 if len(feature_idx) else 0
    return assemble_graph(edges, empty_edges(), n_images, n_features)
