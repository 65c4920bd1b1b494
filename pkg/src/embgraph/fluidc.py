"""Constrained Fluid Communities propagation over the embedding graph.

Standard fluid-communities updating (community density = 1/size, vertices
adopt the community maximizing summed density over their closed neighborhood,
asynchronous updates in a random vertex order) with two constraints: the
initial communities are seeded on image vertices, and a move is vetoed if it
would leave a community empty or without any image vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TooManyCommunitiesError
from .graphbuild import EmbeddingGraph

UNASSIGNED = -1


@dataclass(frozen=True)
class FluidConfig:
    n_communities: int
    seed: int = 0
    max_sweeps: int = 100

    def __post_init__(self):
        if self.n_communities < 1:
            raise ValueError(f"n_communities must be >= 1, got {self.n_communities}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class CommunityState:
    """Mutable propagation state: per-code assignment plus community bookkeeping."""

    assignment: np.ndarray
    size: np.ndarray
    image_count: np.ndarray
    density: np.ndarray

    @property
    def n_communities(self) -> int:
        return len(self.size)

    def check_invariants(self, graph: EmbeddingGraph) -> None:
        """Raise AssertionError if any always-true propagation invariant is broken."""
        assert (self.size >= 1).all(), "empty community"
        assert (self.image_count >= 1).all(), "community without an image vertex"
        assert np.allclose(self.density * self.size, 1.0), "density is not 1/size"
        assigned = self.assignment >= 0
        sizes = np.bincount(self.assignment[assigned], minlength=self.n_communities)
        assert (sizes == self.size).all(), "size bookkeeping out of sync"
        image_assigned = self.assignment[: graph.n_images]
        img = np.bincount(
            image_assigned[image_assigned >= 0], minlength=self.n_communities
        )
        assert (img == self.image_count).all(), "image-count bookkeeping out of sync"


@dataclass
class CommunityAssignment:
    """Final result: per-code community (UNASSIGNED for unreached vertices) and
    the image-only projection used for scoring.

    Image vertices never reached by propagation appear in the projection with
    fresh singleton labels (>= n_communities), so each counts as its own
    cluster.
    """

    assignment: np.ndarray
    image_projection: dict
    n_communities: int
    seed: int
    sweeps: int
    converged: bool
    graph: EmbeddingGraph = field(repr=False)

    def community_of(self, code: int) -> Optional[int]:
        community = int(self.assignment[code])
        return None if community == UNASSIGNED else community


def init_communities(
    graph: EmbeddingGraph, config: FluidConfig, rng: np.random.Generator | None = None
) -> CommunityState:
    """Seed each community on a distinct, uniformly chosen image vertex."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    image_codes = graph.image_codes()
    if config.n_communities > len(image_codes):
        raise TooManyCommunitiesError(
            f"{config.n_communities} communities requested but the graph holds "
            f"{len(image_codes)} image vertices"
        )
    seeds = rng.choice(image_codes, size=config.n_communities, replace=False)
    assignment = np.full(graph.n_codes, UNASSIGNED, dtype=np.int32)
    assignment[seeds] = np.arange(config.n_communities, dtype=np.int32)
    ones = np.ones(config.n_communities, dtype=np.int64)
    return CommunityState(
        assignment=assignment,
        size=ones.copy(),
        image_count=ones.copy(),
        density=np.ones(config.n_communities, dtype=np.float64),
    )


def sweep(
    graph: EmbeddingGraph, state: CommunityState, rng: np.random.Generator
) -> tuple[CommunityState, bool]:
    """One asynchronous pass over all vertices in a seeded random order.

    Returns the (mutated in place) state and whether any vertex changed
    community. Moves that would empty a community or strip its last image
    vertex are vetoed; unassigned vertices with no assigned neighbor stay
    unassigned.
    """
    assignment = state.assignment
    size, image_count, density = state.size, state.image_count, state.density
    n_communities = state.n_communities
    order = rng.permutation(graph.vertex_codes())
    changed = False
    for code in order:
        current = assignment[code]
        neighbor_comms = assignment[graph.neighbors(code)]
        counts = np.bincount(
            neighbor_comms[neighbor_comms >= 0], minlength=n_communities
        )
        if current >= 0:
            counts[current] += 1
        elif not counts.any():
            continue
        scores = counts * density
        best = scores.max()
        candidates = np.flatnonzero((scores == best) & (counts > 0))
        if current >= 0 and current in candidates:
            continue
        target = int(candidates[0]) if len(candidates) == 1 else int(rng.choice(candidates))
        is_image = graph.is_image_code(code)
        if current >= 0:
            if size[current] == 1:
                continue
            if is_image and image_count[current] == 1:
                continue
            size[current] -= 1
            density[current] = 1.0 / size[current]
            if is_image:
                image_count[current] -= 1
        assignment[code] = target
        size[target] += 1
        density[target] = 1.0 / size[target]
        if is_image:
            image_count[target] += 1
        changed = True
    return state, changed


def run(
    graph: EmbeddingGraph,
    config: FluidConfig,
    image_ids: Sequence[str] | None = None,
) -> CommunityAssignment:
    """Propagate until a full sweep changes nothing or max_sweeps is reached.

    The result is a deterministic function of (graph, config). When
    ``image_ids`` is given, the image projection is keyed by those ids;
    otherwise by image vertex index.
    """
    rng = np.random.default_rng(config.seed)
    state = init_communities(graph, config, rng)
    sweeps = 0
    converged = False
    while sweeps < config.max_sweeps:
        _, changed = sweep(graph, state, rng)
        sweeps += 1
        if not changed:
            converged = True
            break

    image_projection = {}
    next_singleton = config.n_communities
    for code in graph.image_codes():
        key = image_ids[code] if image_ids is not None else int(code)
        community = int(state.assignment[code])
        if community == UNASSIGNED:
            community = next_singleton
            next_singleton += 1
        image_projection[key] = community
    return CommunityAssignment(
        assignment=state.assignment,
        image_projection=image_projection,
        n_communities=config.n_communities,
        seed=config.seed,
        sweeps=sweeps,
        converged=converged,
        graph=graph,
    )
