"""Human-skeleton graph: topology, normalized adjacency, spatial partitioning."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

COCO_JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# Undirected bone list for the standard 17-keypoint COCO skeleton.
COCO_EDGES = (
    (0, 1), (0, 2), (1, 2), (1, 3), (2, 4),
    (3, 5), (4, 6), (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12), (11, 13), (13, 15), (12, 14), (14, 16),
)

COCO_LEFT_RIGHT_PAIRS = (
    (1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16),
)


class TopologyError(ValueError):
    """Raised for malformed skeleton graphs or adjacency inputs."""


@dataclass(frozen=True)
class SkeletonTopology:
    """An undirected joint graph with left/right pairing and center reference."""

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    left_right_pairs: tuple[tuple[int, int], ...]
    center_joints: frozenset[int]
    joint_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise TopologyError(f"edge ({i},{j}) out of range for {self.num_joints} joints")
            if i == j:
                raise TopologyError(f"self-edge at joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge {key}")
            seen.add(key)
        paired = [j for pair in self.left_right_pairs for j in pair]
        if len(paired) != len(set(paired)):
            raise TopologyError("left/right pairs overlap")
        for left, right in self.left_right_pairs:
            if not (0 <= left < self.num_joints and 0 <= right < self.num_joints):
                raise TopologyError(f"pair ({left},{right}) out of range")
        for c in self.center_joints:
            if not 0 <= c < self.num_joints:
                raise TopologyError(f"center joint {c} out of range")

    def adjacency(self) -> np.ndarray:
        """Binary symmetric adjacency with zero diagonal, shape (N, N)."""
        a = np.zeros((self.num_joints, self.num_joints), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def mirror_index(self) -> np.ndarray:
        """Joint index permutation that swaps each left/right pair."""
        idx = np.arange(self.num_joints)
        for left, right in self.left_right_pairs:
            idx[left], idx[right] = right, left
        return idx

    def is_connected(self) -> bool:
        if self.num_joints == 0:
            return False
        return bool(np.all(np.isfinite(self.hop_distances(frozenset({0})))))

    def hop_distances(self, sources: frozenset[int] | None = None) -> np.ndarray:
        """Minimum hop count from each joint to the nearest source joint (BFS)."""
        sources = self.center_joints if sources is None else sources
        neighbors: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        dist = np.full(self.num_joints, np.inf)
        queue = deque()
        for s in sorted(sources):
            dist[s] = 0.0
            queue.append(s)
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if not np.isfinite(dist[v]):
                    dist[v] = dist[u] + 1.0
                    queue.append(v)
        return dist

    def to_json(self) -> str:
        """Export as a small JSON document for docs and visual inspection."""
        names = list(self.joint_names) if self.joint_names else [
            f"joint_{i}" for i in range(self.num_joints)
        ]
        return json.dumps({"joints": names, "edges": [list(e) for e in self.edges]})


@dataclass(frozen=True)
class AdjacencySet:
    """Normalized full adjacency plus K spatially partitioned operators."""

    full: np.ndarray                  # (N, N) symmetric, normalized A+I
    partitions: tuple[np.ndarray, ...]  # K matrices, each (N, N), normalized masks
    masks: tuple[np.ndarray, ...]       # K binary masks summing to A+I

    @property
    def num_joints(self) -> int:
        return self.full.shape[0]

    @property
    def num_partitions(self) -> int:
        return len(self.partitions)

    def stacked(self, dtype=np.float64) -> np.ndarray:
        """Partition matrices as one (K, N, N) array."""
        return np.stack(self.partitions).astype(dtype)


def build_coco17_topology() -> SkeletonTopology:
    """The fixed 17-joint COCO skeleton with hips as the center reference."""
    return SkeletonTopology(
        num_joints=17,
        edges=COCO_EDGES,
        left_right_pairs=COCO_LEFT_RIGHT_PAIRS,
        center_joints=frozenset({11, 12}),
        joint_names=COCO_JOINT_NAMES,
    )


def _normalize_with_own_degree(mat: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 M D^-1/2 with D the row sums of M.

    Zero-degree rows map to zero rows so the operator stays well defined on
    sparse partition masks.
    """
    deg = mat.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(deg[nonzero])
    return (inv_sqrt[:, None] * mat) * inv_sqrt[None, :]


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops.

    Returns D^-1/2 (A+I) D^-1/2 where D is the diagonal degree matrix of A+I.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise TopologyError("adjacency must be symmetric")
    if not np.isin(a, (0.0, 1.0)).all():
        raise TopologyError("adjacency entries must be 0 or 1")
    return _normalize_with_own_degree(a + np.eye(a.shape[0]))


def spatial_partition(topology: SkeletonTopology) -> AdjacencySet:
    """Split A+I into root/centripetal/centrifugal masks and normalize each.

    Every nonzero entry (i, j) of A+I lands in exactly one mask: root when
    i == j, centripetal when j is strictly closer to the center joints than i,
    centrifugal otherwise (farther or equal hop distance).
    """
    if not topology.center_joints:
        raise TopologyError("spatial partition needs at least one center joint")
    hop = topology.hop_distances()
    if not np.all(np.isfinite(hop)):
        stranded = np.flatnonzero(~np.isfinite(hop)).tolist()
        raise TopologyError(f"graph is disconnected: joints {stranded} unreachable from center")

    n = topology.num_joints
    a_tilde = topology.adjacency() + np.eye(n)
    root = np.eye(n)
    centripetal = np.zeros((n, n))
    centrifugal = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and a_tilde[i, j] != 0.0:
                if hop[j] < hop[i]:
                    centripetal[i, j] = 1.0
                else:
                    centrifugal[i, j] = 1.0

    masks = (root, centripetal, centrifugal)
    partitions = tuple(_normalize_with_own_degree(m) for m in masks)
    return AdjacencySet(
        full=_normalize_with_own_degree(a_tilde),
        partitions=partitions,
        masks=masks,
    )


def single_partition(topology: SkeletonTopology) -> AdjacencySet:
    """Single-operator variant: one mask equal to A+I, normalized as a whole."""
    a_tilde = topology.adjacency() + np.eye(topology.num_joints)
    full = _normalize_with_own_degree(a_tilde)
    return AdjacencySet(full=full, partitions=(full,), masks=(a_tilde,))
