"""Skeleton graph topology and adjacency construction."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint count, undirected bone list, and the joint used for centering."""

    joint_count: int
    edges: tuple
    center_joint: int

    def __post_init__(self):
        n = self.joint_count
        if n < 1:
            raise DataError(f"joint_count must be positive, got {n}")
        if not 0 <= self.center_joint < n:
            raise DataError(f"center joint {self.center_joint} out of range")
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"edge ({i}, {j}) out of range for {n} joints")
            if i == j:
                raise DataError(f"self-loop ({i}, {j}) not allowed in edge list")


# 25-joint Kinect-v2 skeleton, 24 bones, 0-based; joint 1 is mid-spine.
_NTU_EDGES = (
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13),
    (15, 14), (16, 0), (17, 16), (18, 17), (19, 18), (21, 7), (22, 7),
    (23, 11), (24, 11),
)


def ntu_topology():
    return SkeletonTopology(joint_count=25, edges=_NTU_EDGES, center_joint=1)


def build_adjacency(topology):
    """Symmetric 0/1 adjacency with zero diagonal."""
    n = topology.joint_count
    a = np.zeros((n, n))
    for i, j in topology.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def normalize_adjacency(a):
    """Symmetrically normalized adjacency with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise DataError("adjacency must be symmetric")
    if (a < 0).any():
        raise DataError("adjacency must be nonnegative")
    abar = a + np.eye(a.shape[0])
    dinv = 1.0 / np.sqrt(abar.sum(axis=1))
    return abar * dinv[:, None] * dinv[None, :]
