"""Skeleton graphs and the dense matrices derived from them.

Every matrix here is a dense ``float64`` N x N array; skeletons have at most a
few dozen joints so sparse storage buys nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

BUNDLED_SKELETONS = ("h36m17", "h36m16")


class TopologyError(ValueError):
    """Raised for an invalid skeleton description."""


def _components(n: int, edges: Sequence[tuple[int, int]]) -> list[list[int]]:
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp, stack = [], [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in nbrs[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    flip_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(self, "flip_pairs", tuple((int(l), int(r)) for l, r in self.flip_pairs))
        self.validate()

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def validate(self) -> None:
        n = self.num_joints
        if n == 0:
            raise TopologyError("skeleton has no joints")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) has an index outside [0, {n})")
            if i == j:
                raise TopologyError(f"self-loop edge at joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge {key}")
            seen.add(key)
        if not 0 <= self.root < n:
            raise TopologyError(f"root {self.root} outside [0, {n})")
        flipped = [k for pair in self.flip_pairs for k in pair]
        if any(not 0 <= k < n for k in flipped):
            raise TopologyError("flip pair index out of range")
        if len(set(flipped)) != len(flipped):
            raise TopologyError("flip_pairs must mention each joint at most once")
        comps = _components(n, self.edges)
        if len(comps) > 1:
            # report the component that does not hold the root
            stray = next(c for c in comps if self.root not in c)
            names = [self.joint_names[k] for k in stray]
            raise TopologyError(f"skeleton is disconnected; isolated component {names}")

    def flip_permutation(self) -> np.ndarray:
        """Index map that swaps every left/right pair and fixes midline joints."""
        perm = np.arange(self.num_joints)
        for l, r in self.flip_pairs:
            perm[l], perm[r] = r, l
        return perm

    def parents(self) -> np.ndarray:
        """Parent of each joint in the BFS tree rooted at ``root`` (root maps to -1)."""
        parent = np.full(self.num_joints, -2)
        parent[self.root] = -1
        frontier = [self.root]
        adj = build_adjacency(self)
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.flatnonzero(adj[u]):
                    if parent[v] == -2:
                        parent[v] = u
                        nxt.append(int(v))
            frontier = nxt
        return parent

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        try:
            return cls(
                joint_names=d["joints"],
                edges=[tuple(e) for e in d["edges"]],
                root=d.get("root", 0),
                flip_pairs=[tuple(p) for p in d.get("flip_pairs", [])],
            )
        except KeyError as exc:
            raise TopologyError(f"skeleton file missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "joints": list(self.joint_names),
            "edges": [list(e) for e in self.edges],
            "root": self.root,
            "flip_pairs": [list(p) for p in self.flip_pairs],
        }


def load_topology(path_or_name: str | Path) -> SkeletonTopology:
    """Load a skeleton from a JSON file or one of the bundled names."""
    if str(path_or_name) in BUNDLED_SKELETONS:
        text = resources.files("rsnet.assets").joinpath(f"{path_or_name}.json").read_text()
    else:
        text = Path(path_or_name).read_text()
    return SkeletonTopology.from_dict(json.loads(text))


def path_graph(n: int) -> SkeletonTopology:
    return SkeletonTopology([f"j{i}" for i in range(n)], [(i, i + 1) for i in range(n - 1)])


def build_adjacency(topology: SkeletonTopology) -> np.ndarray:
    topology.validate()
    n = topology.num_joints
    A = np.zeros((n, n))
    for i, j in topology.edges:
        A[i, j] = A[j, i] = 1.0
    return A


def normalize_adjacency(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A_hat, L)`` with ``A_hat = D^-1/2 A D^-1/2`` and ``L = I - A_hat``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got {A.shape}")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
        raise ValueError("adjacency must be symmetric")
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError(f"zero-degree node(s) {np.flatnonzero(deg <= 0).tolist()}")
    d = 1.0 / np.sqrt(deg)
    A_hat = d[:, None] * A * d[None, :]
    A_hat = 0.5 * (A_hat + A_hat.T)
    L = np.eye(len(A)) - A_hat
    return A_hat, L


def modulate_adjacency(A_hat: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Add the symmetrized modulation ``(Q + Q^T) / 2`` to ``A_hat``."""
    A_hat = np.asarray(A_hat, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if A_hat.shape != Q.shape:
        raise ValueError(f"shape mismatch: A_hat {A_hat.shape} vs Q {Q.shape}")
    return A_hat + 0.5 * (Q + Q.T)


def hop_powers(A_check: np.ndarray, K: int) -> list[np.ndarray]:
    if K < 1:
        raise ValueError(f"hop count K must be >= 1, got {K}")
    powers = [np.array(A_check, dtype=np.float64)]
    for _ in range(K - 1):
        powers.append(A_check @ powers[-1])
    return powers


def decouple_self_connections(A_k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diag = np.diag(np.diag(A_k))
    return diag, A_k - diag


def init_modulation(n: int, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(n, n))


@dataclass(frozen=True)
class GraphMatrices:
    adjacency: np.ndarray
    degree: np.ndarray
    normalized_adjacency: np.ndarray
    normalized_laplacian: np.ndarray
    modulated_adjacency: np.ndarray
    hop_powers: list = field(default_factory=list)

    @classmethod
    def from_topology(cls, topology: SkeletonTopology, Q: np.ndarray | None = None,
                      K: int = 1) -> "GraphMatrices":
        A = build_adjacency(topology)
        A_hat, L = normalize_adjacency(A)
        if Q is None:
            Q = np.zeros_like(A)
        A_check = modulate_adjacency(A_hat, Q)
        return cls(A, np.diag(A.sum(axis=1)), A_hat, L, A_check, hop_powers(A_check, K))
