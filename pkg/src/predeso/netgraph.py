"""Directed leader-follower topology and its Laplacian partition.

Node 0 is the leader; followers are 1..N. ``adj[i-1, j-1] = 1`` means
follower i receives from follower j, ``leader_links[i-1] = 1`` means
follower i receives from the leader.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ConfigError


@dataclass(frozen=True)
class Topology:
    adj: np.ndarray
    leader_links: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adj, dtype=float)
        a0 = np.array(self.leader_links, dtype=float).ravel()
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigError(f"adjacency must be square, got {adj.shape}")
        if a0.size != adj.shape[0]:
            raise ConfigError("leader_links length must equal follower count")
        if not (np.isin(adj, (0.0, 1.0)).all() and np.isin(a0, (0.0, 1.0)).all()):
            raise ConfigError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj) != 0):
            raise ConfigError("self-loops are not allowed")
        adj.setflags(write=False)
        a0.setflags(write=False)
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "leader_links", a0)

    @property
    def followers(self):
        return self.adj.shape[0]

    @classmethod
    def from_edges(cls, followers, edges, leader_links):
        """Build from ``[[j, i], ...]`` pairs meaning i receives from j.

        ``j = 0`` denotes the leader and is folded into ``leader_links``.
        """
        N = int(followers)
        if N < 1:
            raise ConfigError("need at least one follower")
        adj = np.zeros((N, N))
        a0 = np.zeros(N)
        for i in leader_links:
            if not 1 <= int(i) <= N:
                raise ConfigError(f"leader link to unknown follower {i}")
            a0[int(i) - 1] = 1.0
        for pair in edges:
            if len(pair) != 2:
                raise ConfigError(f"edge must be [from, to], got {pair}")
            j, i = (int(v) for v in pair)
            if not 1 <= i <= N or not 0 <= j <= N:
                raise ConfigError(f"edge {pair} references an unknown node")
            if j == i:
                raise ConfigError(f"self-loop at {i}")
            if j == 0:
                a0[i - 1] = 1.0
            else:
                adj[i - 1, j - 1] = 1.0
        return cls(adj, a0)

    def to_json(self):
        N = self.followers
        edges = [[j + 1, i + 1] for i in range(N) for j in range(N) if self.adj[i, j]]
        return {
            "followers": N,
            "edges": edges,
            "leader_links": [i + 1 for i in range(N) if self.leader_links[i]],
        }

    @classmethod
    def from_json(cls, doc):
        try:
            return cls.from_edges(doc["followers"], doc.get("edges", []),
                                  doc.get("leader_links", []))
        except KeyError as exc:
            raise ConfigError(f"topology is missing field {exc}") from exc


def default_topology():
    """Four followers: 0->1, 0->2, 1->3, 2->4, 3->2."""
    return Topology.from_edges(4, [[1, 3], [2, 4], [3, 2]], [1, 2])


@dataclass(frozen=True)
class LaplacianParts:
    L: np.ndarray
    L1: np.ndarray
    L2: np.ndarray


def build_laplacian(topo):
    """Laplacian of the leader+follower graph, leader first."""
    N = topo.followers
    L1 = -topo.adj.copy()
    L1[np.diag_indices(N)] = topo.adj.sum(axis=1) + topo.leader_links
    L2 = -topo.leader_links.reshape(N, 1)
    L = np.zeros((N + 1, N + 1))
    L[1:, 0:1] = L2
    L[1:, 1:] = L1
    return LaplacianParts(L=L, L1=L1, L2=L2)


def has_spanning_tree(topo):
    """True iff every follower is reachable from the leader."""
    N = topo.followers
    seen = np.zeros(N, dtype=bool)
    queue = deque(int(i) for i in np.flatnonzero(topo.leader_links))
    seen[list(queue)] = True
    while queue:
        j = queue.popleft()
        # followers i that receive from j
        for i in np.flatnonzero(topo.adj[:, j]):
            if not seen[i]:
                seen[i] = True
                queue.append(int(i))
    return bool(seen.all())


@dataclass(frozen=True)
class GainWeights:
    g: np.ndarray
    lambda0: float

    @property
    def G(self):
        return np.diag(self.g)


def compute_weights(L1):
    """Positive diagonal weights ``g = (L1^T)^-1 1`` and ``lambda0``.

    ``lambda0`` is the smallest eigenvalue of ``G L1 + L1^T G``.
    """
    L1 = np.asarray(L1, dtype=float)
    N = L1.shape[0]
    offdiag = L1 - np.diag(np.diag(L1))
    if np.any(offdiag > 0):
        raise AssumptionError("L1 has positive off-diagonal entries (not an M-matrix)")
    if np.linalg.eigvals(L1).real.min() <= 1e-12:
        raise AssumptionError("L1 is not a nonsingular M-matrix")
    try:
        g = np.linalg.solve(L1.T, np.ones(N))
    except np.linalg.LinAlgError as exc:
        raise AssumptionError("L1 is singular") from exc
    if np.any(g <= 0):
        raise AssumptionError(f"weight vector is not positive: {g}")
    G = np.diag(g)
    M = G @ L1 + L1.T @ G
    lam0 = float(np.linalg.eigvalsh(M).min())
    if lam0 <= 0:
        raise AssumptionError(f"G L1 + L1^T G is not positive definite (lambda0={lam0:.3e})")
    return GainWeights(g=g, lambda0=lam0)


def sigma_min(L1):
    """Smallest singular value; stands in for lambda_min of a non-symmetric L1."""
    return float(np.linalg.svd(np.asarray(L1, dtype=float), compute_uv=False).min())
