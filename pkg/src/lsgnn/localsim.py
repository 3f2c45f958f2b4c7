"""Per-node local similarity: how much each node resembles its neighbors.

The per-node score is the mean pairwise similarity between a node's raw
features and each neighbor's.  It is the signal the model uses to decide,
node by node, how much to trust smoothed versus sharpened channels.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .graph import SparseGraph

__all__ = [
    "SIM_KINDS",
    "similarity",
    "edge_sim_values",
    "neighborhood_mean",
    "naive_localsim",
]

SIM_KINDS = ("cosine", "euclidean", "neg_sq_scalar")

# Entries processed per chunk when walking the edge set; bounds peak memory
# at roughly chunk * d floats regardless of graph size.
_CHUNK = 262144


def similarity(x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    """Rowwise similarity between aligned (m, d) arrays.

    cosine returns 0 when either row has zero norm, so featureless nodes
    read as "no evidence" rather than propagating NaN.  neg_sq_scalar is
    defined for d = 1 only.
    """
    if x.shape != y.shape or x.ndim != 2:
        raise InputError(f"expected matching (m, d) arrays, got {x.shape} and {y.shape}")
    if kind == "cosine":
        dots = (x * y).sum(axis=1)
        nx = np.sqrt((x * x).sum(axis=1))
        ny = np.sqrt((y * y).sum(axis=1))
        denom = nx * ny
        out = np.zeros(x.shape[0], dtype=np.float64)
        nz = denom > 0.0
        out[nz] = dots[nz] / denom[nz]
        return out
    if kind == "euclidean":
        diff = x - y
        return -np.sqrt((diff * diff).sum(axis=1))
    if kind == "neg_sq_scalar":
        if x.shape[1] != 1:
            raise InputError(
                f"neg_sq_scalar requires 1-dimensional features, got d={x.shape[1]}"
            )
        diff = (x[:, 0] - y[:, 0])
        return -(diff * diff)
    raise InputError(f"similarity kind must be one of {SIM_KINDS}, got {kind!r}")


def edge_sim_values(g: SparseGraph, x: np.ndarray, kind: str) -> np.ndarray:
    """Similarity for every directed adjacency entry, in CSR entry order.

    Processes the edge set in fixed-size chunks so memory stays bounded on
    large graphs; chunking cannot change the result because each entry is
    computed independently.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.num_nodes:
        raise InputError(f"features must be ({g.num_nodes}, d), got shape {x.shape}")
    rows = g.entry_rows()
    cols = g.col_indices
    out = np.empty(g.num_entries, dtype=np.float64)
    for start in range(0, g.num_entries, _CHUNK):
        stop = min(start + _CHUNK, g.num_entries)
        out[start:stop] = similarity(x[rows[start:stop]], x[cols[start:stop]], kind)
    return out


def neighborhood_mean(g: SparseGraph, entry_values: np.ndarray) -> np.ndarray:
    """Mean of per-entry values over each node's neighbors.

    Degree-0 nodes get the convention value 0.
    """
    if entry_values.shape != (g.num_entries,):
        raise InputError(
            f"entry_values must have shape ({g.num_entries},), got {entry_values.shape}"
        )
    sums = np.bincount(g.entry_rows(), weights=entry_values, minlength=g.num_nodes)
    out = np.zeros(g.num_nodes, dtype=np.float64)
    nz = g.degrees > 0
    out[nz] = sums[nz] / g.degrees[nz]
    return out


def naive_localsim(g: SparseGraph, x: np.ndarray, kind: str = "cosine") -> np.ndarray:
    """Per-node mean similarity to neighbors, straight from raw features."""
    return neighborhood_mean(g, edge_sim_values(g, x, kind))
