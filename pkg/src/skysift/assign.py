"""Gated one-to-one assignment between two point sets.

Globally optimal (minimum total distance) over pairs within the gate.
Large problems are first split into connected components of the gate
graph so the Hungarian solve only runs on small submatrices.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

_FORBIDDEN = 1e12


def gated_assignment(a: np.ndarray, b: np.ndarray, gate: float):
    """Match rows of a to rows of b with pair distance <= gate.

    Returns a list of (i, j, distance) with each index used at most
    once, minimising the summed distance of the matched pairs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        return []
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)

    pairs = cKDTree(a).sparse_distance_matrix(
        cKDTree(b), gate, output_type="coo_matrix")
    if pairs.nnz == 0:
        return []

    # Component split: a-node i is vertex i, b-node j is vertex n_a + j.
    n_a, n_b = len(a), len(b)
    graph = coo_matrix(
        (np.ones(pairs.nnz), (pairs.row, pairs.col + n_a)),
        shape=(n_a + n_b, n_a + n_b))
    n_comp, labels = connected_components(graph, directed=False)

    # 1-1 components (almost all of them, in sparse scenes) need no
    # Hungarian solve; handle them in bulk and only loop over the rest
    a_count = np.bincount(labels[:n_a], minlength=n_comp)
    b_count = np.bincount(labels[n_a:], minlength=n_comp)
    simple = (a_count == 1) & (b_count == 1)
    pair_lab = labels[pairs.row]

    out = []
    easy = simple[pair_lab]
    for i, j, d in zip(pairs.row[easy], pairs.col[easy], pairs.data[easy]):
        out.append((int(i), int(j), float(d)))

    if not easy.all():
        dist_of = {}
        hard = ~easy
        for i, j, d in zip(pairs.row[hard], pairs.col[hard],
                           pairs.data[hard]):
            dist_of[(i, j)] = d
        hard_comps = np.flatnonzero(~simple & (a_count > 0) & (b_count > 0))
        hard_set = set(hard_comps.tolist())
        rows_in = {c: [] for c in hard_set}
        cols_in = {c: [] for c in hard_set}
        for i in np.flatnonzero(np.isin(labels[:n_a], hard_comps)):
            rows_in[labels[i]].append(int(i))
        for j in np.flatnonzero(np.isin(labels[n_a:], hard_comps)):
            cols_in[labels[n_a + j]].append(int(j))
        for comp in hard_comps:
            rows, cols = rows_in[comp], cols_in[comp]
            cost = np.full((len(rows), len(cols)), _FORBIDDEN)
            for ri, i in enumerate(rows):
                for ci, j in enumerate(cols):
                    d = dist_of.get((i, j))
                    if d is not None:
                        cost[ri, ci] = d
            ri, ci = linear_sum_assignment(cost)
            for r, c in zip(ri, ci):
                if cost[r, c] < _FORBIDDEN:
                    out.append((rows[r], cols[c], float(cost[r, c])))
    out.sort()
    return out
