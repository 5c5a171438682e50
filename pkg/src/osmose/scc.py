"""Strongly connected components by an iterative (non-recursive) Tarjan search."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _as_csr(graph):
    if sp.issparse(graph):
        g = sp.csr_matrix(graph)
        g.eliminate_zeros()
        return g.shape[0], g.indptr, g.indices
    adjacency = [list(nbrs) for nbrs in graph]
    indptr = np.zeros(len(adjacency) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adjacency])
    indices = np.fromiter((w for a in adjacency for w in a), dtype=np.int64, count=int(indptr[-1]))
    return len(adjacency), indptr, indices


def tarjan_scc(graph):
    """Label the strongly connected components of a directed graph.

    ``graph`` is either a square scipy sparse matrix (edge ``i -> j`` iff
    entry ``(i, j)`` is nonzero) or a sequence of successor lists.  Returns
    ``(count, labels)`` with labels in ``[0, count)``, numbered in the order
    the components are completed.
    """
    n, indptr, indices = _as_csr(graph)
    indptr = indptr.tolist()
    indices = indices.tolist()
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    labels = [-1] * n
    stack = []
    counter = 0
    count = 0

    for root in range(n):
        if index[root] != -1:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        work = [[root, indptr[root]]]
        while work:
            frame = work[-1]
            v, p = frame
            if p < indptr[v + 1]:
                frame[1] = p + 1
                w = indices[p]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append([w, indptr[w]])
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    labels[w] = count
                    if w == v:
                        break
                count += 1
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
    return count, np.asarray(labels, dtype=np.int64)
