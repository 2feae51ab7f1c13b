"""Manifold embedding of image stacks and permutation-matched 2-means accuracy."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components, shortest_path
from sklearn.cluster import KMeans
from sklearn.manifold import TSNE, SpectralEmbedding
from sklearn.neighbors import kneighbors_graph

METHODS = ("ISOMAP", "MDS", "TSNE", "SPECTRAL")


class DisconnectedGraphError(ValueError):
    pass


@dataclass
class EmbeddingSpec:
    method: str = "ISOMAP"
    k_nn: int = 10
    dim: int = 2
    seed: int = 0

    def validate(self, n: int | None = None) -> None:
        if self.method.upper() not in METHODS:
            raise ValueError(f"unknown embedding method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.dim < 1:
            raise ValueError("target dimension must be >= 1")
        if n is not None and self.method.upper() in ("ISOMAP", "SPECTRAL") and self.k_nn >= n:
            raise ValueError(f"k_nn={self.k_nn} must be smaller than the sample count {n}")


def _features(stack) -> np.ndarray:
    px = np.asarray(getattr(stack, "pixels", stack), dtype=np.float64)
    return px.reshape(len(px), -1)


def classical_mds(dist: np.ndarray, dim: int) -> np.ndarray:
    """Torgerson scaling of a distance matrix; eigenvector signs fixed for determinism."""
    n = len(dist)
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (dist**2) @ J
    vals, vecs = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(vals)[::-1][:dim]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    flip = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(vecs.shape[1])])
    flip[flip == 0] = 1.0
    return vecs * flip * np.sqrt(vals)


def geodesic_distances(X: np.ndarray, k_nn: int) -> np.ndarray:
    graph = kneighbors_graph(X, k_nn, mode="distance")
    graph = graph.maximum(graph.T)
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        sizes = np.bincount(labels)
        small = int(sizes.argmin())
        members = np.flatnonzero(labels == small)
        raise DisconnectedGraphError(
            f"k-NN graph has {n_comp} components; smallest is component {small} with "
            f"{sizes[small]} points (indices {members[:10].tolist()}{'...' if len(members) > 10 else ''})"
        )
    return shortest_path(graph, method="D", directed=False)


def embed(stack, spec: EmbeddingSpec = EmbeddingSpec()) -> np.ndarray:
    X = _features(stack)
    spec.validate(len(X))
    method = spec.method.upper()
    if method == "ISOMAP":
        return classical_mds(geodesic_distances(X, spec.k_nn), spec.dim)
    if method == "MDS":
        diff = X[:, None, :] - X[None, :, :]
        return classical_mds(np.sqrt((diff**2).sum(-1)), spec.dim)
    if method == "TSNE":
        perplexity = min(30.0, (len(X) - 1) / 3.0)
        return TSNE(spec.dim, perplexity=perplexity, random_state=spec.seed, init="pca").fit_transform(X)
    return SpectralEmbedding(spec.dim, n_neighbors=spec.k_nn, random_state=spec.seed).fit_transform(X)


def cluster_two(points: np.ndarray, seed: int = 0, restarts: int = 10):
    """Best-inertia 2-means over seeded restarts.

    Returns (labels, best_inertia_history) where the history is the running
    minimum over restarts.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2 or np.allclose(points, points[0]):
        warnings.warn("all points coincide; returning a single cluster")
        return np.zeros(len(points), dtype=int), [0.0]
    best, best_labels, history = np.inf, None, []
    for r in range(restarts):
        km = KMeans(2, n_init=1, random_state=seed * 1000 + r).fit(points)
        if km.inertia_ < best:
            best, best_labels = km.inertia_, km.labels_.copy()
        history.append(best)
    return best_labels, history


def accuracy(labels, truth) -> float:
    """Fraction correct under the better of the two cluster-to-class assignments."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    if labels.shape != truth.shape:
        raise ValueError("labels and truth differ in length")
    classes = np.unique(truth)
    if len(classes) != 2:
        raise ValueError(f"accuracy needs exactly two ground-truth classes, got {len(classes)}")
    t = (truth == classes[1]).astype(int)
    ids = np.unique(labels)
    if len(ids) > 2:
        raise ValueError("expected at most two cluster ids")
    lab = (labels == ids[-1]).astype(int) if len(ids) == 2 else np.zeros_like(t)
    hits = int(np.sum(lab == t))
    return max(hits, len(t) - hits) / len(t)


def write_embedding(path, points: np.ndarray, truth=None, labels=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(points.shape[1])] + ["truth", "cluster"])
        for i, row in enumerate(points):
            w.writerow([repr(float(v)) for v in row]
                       + ["" if truth is None else int(truth[i]), "" if labels is None else int(labels[i])])
