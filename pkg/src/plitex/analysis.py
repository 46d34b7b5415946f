"""Downstream evaluations: clustering, probes, consistency, retrieval.

The clustering protocol is two-step: k-means (k-means++ seeding, Lloyd
refinement) on a subsample, then agglomerative merging of the centroids with
Ward linkage whose dendrogram can be cut into any number of super-clusters.
Linear probes quantify feature quality (one-vs-rest logistic regression for
macro F1; closed-form ridge regression for R^2), cross-section IoU measures
robustness of cluster assignments between neighboring sections, and RBF
affinity maps retrieve voxels similar to a set of query examples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ShapeMismatch


# ---------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, dim)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _squared_distances(samples: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (np.sum(samples ** 2, axis=1)[:, None]
          + np.sum(centroids ** 2, axis=1)[None, :]
          - 2.0 * samples @ centroids.T)
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    centroids = np.empty((k, samples.shape[1]))
    centroids[0] = samples[rng.integers(n)]
    closest = _squared_distances(samples, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i:] = samples[rng.integers(n, size=k - i)]
            break
        probs = closest / total
        centroids[i] = samples[rng.choice(n, p=probs)]
        closest = np.minimum(closest, _squared_distances(samples, centroids[i:i + 1]).ravel())
    return centroids


def kmeans(samples: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-6) -> ClusterModel:
    """Lloyd iterations from k-means++ seeds until centroids move < tol.

    Clusters that empty out are re-seeded from the point farthest from its
    assigned centroid.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ShapeMismatch("samples must be (n, dim)")
    n = samples.shape[0]
    if n < k:
        raise DataError("need at least k samples")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(samples, k, rng)
    for _ in range(max_iter):
        d2 = _squared_distances(samples, centroids)
        labels = np.argmin(d2, axis=1)
        closest = d2[np.arange(n), labels]
        new_centroids = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_centroids[c] = samples[members].mean(axis=0)
            else:
                far = int(np.argmax(closest))
                new_centroids[c] = samples[far]
                closest[far] = 0.0
        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    return ClusterModel(centroids=centroids)


def assign(samples: np.ndarray, model: ClusterModel, chunk: int = 65536) -> np.ndarray:
    """Nearest-centroid labels; ties resolve to the lowest index."""
    samples = np.asarray(samples, dtype=float)
    out = np.empty(samples.shape[0], dtype=int)
    for start in range(0, samples.shape[0], chunk):
        block = samples[start:start + chunk]
        out[start:start + chunk] = np.argmin(_squared_distances(block, model.centroids), axis=1)
    return out


def inertia(samples: np.ndarray, model: ClusterModel) -> float:
    d2 = _squared_distances(np.asarray(samples, dtype=float), model.centroids)
    return float(d2.min(axis=1).sum())


# ---------------------------------------------------------------------------
# Ward agglomeration


@dataclass
class Dendrogram:
    """Merge table over ``n_leaves`` initial clusters.

    Each merge row holds (cluster_a, cluster_b, height, new_size); new
    clusters take ids n_leaves, n_leaves + 1, ... in merge order.
    """

    n_leaves: int
    merges: List[Tuple[int, int, float, int]]

    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def to_text(self) -> str:
        lines = [f"# ward merges over {self.n_leaves} leaves",
                 "# cluster_a cluster_b height new_size"]
        lines += [f"{a} {b} {h:.10g} {s}" for a, b, h, s in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dendrogram":
        n_leaves = None
        merges = []
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("#"):
                if "leaves" in line:
                    n_leaves = int(line.split("over")[1].split("leaves")[0])
                continue
            if line:
                a, b, h, s = line.split()
                merges.append((int(a), int(b), float(h), int(s)))
        if n_leaves is None:
            n_leaves = len(merges) + 1
        return cls(n_leaves=n_leaves, merges=merges)


def ward_agglomerate(centroids: np.ndarray, sizes: Optional[np.ndarray] = None) -> Dendrogram:
    """Lance-Williams Ward linkage over the given cluster centers.

    By default every centroid counts as one point; passing cluster
    populations gives the size-weighted variant.  Merge heights are the Ward
    distances sqrt(2 * n_a n_b / (n_a + n_b)) * ||c_a - c_b|| and are
    non-decreasing.
    """
    centroids = np.asarray(centroids, dtype=float)
    n = centroids.shape[0]
    if n < 2:
        raise DataError("need at least two clusters to merge")
    sizes = np.ones(n) if sizes is None else np.asarray(sizes, dtype=float)
    if sizes.shape != (n,):
        raise ShapeMismatch("sizes must match the centroid count")
    diff = centroids[:, None, :] - centroids[None, :, :]
    d2 = np.sum(diff ** 2, axis=-1)
    size_factor = 2.0 * sizes[:, None] * sizes[None, :] / (sizes[:, None] + sizes[None, :])
    d2 = d2 * size_factor
    active = list(range(n))
    cluster_sizes = {i: float(sizes[i]) for i in range(n)}
    ids = {i: i for i in range(n)}
    merges: List[Tuple[int, int, float, int]] = []
    d2 = d2.copy()
    np.fill_diagonal(d2, np.inf)
    next_id = n
    index = {i: i for i in range(n)}  # active slot -> matrix row
    while len(active) > 1:
        rows = [index[a] for a in active]
        sub = d2[np.ix_(rows, rows)]
        sub[np.tril_indices(len(active))] = np.inf
        ai, bi = np.unravel_index(np.argmin(sub), sub.shape)
        s, t = active[ai], active[bi]
        rs, rt = index[s], index[t]
        hs, ht = cluster_sizes[s], cluster_sizes[t]
        height = float(np.sqrt(max(d2[rs, rt], 0.0)))
        new_size = hs + ht
        # Lance-Williams Ward update on squared distances
        for other in active:
            if other in (s, t):
                continue
            ro = index[other]
            ho = cluster_sizes[other]
            denom = hs + ht + ho
            new_d2 = ((hs + ho) * d2[rs, ro] + (ht + ho) * d2[rt, ro] - ho * d2[rs, rt]) / denom
            d2[rs, ro] = d2[ro, rs] = new_d2
        d2[rt, :] = np.inf
        d2[:, rt] = np.inf
        merges.append((ids[s], ids[t], height, int(round(new_size)) if new_size.is_integer() else new_size))
        cluster_sizes[s] = new_size
        ids[s] = next_id
        next_id += 1
        active.pop(bi)
    return Dendrogram(n_leaves=n, merges=merges)


def cut(dendrogram: Dendrogram, m: int) -> np.ndarray:
    """Map the leaves to ``m`` super-clusters by removing the m-1 highest merges.

    Labels are renumbered 0..m-1 in order of first leaf appearance.
    """
    n = dendrogram.n_leaves
    if not 1 <= m <= n:
        raise DataError("cut size must be within [1, leaves]")
    parent = list(range(n + len(dendrogram.merges)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for idx, (a, b, _, _) in enumerate(dendrogram.merges[:n - m]):
        new = n + idx
        parent[find(a)] = new
        parent[find(b)] = new
    roots = [find(i) for i in range(n)]
    labels = {}
    out = np.empty(n, dtype=int)
    for i, root in enumerate(roots):
        if root not in labels:
            labels[root] = len(labels)
        out[i] = labels[root]
    return out


# ---------------------------------------------------------------------------
# Quality measures


def silhouette(samples: np.ndarray, labels: np.ndarray, subsample: int = 10_000,
               seed: int = 0, chunk: int = 512) -> float:
    """Mean silhouette score on a seeded subsample; singletons score 0."""
    samples = np.asarray(samples, dtype=float)
    labels = np.asarray(labels)
    n = samples.shape[0]
    if n > subsample:
        rng = np.random.default_rng(seed)
        pick = rng.choice(n, size=subsample, replace=False)
        samples, labels = samples[pick], labels[pick]
        n = subsample
    classes, inverse = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DataError("silhouette needs at least two clusters")
    counts = np.bincount(inverse)
    sums = np.zeros((n, classes.size))
    for start in range(0, n, chunk):
        block = samples[start:start + chunk]
        d = np.sqrt(np.maximum(
            np.sum(block ** 2, axis=1)[:, None] + np.sum(samples ** 2, axis=1)[None, :]
            - 2.0 * block @ samples.T, 0.0))
        for c in range(classes.size):
            sums[start:start + chunk, c] = d[:, inverse == c].sum(axis=1)
    own = counts[inverse]
    scores = np.zeros(n)
    valid = own > 1
    a = np.where(valid, sums[np.arange(n), inverse] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(n), inverse] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    scores = np.where(valid & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(scores.mean())


def cross_section_iou(labels: np.ndarray, masks: np.ndarray) -> float:
    """Mean IoU (%) of cluster assignments between adjacent sections.

    For each neighboring pair, assignments are compared on voxels that are
    foreground in both sections at the same in-plane coordinates; per-cluster
    IoU is averaged over the clusters present in either side of that domain,
    then over all pairs.
    """
    labels = np.asarray(labels)
    masks = np.asarray(masks, dtype=bool)
    if labels.shape != masks.shape or labels.ndim != 3:
        raise ShapeMismatch("labels and masks must be (sections, h, w)")
    if labels.shape[0] < 2:
        raise DataError("need at least two sections")
    pair_scores = []
    for s in range(labels.shape[0] - 1):
        domain = masks[s] & masks[s + 1]
        if not domain.any():
            continue
        a = labels[s][domain]
        b = labels[s + 1][domain]
        clusters = np.union1d(np.unique(a), np.unique(b))
        ious = []
        for c in clusters:
            inter = np.count_nonzero((a == c) & (b == c))
            union = np.count_nonzero((a == c) | (b == c))
            if union > 0:
                ious.append(inter / union)
        if ious:
            pair_scores.append(float(np.mean(ious)))
    if not pair_scores:
        raise DataError("no overlapping foreground between any section pair")
    return 100.0 * float(np.mean(pair_scores))


# ---------------------------------------------------------------------------
# Linear probes


@dataclass
class ProbeModel:
    kind: str                    # "classifier" | "regressor"
    weights: np.ndarray          # (classes, dim) or (dim,)
    bias: np.ndarray             # (classes,) or scalar array
    mean: np.ndarray             # feature standardization
    std: np.ndarray
    classes: Optional[np.ndarray] = None
    regularization: float = 0.0


def _zscore_fit(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-12)
    return mean, std


def fit_probe_classifier(features: np.ndarray, labels: np.ndarray, l2: float = 1.0,
                         max_iter: int = 10_000, tol: float = 1e-6) -> ProbeModel:
    """One-vs-rest logistic regression by full-batch gradient descent.

    Features are z-scored on the training set; the fixed step size comes from
    the logistic Lipschitz bound.  Iterations stop when the gradient norm
    falls below ``tol``.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise DataError("need at least two classes")
    mean, std = _zscore_fit(x)
    xs = (x - mean) / std
    n, d = xs.shape
    targets = (y[:, None] == classes[None, :]).astype(float)   # (n, classes)
    w = np.zeros((classes.size, d))
    b = np.zeros(classes.size)
    lipschitz = 0.25 * (np.linalg.norm(xs, 2) ** 2 / n + 1.0) + l2
    step = 1.0 / lipschitz
    for _ in range(max_iter):
        logits = xs @ w.T + b
        prob = 1.0 / (1.0 + np.exp(-logits))
        err = (prob - targets) / n
        grad_w = err.T @ xs + l2 * w
        grad_b = err.sum(axis=0)
        gnorm = np.sqrt(np.sum(grad_w ** 2) + np.sum(grad_b ** 2))
        if gnorm < tol:
            break
        w -= step * grad_w
        b -= step * grad_b
    return ProbeModel(kind="classifier", weights=w, bias=b, mean=mean, std=std,
                      classes=classes, regularization=l2)


def predict_classes(model: ProbeModel, features: np.ndarray) -> np.ndarray:
    xs = (np.asarray(features, dtype=float) - model.mean) / model.std
    logits = xs @ model.weights.T + model.bias
    return model.classes[np.argmax(logits, axis=1)]


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray,
             classes: Optional[np.ndarray] = None) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if classes is None:
        classes = np.unique(np.concatenate([y_true, y_pred]))
    scores = []
    for c in classes:
        tp = np.count_nonzero((y_pred == c) & (y_true == c))
        fp = np.count_nonzero((y_pred == c) & (y_true != c))
        fn = np.count_nonzero((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def evaluate_probe_classifier(model: ProbeModel, features: np.ndarray,
                              labels: np.ndarray) -> float:
    return macro_f1(labels, predict_classes(model, features), classes=model.classes)


def subsample_per_class(labels: np.ndarray, n_per_class: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Indices of a random subset with ``n_per_class`` examples per class."""
    labels = np.asarray(labels)
    picks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < n_per_class:
            raise DataError(f"class {c} has only {idx.size} examples")
        picks.append(rng.choice(idx, size=n_per_class, replace=False))
    return np.sort(np.concatenate(picks))


def repeated_probe_f1(train_features, train_labels, test_features, test_labels,
                      n_per_class: int, repeats: int = 50, seed: int = 0,
                      l2: float = 1.0) -> Tuple[float, float]:
    """Mean macro F1 and standard error over repeated subsampled fits."""
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(repeats):
        idx = subsample_per_class(train_labels, n_per_class, rng)
        model = fit_probe_classifier(train_features[idx], train_labels[idx], l2=l2)
        scores.append(evaluate_probe_classifier(model, test_features, test_labels))
    scores = np.asarray(scores)
    stderr = scores.std(ddof=1) / np.sqrt(repeats) if repeats > 1 else 0.0
    return float(scores.mean()), float(stderr)


def fit_probe_regressor(features: np.ndarray, targets: np.ndarray,
                        l2: float = 1e4) -> ProbeModel:
    """Closed-form ridge regression on z-scored features."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.shape[0] < 2:
        raise DataError("need at least two samples")
    mean, std = _zscore_fit(x)
    xs = (x - mean) / std
    y_mean = y.mean()
    gram = xs.T @ xs + l2 * np.eye(xs.shape[1])
    w = np.linalg.solve(gram, xs.T @ (y - y_mean))
    return ProbeModel(kind="regressor", weights=w, bias=np.array(y_mean),
                      mean=mean, std=std, regularization=l2)


def predict_regression(model: ProbeModel, features: np.ndarray) -> np.ndarray:
    xs = (np.asarray(features, dtype=float) - model.mean) / model.std
    return xs @ model.weights + float(model.bias)


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; 0 by convention for constant targets."""
    y_true = np.asarray(y_true, dtype=float)
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        return 0.0
    ss_res = np.sum((y_true - y_pred) ** 2)
    return float(1.0 - ss_res / ss_tot)


def evaluate_probe_regressor(model: ProbeModel, features: np.ndarray,
                             targets: np.ndarray) -> float:
    return r_squared(targets, predict_regression(model, features))


# ---------------------------------------------------------------------------
# Retrieval


def rbf_affinity(features: np.ndarray, query: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-||x - q||^2 / (2 sigma^2)) along the last feature axis."""
    if sigma <= 0:
        raise DataError("sigma must be positive")
    d2 = np.sum((np.asarray(features, dtype=float) - query) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * sigma ** 2))


def rbf_retrieve(volume: np.ndarray, masks: np.ndarray,
                 query_points: Sequence[Tuple[int, int, int]], sigma: float = 3.5
                 ) -> np.ndarray:
    """Affinity of every voxel to the mean feature of the query points.

    ``volume`` is (sections, h, w, channels); ``query_points`` are
    (section, y, x) voxel coordinates.  Background voxels get affinity 0.
    """
    volume = np.asarray(volume, dtype=float)
    masks = np.asarray(masks, dtype=bool)
    if volume.ndim != 4 or masks.shape != volume.shape[:3]:
        raise ShapeMismatch("volume must be (s, h, w, c) with matching masks")
    if not query_points:
        raise DataError("need at least one query point")
    feats = []
    for s, y, x in query_points:
        if not (0 <= s < volume.shape[0] and 0 <= y < volume.shape[1] and 0 <= x < volume.shape[2]):
            raise DataError(f"query point ({s},{y},{x}) outside the volume")
        feats.append(volume[s, y, x])
    query = np.mean(feats, axis=0)
    affinity = rbf_affinity(volume, query, sigma)
    return np.where(masks, affinity, 0.0)
