"""2-D model overviews: interpretable axes, classical MDS over a distance
matrix, and out-of-sample insertion of new models into a fitted layout.

Classical (Torgerson) MDS: square the distances, double-center, take the
top-2 nonnegative eigenpairs, scale eigenvectors by sqrt(eigenvalue). Axes
are sign-flipped so the largest-magnitude coordinate on each axis is
positive, which makes repeated fits bit-identical. Negative eigenvalues
(possible for non-Euclidean inputs) clamp that axis to zero.

Out-of-sample insertion minimizes raw stress sum_i (||y - x_i|| - delta_i)^2
against the frozen base coordinates with damped Gauss-Newton from the
delta^-2-weighted centroid (plus four nudged restarts to escape symmetric
saddles); ties resolve toward positive y, then positive x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distances import DistanceMatrix

PROJECTIONS = ("interpretable", "structural", "prediction")

GRAD_TOL = 1e-10
MAX_ITERS = 500


class EmbeddingError(ValueError):
    pass


class NonFiniteDistance(EmbeddingError):
    pass


@dataclass
class Embedding2D:
    projection: str
    base_ids: list[str]
    base_coords: np.ndarray  # (n, 2), frozen after fit
    inserted: dict = field(default_factory=dict)  # id -> (x, y), out-of-sample
    eigenvalues: tuple = (0.0, 0.0)
    degenerate: bool = False

    def coords(self) -> dict:
        out = {i: (float(x), float(y)) for i, (x, y) in zip(self.base_ids, self.base_coords)}
        out.update(self.inserted)
        return out

    def __contains__(self, model_id) -> bool:
        return model_id in self.base_ids or model_id in self.inserted


def interpretable_projection(items) -> Embedding2D:
    """x = log10(param_count), y = val_accuracy; no fitting.

    ``items`` is a list of (id, param_count, val_accuracy).
    """
    ids = [i for i, _, _ in items]
    coords = np.array([[math.log10(max(p, 1)), a] for _, p, a in items], dtype=float)
    coords = coords.reshape(-1, 2)
    return Embedding2D(projection="interpretable", base_ids=ids, base_coords=coords)


def classical_mds(matrix: DistanceMatrix, projection: str | None = None) -> Embedding2D:
    d = np.asarray(matrix.values, dtype=float)
    n = len(d)
    if n < 3:
        raise EmbeddingError("classical MDS needs at least 3 points")
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d ** 2) @ j
    evals, evecs = np.linalg.eigh(b)
    top = np.argsort(evals)[::-1][:2]
    # numerically-zero eigenvalues (the centering null direction) clamp too
    tol = 1e-12 * max(float(np.abs(evals).max()), 1.0)
    coords = np.zeros((n, 2))
    kept = []
    for axis, idx in enumerate(top):
        lam = evals[idx]
        kept.append(float(lam))
        if lam <= tol:
            continue  # clamp: coordinate 0 on this axis
        v = evecs[:, idx] * math.sqrt(lam)
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        coords[:, axis] = v
    degenerate = all(lam <= tol for lam in kept)
    return Embedding2D(
        projection=projection or matrix.metric,
        base_ids=list(matrix.ids),
        base_coords=coords,
        eigenvalues=tuple(kept),
        degenerate=degenerate,
    )


def reconstructed_distances(embedding: Embedding2D) -> np.ndarray:
    x = embedding.base_coords
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def _stress(y: np.ndarray, base: np.ndarray, deltas: np.ndarray) -> float:
    r = np.sqrt(((y - base) ** 2).sum(axis=1))
    return float(((r - deltas) ** 2).sum())


def _polish(y0: np.ndarray, base: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, float]:
    """Damped Gauss-Newton (Levenberg-Marquardt) on the raw stress.

    Stops at gradient norm <= 1e-10 once stress improvements have also
    flattened out (degenerate tangent configurations have vanishing
    gradients far from the minimizer, but Gauss-Newton steps still shrink
    the stress geometrically there).
    """
    y = y0.astype(float).copy()
    lam = 1e-3
    fy = _stress(y, base, deltas)
    improvement = np.inf
    for _ in range(MAX_ITERS):
        diff = y - base
        r = np.sqrt((diff ** 2).sum(axis=1))
        safe = np.maximum(r, 1e-12)
        jac = diff / safe[:, None]            # d r_i / d y
        g = r - deltas                        # residuals
        grad = 2.0 * jac.T @ g
        if np.linalg.norm(grad) <= GRAD_TOL and improvement <= 1e-3 * fy:
            break
        jtj = jac.T @ jac
        stepped = False
        for _ in range(25):
            try:
                step = np.linalg.solve(jtj + lam * np.eye(2), -jac.T @ g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            candidate = y + step
            fc = _stress(candidate, base, deltas)
            if fc < fy:
                improvement = fy - fc
                y, fy = candidate, fc
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                break
            lam *= 10
        if not stepped:
            break
    return y, fy


def out_of_sample(embedding: Embedding2D, distances_to_base) -> tuple[float, float]:
    """Place a new point against the frozen base by raw-stress minimization.

    Starts at the delta^-2-weighted centroid of the base coordinates plus
    four axis-nudged restarts; returns the lowest-stress solution, breaking
    ties toward positive y then positive x. Base coordinates never move.
    """
    deltas = np.asarray(distances_to_base, dtype=float)
    base = embedding.base_coords
    if deltas.shape != (len(base),):
        raise EmbeddingError(
            f"expected {len(base)} distances, got shape {deltas.shape}")
    if not np.all(np.isfinite(deltas)) or np.any(deltas < 0):
        raise NonFiniteDistance("distances to base must be finite and nonnegative")
    weights = 1.0 / np.maximum(deltas, 1e-9) ** 2
    centroid = (weights[:, None] * base).sum(axis=0) / weights.sum()
    spread = float(np.abs(base).max()) or 1.0
    nudge = 1e-3 * spread
    starts = [centroid,
              centroid + (0.0, nudge), centroid - (0.0, nudge),
              centroid + (nudge, 0.0), centroid - (nudge, 0.0)]
    best = None
    for start in starts:
        y, fy = _polish(np.asarray(start), base, deltas)
        if best is None:
            best = (y, fy)
            continue
        yb, fb = best
        if fy < fb - 1e-12 * (1.0 + fb):
            best = (y, fy)
        elif abs(fy - fb) <= 1e-12 * (1.0 + fb):
            # symmetric minima: prefer positive y, then positive x
            if (y[1], y[0]) > (yb[1], yb[0]):
                best = (y, fy)
    y, _ = best
    return float(y[0]), float(y[1])


def insert_out_of_sample(embedding: Embedding2D, model_id: str,
                         distances_to_base) -> tuple[float, float]:
    point = out_of_sample(embedding, distances_to_base)
    embedding.inserted[model_id] = point
    return point


class ProjectionManager:
    """Lifecycle of the two MDS overviews.

    The base configuration is fitted once over the preprocessing corpus;
    models generated afterwards are inserted out-of-sample. An explicit
    refit makes every model part of the base again.
    """

    def __init__(self):
        self.embeddings: dict[str, Embedding2D] = {}

    @property
    def fitted(self) -> bool:
        return bool(self.embeddings)

    def fit(self, matrices: dict[str, DistanceMatrix]) -> None:
        self.embeddings = {metric: classical_mds(m, projection=metric)
                           for metric, m in matrices.items()}

    def insert(self, model_id: str, rows_to_base: dict) -> None:
        for metric, row in rows_to_base.items():
            emb = self.embeddings[metric]
            if model_id in emb:
                continue
            insert_out_of_sample(emb, model_id, row)

    def refit(self, matrices: dict[str, DistanceMatrix]) -> None:
        self.fit(matrices)

    def get(self, metric: str) -> Embedding2D:
        if metric not in self.embeddings:
            raise EmbeddingError(f"projection {metric!r} not fitted")
        return self.embeddings[metric]
