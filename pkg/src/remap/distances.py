"""Inter-model distance metrics and pairwise distance matrices.

Two metrics:

* prediction distance — normalized Hamming disagreement between two models'
  predicted labels over the same validation split (index-aligned, so
  substitution-only edit distance reduces to a Hamming count).
* structural distance — an optimal-transport cost between per-layer mass
  profiles. Each Conv2D/Dense layer (head included) carries mass
  log10(1 + learnable params); MaxPool/Activation/Dropout carry mass 1.
  Moving a unit of mass from layer i to layer j costs a label mismatch term
  (0 identical kind+params, 0.1 same kind different params, 0.25 same group
  different kind) plus the normalized-position gap |pos_i - pos_j|;
  transport across groups is disallowed; unmoved mass on either side pays a
  penalty of 1 per unit. The transportation LP is solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .arch import Architecture, Conv2D, Dense, MaxPool, Dropout, flat_size, infer_shapes, serialize

METRICS = ("structural", "prediction")

UNASSIGNED_PENALTY = 1.0
LABEL_COST_SAME_KIND = 0.1
LABEL_COST_SAME_GROUP = 0.25

_GROUPS = {
    "Conv2D": "spatial",
    "MaxPool": "spatial",
    "Dense": "dense",
    "Head": "dense",
    "Activation": "activation",
    "Dropout": "regularization",
}


class DistanceError(ValueError):
    pass


class LengthMismatch(DistanceError):
    pass


class MissingPredictions(DistanceError):
    pass


# ---------------------------------------------------------------------------
# prediction distance

def prediction_distance(p, q) -> float:
    """Fraction of aligned positions where the two label vectors disagree."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.ndim != 1 or q.ndim != 1 or len(p) != len(q):
        raise LengthMismatch(f"prediction vectors differ: {p.shape} vs {q.shape}")
    if len(p) == 0:
        raise LengthMismatch("prediction vectors must be nonempty")
    return float((p != q).mean())


# ---------------------------------------------------------------------------
# structural distance

@dataclass(frozen=True)
class ProfileEntry:
    kind: str
    group: str
    mass: float
    position: float
    params: tuple  # key hyperparameters, for the label-cost table


@dataclass(frozen=True)
class LayerMassProfile:
    entries: tuple


def layer_mass_profile(arch: Architecture) -> LayerMassProfile:
    """Mass profile over body layers plus the implicit head."""
    shapes = [arch.input_shape] + infer_shapes(arch)
    entries = []
    n = len(arch.layers) + 1  # head included
    for i, (layer, shape_in) in enumerate(zip(arch.layers, shapes)):
        if isinstance(layer, Conv2D):
            params = (layer.kernel ** 2 * shape_in[2] + 1) * layer.filters
            mass = np.log10(1.0 + params)
            key = ("filters", layer.filters, "kernel", layer.kernel, "stride", layer.stride)
        elif isinstance(layer, Dense):
            params = (flat_size(shape_in) + 1) * layer.units
            mass = np.log10(1.0 + params)
            key = ("units", layer.units)
        elif isinstance(layer, MaxPool):
            mass, key = 1.0, ("pool", layer.pool)
        elif isinstance(layer, Dropout):
            mass, key = 1.0, ("rate", float(layer.rate))
        else:
            mass, key = 1.0, ("fn", layer.fn)
        position = i / (n - 1) if n > 1 else 0.0
        entries.append(ProfileEntry(layer.kind, _GROUPS[layer.kind], float(mass), position, key))
    head_params = (flat_size(shapes[-2]) + 1) * arch.num_classes
    entries.append(ProfileEntry(
        "Head", _GROUPS["Head"], float(np.log10(1.0 + head_params)),
        1.0 if n > 1 else 0.0, ("num_classes", arch.num_classes)))
    return LayerMassProfile(entries=tuple(entries))


def label_cost(a: ProfileEntry, b: ProfileEntry) -> float | None:
    """Mismatch cost between two profile entries; None when transport between
    their groups is disallowed."""
    if a.group != b.group:
        return None
    if a.kind != b.kind:
        return LABEL_COST_SAME_GROUP
    if a.params != b.params:
        return LABEL_COST_SAME_KIND
    return 0.0


def _transport_cost(pa: LayerMassProfile, pb: LayerMassProfile) -> float:
    """Exact solve of the penalty-form transportation LP between profiles."""
    ea, eb = pa.entries, pb.entries
    mass_a = np.array([e.mass for e in ea])
    mass_b = np.array([e.mass for e in eb])
    total_penalty = UNASSIGNED_PENALTY * (mass_a.sum() + mass_b.sum())
    pairs = []
    costs = []
    for i, a in enumerate(ea):
        for j, b in enumerate(eb):
            lc = label_cost(a, b)
            if lc is None:
                continue
            pairs.append((i, j))
            costs.append(lc + abs(a.position - b.position))
    if not pairs:
        return total_penalty
    # moving a unit saves the two-sided penalty 2*nu but pays its ground cost
    c = np.array(costs) - 2.0 * UNASSIGNED_PENALTY
    n_var = len(pairs)
    a_ub = np.zeros((len(ea) + len(eb), n_var))
    b_ub = np.concatenate([mass_a, mass_b])
    for v, (i, j) in enumerate(pairs):
        a_ub[i, v] = 1.0
        a_ub[len(ea) + j, v] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if not res.success:
        raise DistanceError(f"transport solve failed: {res.message}")
    return max(0.0, float(res.fun) + total_penalty)


def structural_distance(a: Architecture, b: Architecture) -> float:
    """Optimal-transport distance between layer mass profiles.

    Exactly zero for structurally equal architectures; symmetric by
    canonical argument ordering.
    """
    ka, kb = serialize(a), serialize(b)
    if ka == kb:
        return 0.0
    if kb < ka:
        a, b = b, a
    return _transport_cost(layer_mass_profile(a), layer_mass_profile(b))


# ---------------------------------------------------------------------------
# distance matrices

@dataclass
class DistanceMatrix:
    metric: str
    ids: list[str]
    values: np.ndarray  # symmetric, zero diagonal, nonnegative

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise DistanceError(f"matrix shape {self.values.shape} for {n} ids")

    def row(self, model_id: str) -> np.ndarray:
        return self.values[self.ids.index(model_id)]

    def submatrix(self, ids: list[str]) -> "DistanceMatrix":
        index = [self.ids.index(i) for i in ids]
        return DistanceMatrix(self.metric, list(ids), self.values[np.ix_(index, index)])


def _pair_distance(metric: str, item_a, item_b) -> float:
    arch_a, preds_a = item_a
    arch_b, preds_b = item_b
    if metric == "structural":
        return structural_distance(arch_a, arch_b)
    if preds_a is None or preds_b is None:
        raise MissingPredictions("prediction metric requires prediction vectors")
    return prediction_distance(preds_a, preds_b)


def distance_matrix(items, metric: str, ids=None) -> DistanceMatrix:
    """All-pairs distances over ``items`` = [(architecture, predictions)].

    Each unordered pair is evaluated once and mirrored, so symmetry is exact
    by construction.
    """
    if metric not in METRICS:
        raise DistanceError(f"unknown metric {metric!r}")
    if len(items) < 2:
        raise DistanceError("need at least 2 models")
    if ids is None:
        ids = [arch.id for arch, _ in items]
    n = len(items)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = _pair_distance(metric, items[i], items[j])
            values[i, j] = values[j, i] = d
    return DistanceMatrix(metric, list(ids), values)


def append_row(matrix: DistanceMatrix, items, new_item, new_id=None) -> DistanceMatrix:
    """Extend a matrix with one model: existing entries are untouched.

    ``items`` holds the (architecture, predictions) pairs aligned with
    ``matrix.ids``.
    """
    if len(items) != len(matrix.ids):
        raise DistanceError(f"{len(items)} items for {len(matrix.ids)} ids")
    if new_id is None:
        new_id = new_item[0].id
    n = len(matrix.ids)
    values = np.zeros((n + 1, n + 1))
    values[:n, :n] = matrix.values
    for i in range(n):
        d = _pair_distance(matrix.metric, items[i], new_item)
        values[i, n] = values[n, i] = d
    return DistanceMatrix(matrix.metric, [*matrix.ids, new_id], values)


def to_csv(matrix: DistanceMatrix) -> str:
    """ids header row + symmetric body, one row per model."""
    lines = ["id," + ",".join(matrix.ids)]
    for model_id, row in zip(matrix.ids, matrix.values):
        lines.append(model_id + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def from_csv(text: str, metric: str = "structural") -> DistanceMatrix:
    lines = [line for line in text.strip().splitlines() if line]
    ids = lines[0].split(",")[1:]
    values = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    return DistanceMatrix(metric, ids, values)
