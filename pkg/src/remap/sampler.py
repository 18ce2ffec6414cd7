"""Random architecture generation from a layer-transition Markov chain.

A walk starts at START, picks the next layer kind from the current row of
the transition matrix (masked so the partial architecture stays valid, then
renormalized), fills in hyperparameters uniformly from per-kind grids, and
stops at END or at max_depth.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .arch import Architecture, Conv2D, MaxPool, Dense, Activation, Dropout, is_valid, serialize

STATES = ("START", "Conv2D", "MaxPool", "Dense", "Activation", "Dropout", "END")
LAYER_STATES = STATES[1:-1]

# Conv-early / dense-late priors; rows must sum to 1. Overridable via config.
DEFAULT_TRANSITIONS = {
    "START": {"Conv2D": 0.6, "Dense": 0.2, "Activation": 0.1, "Dropout": 0.05, "MaxPool": 0.05},
    "Conv2D": {"Activation": 0.4, "MaxPool": 0.2, "Conv2D": 0.15, "Dense": 0.1,
               "Dropout": 0.05, "END": 0.1},
    "MaxPool": {"Conv2D": 0.35, "Dense": 0.25, "Activation": 0.15, "Dropout": 0.05, "END": 0.2},
    "Dense": {"Activation": 0.3, "Dropout": 0.2, "Dense": 0.2, "END": 0.3},
    "Activation": {"Conv2D": 0.25, "MaxPool": 0.15, "Dense": 0.25, "Dropout": 0.15, "END": 0.2},
    "Dropout": {"Dense": 0.4, "Conv2D": 0.2, "Activation": 0.1, "END": 0.3},
}

DEFAULT_GRIDS = {
    "Conv2D": {"filters": [4, 8, 16, 32, 64], "kernel": [3, 5], "stride": [1]},
    "MaxPool": {"pool": [2, 3]},
    "Dense": {"units": [16, 32, 64, 128, 256]},
    "Activation": {"fn": ["relu", "tanh", "sigmoid"]},
    "Dropout": {"rate": [0.1, 0.25, 0.5]},
}

ROW_SUM_TOL = 1e-9


class SamplerError(ValueError):
    pass


class InsufficientDiversity(SamplerError):
    """Deduplication could not reach the requested batch size."""


@dataclass(frozen=True)
class TransitionModel:
    probs: dict = field(default_factory=lambda: DEFAULT_TRANSITIONS)
    grids: dict = field(default_factory=lambda: DEFAULT_GRIDS)
    max_depth: int = 12

    def __post_init__(self):
        if self.max_depth < 0:
            raise SamplerError("max_depth must be >= 0")
        for state in self.probs:
            if state not in STATES or state == "END":
                raise SamplerError(f"unknown transition row {state!r}")
            row = self.probs[state]
            if any(t not in STATES or t == "START" for t in row):
                raise SamplerError(f"unknown transition target in row {state!r}")
            total = sum(row.values())
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise SamplerError(f"row {state!r} sums to {total}, not 1")
            if any(p < 0 for p in row.values()):
                raise SamplerError(f"negative probability in row {state!r}")
        for kind, grid in self.grids.items():
            if kind not in LAYER_STATES:
                raise SamplerError(f"grid for unknown kind {kind!r}")
            if any(len(values) == 0 for values in grid.values()):
                raise SamplerError(f"empty grid for {kind!r}")

    def row(self, state: str) -> dict:
        return self.probs.get(state, {})

    def end_unreachable_states(self) -> list[str]:
        """Diagnostic: states from which no positive-probability path hits END.

        Not enforced as a hard invariant because max_depth terminates every
        walk regardless.
        """
        reaching = {"END"}
        changed = True
        while changed:
            changed = False
            for state, row in self.probs.items():
                if state in reaching:
                    continue
                if any(p > 0 and target in reaching for target, p in row.items()):
                    reaching.add(state)
                    changed = True
        return [s for s in self.probs if s not in reaching]

    @classmethod
    def from_config(cls, path) -> "TransitionModel":
        with open(path) as f:
            obj = json.load(f)
        return cls(
            probs=obj.get("transitions", DEFAULT_TRANSITIONS),
            grids=obj.get("grids", DEFAULT_GRIDS),
            max_depth=obj.get("max_depth", 12),
        )

    def to_config_dict(self) -> dict:
        return {"transitions": self.probs, "grids": self.grids, "max_depth": self.max_depth}


def is_grid_layer(layer, grids: dict | None = None) -> bool:
    """True when every hyperparameter of ``layer`` sits on its grid."""
    grids = grids or DEFAULT_GRIDS
    grid = grids.get(layer.kind, {})
    return all(getattr(layer, name) in values for name, values in grid.items())


def _grid_combos(grid: dict, rng: np.random.Generator) -> list:
    """All hyperparameter combinations of one kind, in a shuffled order."""
    names = sorted(grid)
    combos = list(itertools.product(*(grid[n] for n in names)))
    order = rng.permutation(len(combos))
    return [dict(zip(names, combos[i])) for i in order]


def _make_layer(kind: str, params: dict):
    cls = {"Conv2D": Conv2D, "MaxPool": MaxPool, "Dense": Dense,
           "Activation": Activation, "Dropout": Dropout}[kind]
    return cls(**params)


def draw_next_state(row: dict, rng: np.random.Generator) -> str | None:
    """One weighted draw from a (possibly renormalized) transition row."""
    states = sorted(row)
    weights = np.array([row[s] for s in states], dtype=float)
    total = weights.sum()
    if total <= 0:
        return None
    pick = rng.random() * total
    index = int(np.searchsorted(np.cumsum(weights), pick, side="right"))
    return states[min(index, len(states) - 1)]


def sample_architecture(model: TransitionModel, seed: int, input_shape=(14, 14, 1),
                        num_classes: int = 10) -> Architecture:
    """Deterministic chain walk; the result always passes validate.

    Kinds whose every grid assignment would break a validation rule are
    masked out of the current row (renormalizing the remainder). If masking
    empties a row before END, the partial architecture built so far is
    returned; sampling never fails hard.
    """
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    layers: list = []
    base = Architecture(layers=(), input_shape=input_shape, num_classes=num_classes,
                        provenance="sampled")
    state = "START"
    while len(layers) < model.max_depth:
        row = dict(model.row(state))
        chosen = None
        while row:
            kind = draw_next_state(row, rng)
            if kind is None:
                break
            if kind == "END":
                chosen = "END"
                break
            # accept the first grid assignment that keeps the partial arch valid
            layer = None
            for params in _grid_combos(model.grids[kind], rng):
                candidate = _make_layer(kind, params)
                if is_valid(base.with_layers([*layers, candidate], "sampled")):
                    layer = candidate
                    break
            if layer is None:
                del row[kind]  # dead kind for this position; renormalize implicitly
                continue
            chosen = kind
            layers.append(layer)
            break
        if chosen is None or chosen == "END":
            break
        state = chosen
    return base.with_layers(layers, "sampled")


def sample_batch(model: TransitionModel, n: int, base_seed: int,
                 input_shape=(14, 14, 1), num_classes: int = 10) -> list[Architecture]:
    """n distinct valid architectures, deduplicated by canonical hash."""
    if n < 1:
        raise SamplerError("n must be >= 1")
    out: list[Architecture] = []
    seen: set[str] = set()
    budget = 50 * n
    for attempt in range(budget):
        arch = sample_architecture(model, base_seed + attempt, input_shape, num_classes)
        key = serialize(arch)
        if key in seen:
            continue
        seen.add(key)
        out.append(arch)
        if len(out) == n:
            return out
    raise InsufficientDiversity(
        f"only {len(out)} distinct architectures found in {budget} attempts (wanted {n})")
