"""Child-model generation: ablations, randomized variations, handcraft edits.

Every child differs from its parent by exactly one atomic edit, which keeps
diffs interpretable. Ablation children that fail validation are skipped and
reported rather than repaired; handcraft edits are strict and reject invalid
results outright.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .arch import Architecture, Violation, serialize, validate
from .sampler import DEFAULT_GRIDS, _grid_combos, _make_layer

EDIT_OPS = ("prepend", "remove", "replace", "reparameterize")


class EditError(ValueError):
    pass


class EmptySelection(EditError):
    pass


class IndexOutOfBounds(EditError):
    pass


class InvalidResult(EditError):
    def __init__(self, violations: list[Violation]):
        super().__init__("edit produced an invalid architecture: "
                         + "; ".join(f"{v.rule}: {v.message}" for v in violations))
        self.violations = violations


class BudgetExhaustedWarning(UserWarning):
    """Variation sampling hit its attempt budget before n distinct children."""


@dataclass(frozen=True)
class EditOp:
    op: str
    target_index: int
    payload: object = None  # LayerSpec; absent for remove

    def __post_init__(self):
        if self.op not in EDIT_OPS:
            raise EditError(f"unknown edit op {self.op!r}")
        if self.op != "remove" and self.payload is None:
            raise EditError(f"{self.op} requires a payload layer")

    def to_dict(self) -> dict:
        from .arch import layer_to_dict
        d = {"op": self.op, "target_index": self.target_index}
        if self.payload is not None:
            d["payload"] = layer_to_dict(self.payload)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EditOp":
        from .arch import layer_from_dict
        payload = layer_from_dict(d["payload"]) if d.get("payload") else None
        return cls(op=d["op"], target_index=d["target_index"], payload=payload)


@dataclass(frozen=True)
class VariationConstraints:
    """Per-layer allowed-op sets. Keys are layer handles; `prepend` at handle
    n means appending after the last layer."""

    allowed: dict = field(default_factory=dict)  # index -> set of op names
    n_children: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_children < 1:
            raise EditError("n_children must be >= 1")
        for index, ops in self.allowed.items():
            bad = set(ops) - set(EDIT_OPS)
            if bad:
                raise EditError(f"unknown ops {bad} for layer {index}")
        if not any(self.allowed.values()):
            raise EditError("at least one (layer, op) pair must be enabled")

    @classmethod
    def unconstrained(cls, parent: Architecture, n_children: int = 10,
                      seed: int = 0) -> "VariationConstraints":
        allowed = {i: set(EDIT_OPS) for i in range(len(parent.layers))}
        allowed[len(parent.layers)] = {"prepend"}  # append handle
        return cls(allowed=allowed, n_children=n_children, seed=seed)

    def enabled_pairs(self) -> list[tuple[int, str]]:
        pairs = []
        for index in sorted(self.allowed):
            for op in sorted(self.allowed[index]):
                pairs.append((index, op))
        return pairs


def apply_edit(arch: Architecture, edit: EditOp) -> Architecture:
    """Apply one edit strictly: the result must validate or the edit is rejected."""
    layers = list(arch.layers)
    n = len(layers)
    if edit.op == "prepend":
        if not 0 <= edit.target_index <= n:
            raise IndexOutOfBounds(f"prepend handle {edit.target_index} outside 0..{n}")
        layers.insert(edit.target_index, edit.payload)
    elif edit.op == "remove":
        if not 0 <= edit.target_index < n:
            raise IndexOutOfBounds(f"remove index {edit.target_index} outside 0..{n - 1}")
        del layers[edit.target_index]
    elif edit.op in ("replace", "reparameterize"):
        if not 0 <= edit.target_index < n:
            raise IndexOutOfBounds(f"{edit.op} index {edit.target_index} outside 0..{n - 1}")
        layers[edit.target_index] = edit.payload
    child = arch.with_layers(layers, provenance="handcrafted", parent_id=arch.id)
    violations = validate(child)
    if violations:
        raise InvalidResult(violations)
    return child


def ablations(parent: Architecture,
              selected: set[int]) -> tuple[list[Architecture], list[tuple[int, list[Violation]]]]:
    """One child per selected index with exactly that layer removed.

    Returns (children, skipped) where skipped pairs the index with the
    violations that disqualified its child. len(children) + len(skipped)
    equals len(selected).
    """
    if not selected:
        raise EmptySelection("ablation needs at least one selected layer")
    n = len(parent.layers)
    bad = [i for i in selected if not 0 <= i < n]
    if bad:
        raise IndexOutOfBounds(f"selected indices {bad} outside 0..{n - 1}")
    children, skipped = [], []
    for index in sorted(selected):
        layers = list(parent.layers)
        del layers[index]
        child = parent.with_layers(layers, provenance="ablation", parent_id=parent.id)
        violations = validate(child)
        if violations:
            skipped.append((index, violations))
        else:
            children.append(child)
    return children, skipped


def _reparameterize(layer, grids: dict, rng: np.random.Generator):
    """Resample one hyperparameter to a different grid value, or None if the
    layer has no parameter with an alternative."""
    grid = grids.get(layer.kind, {})
    names = [n for n in sorted(grid)
             if len([v for v in grid[n] if v != getattr(layer, n)]) > 0]
    if not names:
        return None
    name = names[int(rng.integers(len(names)))]
    alternatives = [v for v in grid[name] if v != getattr(layer, name)]
    value = alternatives[int(rng.integers(len(alternatives)))]
    params = {n: getattr(layer, n) for n in grid}
    params[name] = value
    return _make_layer(layer.kind, params)


def _random_layer(grids: dict, rng: np.random.Generator):
    kind = sorted(grids)[int(rng.integers(len(grids)))]
    params = _grid_combos(grids[kind], rng)[0]
    return _make_layer(kind, params)


def variations(parent: Architecture, constraints: VariationConstraints,
               grids: dict | None = None) -> list[Architecture]:
    """Up to n_children distinct valid one-edit children of ``parent``.

    Each draw picks a (layer, op) pair uniformly from the enabled set,
    builds the edit with grid-sampled payloads, and keeps the child only if
    it validates and is new (deduplicated against the parent and previous
    children by canonical hash). Budget: 20 * n_children attempts.
    """
    grids = grids or DEFAULT_GRIDS
    rng = np.random.default_rng(constraints.seed & 0xFFFFFFFFFFFFFFFF)
    pairs = constraints.enabled_pairs()
    n_layers = len(parent.layers)
    seen = {serialize(parent)}
    children: list[Architecture] = []
    budget = 20 * constraints.n_children
    for _ in range(budget):
        if len(children) == constraints.n_children:
            return children
        index, op = pairs[int(rng.integers(len(pairs)))]
        if op == "prepend":
            if not 0 <= index <= n_layers:
                continue
            payload = _random_layer(grids, rng)
        elif op in ("replace", "reparameterize"):
            if not 0 <= index < n_layers:
                continue
            if op == "replace":
                payload = _random_layer(grids, rng)
            else:
                payload = _reparameterize(parent.layers[index], grids, rng)
                if payload is None:
                    continue
        else:  # remove
            if not 0 <= index < n_layers:
                continue
            payload = None
        layers = list(parent.layers)
        if op == "prepend":
            layers.insert(index, payload)
        elif op == "remove":
            del layers[index]
        else:
            layers[index] = payload
        child = parent.with_layers(layers, provenance="variation", parent_id=parent.id)
        if validate(child):
            continue
        key = serialize(child)
        if key in seen:
            continue
        seen.add(key)
        children.append(child)
    if len(children) < constraints.n_children:
        warnings.warn(
            f"variation budget exhausted: {len(children)}/{constraints.n_children} "
            f"children after {budget} attempts", BudgetExhaustedWarning)
    return children
