"""Deterministic stand-in for real training.

Produces pseudo-metrics purely from the architecture's canonical hash and
parameter count, in O(epochs): useful for UI development, CI, and fast
end-to-end runs. Bigger models get higher accuracy ceilings (before
hash-seeded noise), and curves approach the ceiling exponentially.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .arch import Architecture, count_parameters, serialize
from .trainer import (TrainingConfig, TrainingRecord, confusion_matrix,
                      per_class_accuracy)

ASYMPTOTE_NOISE = 0.05
EPOCH_SCALE = 3.0


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def _hash_rng(arch: Architecture, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{serialize(arch)}|{seed}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def surrogate_train(arch: Architecture, config: TrainingConfig,
                    val_labels=None, num_classes: int | None = None,
                    progress_sink=None, cancel=None) -> TrainingRecord:
    """Fabricate a TrainingRecord consistent with its own predictions.

    The accuracy ceiling is 0.35 + 0.6*sigmoid((log10(params) - 3) / 1.2)
    plus hash-seeded noise (sigma 0.05); epoch e reaches
    ceiling * (1 - exp(-e/3)). Predictions over ``val_labels`` are chosen so
    each epoch's reported accuracy equals the realized match fraction
    exactly. Without labels, a deterministic 200-example label vector is
    synthesized from the hash.
    """
    params = count_parameters(arch)
    rng = _hash_rng(arch, config.seed)
    k = num_classes if num_classes is not None else arch.num_classes
    if val_labels is None:
        val_labels = rng.integers(0, k, size=200)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    n = len(val_labels)

    ceiling = 0.35 + 0.6 * _sigmoid((math.log10(max(params, 1)) - 3.0) / 1.2)
    ceiling = float(np.clip(ceiling + rng.normal(0.0, ASYMPTOTE_NOISE), 0.05, 0.98))

    losses: list[float] = []
    accuracies: list[float] = []
    epochs_run = 0
    status = "complete"
    if cancel is not None and cancel.is_set():
        status = "cancelled"
    else:
        for epoch in range(1, config.epochs + 1):
            target = ceiling * (1.0 - math.exp(-epoch / EPOCH_SCALE))
            realized = round(target * n) / n  # what the predictions will show
            accuracies.append(realized)
            losses.append(float(math.log(k) * math.exp(-epoch / EPOCH_SCALE) + 0.05))
            epochs_run = epoch
            if progress_sink is not None:
                progress_sink(epoch, losses[-1], accuracies[-1])
            if cancel is not None and cancel.is_set():
                if epoch < config.epochs:
                    status = "cancelled"
                break

    final_acc = accuracies[-1] if accuracies else 0.0
    correct_count = int(round(final_acc * n))
    correct_positions = rng.permutation(n)[:correct_count]
    predictions = val_labels.copy()
    wrong = np.setdiff1d(np.arange(n), correct_positions, assume_unique=False)
    if k > 1:
        predictions[wrong] = (val_labels[wrong] + 1 + rng.integers(0, k - 1, size=len(wrong))) % k
    conf = confusion_matrix(val_labels, predictions, k)
    return TrainingRecord(
        train_loss=losses, val_accuracy=accuracies, predictions=predictions,
        confusion=conf, per_class_accuracy=per_class_accuracy(conf),
        param_count=params, wall_time=0.0,  # no real work; keep records identical
        status=status, epochs_run=epochs_run)
