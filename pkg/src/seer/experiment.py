"""Seed-disjoint cross validation over the (cell, feature variant, T, scene) grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .dataset import SequenceRecord, stack
from .errors import ConfigError
from .evaluation import ConfusionMatrix, ReportBlock, clean, predict_records
from .generate import generate_records
from .rnn import CELLS, RnnModel
from .train import TrainingLog, train

log = logging.getLogger(__name__)


@dataclass
class TrainedCell:
    block: ReportBlock
    model: RnnModel
    history: TrainingLog


def _records(config: ScenarioConfig, scene: str, T: int, seed: int, split: str, n: int,
             cache: dict) -> list[SequenceRecord]:
    key = (scene, T, seed, split, n)
    if key not in cache:
        cfg = config.replace(scene=scene, T=T)
        raw = generate_records(cfg.road(), n, T, seed, split, settings=cfg.world(), variant="A3",
                               **cfg.world_kwargs())
        cache[key] = clean(raw, config.stop_as)
    return cache[key]


def _fit(config: ScenarioConfig, cell: str, variant: str, T: int, train_set, test_set):
    rnn_cfg = config.rnn(cell, variant, T)
    x, y = stack([r.with_variant(variant) for r in train_set])
    model, history = train(x, y, rnn_cfg)
    truth, pred = predict_records(model, [r.with_variant(variant) for r in test_set])
    return model, history, ConfusionMatrix.from_pairs(truth, pred, rnn_cfg.num_classes)


def cross_validate(config: ScenarioConfig, seeds, cells=CELLS, variants=("A2", "A3"), T_values=None,
                   scenes=None, kfold: int | None = None, keep_models: bool = False):
    """Train and evaluate every grid cell; returns one :class:`ReportBlock` each.

    Default mode: consecutive seed pairs ``(seeds[k], seeds[k + 1])`` give the
    train and test generation seeds, so train and test episodes never share a
    seed; confusion counts are summed over the pairs.  With ``kfold`` the
    records generated from every seed are pooled and split into k folds.
    With ``keep_models`` the result holds :class:`TrainedCell` entries
    (model and training log of the last fold) instead of bare blocks.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigError("seeds", "cross validation needs at least two seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "seeds must be distinct")
    T_values = tuple(T_values or (config.T,))
    scenes = tuple(scenes or (config.scene,))
    cache: dict = {}
    out = []
    for scene in scenes:
        for T in T_values:
            if kfold:
                pool = []
                for s in seeds:
                    pool += _records(config, scene, T, s, "train", config.train_sequences, cache)
                folds = _kfold_sets(pool, kfold, seeds[0])
                fold_ids = [(f"kfold-{i}",) for i in range(kfold)]
            else:
                folds = []
                for a, b in zip(seeds, seeds[1:]):
                    folds.append((_records(config, scene, T, a, "train", config.train_sequences, cache),
                                  _records(config, scene, T, b, "test", config.test_sequences, cache)))
                fold_ids = list(zip(seeds, seeds[1:]))
            for cell in cells:
                for variant in variants:
                    cm = None
                    for train_set, test_set in folds:
                        model, history, fold_cm = _fit(config, cell, variant, T, train_set, test_set)
                        cm = fold_cm if cm is None else cm + fold_cm
                    block = ReportBlock(cell, variant, T, scene, cm, fold_ids, history.final_accuracy)
                    log.info("%s %s T=%d %s done", cell, variant, T, scene)
                    out.append(TrainedCell(block, model, history) if keep_models else block)
    return out


def _kfold_sets(pool, k: int, seed: int):
    if k < 2 or k > len(pool):
        raise ConfigError("kfold", f"need 2 <= k <= {len(pool)}")
    order = np.random.default_rng(seed).permutation(len(pool))
    parts = np.array_split(order, k)
    sets = []
    for i in range(k):
        test = [pool[j] for j in parts[i]]
        train_idx = np.concatenate([parts[j] for j in range(k) if j != i])
        sets.append(([pool[j] for j in train_idx], test))
    return sets
