"""SGD fine-tuning with the penalized loss, evaluation, and the prune sweep."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ConfigError, ContractError
from .prune import apply_prune
from .sparse import SparseConfig, penalized
from .tensor import Tensor
from .vit import ParamStore, SparsePosition, ViTConfig, forward, init_params

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "ce_loss", "penalty", "total_loss", "train_acc", "test_acc",
                  "seconds")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.03
    epochs: int = 20
    weight_decay: float = 1e-4
    momentum: float = 0.0
    seed: int = 0
    sparse: SparseConfig = field(default_factory=SparseConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("train.learning_rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("train.weight_decay must be >= 0 and train.momentum in [0, 1)")


@dataclass
class TrainRunRecord:
    """Metrics of one epoch. Loss columns are sample-weighted means over its batches."""

    epoch: int
    ce_loss: float
    penalty: float
    total_loss: float
    train_acc: float
    test_acc: float
    seconds: float

    def row(self, with_time: bool = True) -> list[str]:
        cells = [str(self.epoch)]
        cells += [format(v, ".17g") for v in
                  (self.ce_loss, self.penalty, self.total_loss, self.train_acc, self.test_acc)]
        cells.append(format(self.seconds, ".17g") if with_time else "")
        return cells


def write_metrics_csv(records: list[TrainRunRecord], path, with_time: bool = False) -> None:
    """Write records as CSV. Wall-clock seconds are left blank unless ``with_time``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for rec in records:
            writer.writerow(rec.row(with_time))


def read_metrics_csv(path) -> list[TrainRunRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values = {f.name: row[f.name] for f in fields(TrainRunRecord)}
            out.append(TrainRunRecord(
                epoch=int(values.pop("epoch")),
                seconds=float(values.pop("seconds") or "nan"),
                **{k: float(v) for k, v in values.items()}))
    return out


def sgd_step(params: ParamStore, grads: Mapping, lr: float, weight_decay: float = 0.0,
             momentum: float = 0.0, velocity: dict | None = None) -> ParamStore:
    """``theta <- theta - lr * (g + weight_decay * theta)``, optionally with momentum.

    ``grads`` may be keyed by name or by parameter tensor (a ``backward`` result).
    With ``momentum > 0`` the ``velocity`` dict holds the buffers and is updated in place.
    """
    updated = {}
    for name, p in params.items():
        g = grads.get(name) if name in grads else grads.get(p)
        if g is None:
            raise ContractError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        d = g.data + weight_decay * p.data if weight_decay else g.data
        if momentum:
            if velocity is None:
                raise ContractError("momentum needs a velocity buffer dict")
            buf = velocity.get(name)
            buf = d.copy() if buf is None else momentum * buf + d
            velocity[name] = buf
            d = buf
        updated[name] = Tensor._wrap(p.data - lr * d, requires_grad=True)
    return ParamStore(updated)


def predict(params: ParamStore, images: np.ndarray, config: ViTConfig,
            batch_size: int = 256) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(forward(images[start:start + batch_size], params, config).numpy())
    return np.concatenate(out)


def evaluate(params: ParamStore, dataset: Dataset, config: ViTConfig,
             batch_size: int = 256) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    logits = predict(params, dataset.images, config, batch_size)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


BatchCallback = Callable[..., None]
EpochCallback = Callable[[TrainRunRecord], bool | None]


def train(params: ParamStore, train_set: Dataset, test_set: Dataset | None,
          vit_config: ViTConfig, config: TrainConfig,
          on_batch: BatchCallback | None = None,
          on_epoch: EpochCallback | None = None) -> tuple[ParamStore, list[TrainRunRecord]]:
    """Run mini-batch SGD on the penalized loss.

    ``on_batch(epoch, params, images, labels, ce, penalty)`` sees every step
    before its update. ``on_epoch(record)`` may return True to stop early.
    Everything is determined by ``config.seed``.
    """
    if len(train_set) == 0:
        raise ContractError("empty training set")
    sparse = config.sparse.resolve(vit_config)
    rng = np.random.default_rng(config.seed)
    velocity: dict = {}
    n = len(train_set)
    records: list[TrainRunRecord] = []
    for epoch in range(1, config.epochs + 1):
        start_time = time.perf_counter()
        order = rng.permutation(n)
        ce_sum = pen_sum = total_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            images, labels = train_set.images[idx], train_set.labels[idx]
            taps = sparse.make_tap()
            logits = forward(images, params, vit_config, taps)
            ce = T.cross_entropy(logits, labels)
            loss, term = penalized(ce, taps, sparse)
            pen = 0.0 if term is None else term.item()
            if on_batch is not None:
                on_batch(epoch, params, images, labels, ce.item(), pen)
            grads = T.backward(loss)
            params = sgd_step(params, grads, config.learning_rate, config.weight_decay,
                              config.momentum, velocity)
            ce_sum += ce.item() * len(idx)
            pen_sum += pen * len(idx)
            total_sum += loss.item() * len(idx)
        train_acc = evaluate(params, train_set, vit_config)
        test_acc = evaluate(params, test_set, vit_config) if test_set is not None else float("nan")
        record = TrainRunRecord(epoch, ce_sum / n, pen_sum / n, total_sum / n, train_acc,
                                test_acc, time.perf_counter() - start_time)
        records.append(record)
        log.info("epoch %d ce=%.5f penalty=%.5f train_acc=%.4f test_acc=%.4f",
                 epoch, record.ce_loss, record.penalty, train_acc, test_acc)
        if on_epoch is not None and on_epoch(record):
            break
    return params, records


# -- sparse-then-prune sweep ------------------------------------------------------


@dataclass
class SweepRow:
    ratio: float
    accuracy: float
    sparsity: float
    threshold: float | None


@dataclass
class SweepResult:
    arm: str  # "sparse" or "baseline"
    baseline_accuracy: float  # trained, unpruned
    rows: list[SweepRow]
    records: list[TrainRunRecord]
    params: ParamStore | None = None


def arm_config(config: TrainConfig, with_sparse: bool) -> TrainConfig:
    sparse = replace(config.sparse, enabled=with_sparse)
    return replace(config, sparse=sparse)


def prune_curve(params: ParamStore, test_set: Dataset, vit_config: ViTConfig, ratios,
                exclude=()) -> list[SweepRow]:
    rows = []
    for ratio in ratios:
        pruned, mask, report = apply_prune(params, ratio, exclude)
        rows.append(SweepRow(ratio, evaluate(pruned, test_set, vit_config), report.sparsity,
                             report.threshold))
    return rows


def sweep(vit_config: ViTConfig, config: TrainConfig, train_set: Dataset, test_set: Dataset,
          ratios, with_sparse: bool, exclude=(), keep_params: bool = False) -> SweepResult:
    """Train one arm from ``init_params(seed)``, then prune a copy at every ratio."""
    ratios = list(ratios)
    for r in ratios:
        if not 0 < r < 1:
            raise ConfigError(f"sweep ratio {r} outside (0, 1)")
    cfg = arm_config(config, with_sparse)
    params = init_params(vit_config, cfg.seed)
    trained, records = train(params, train_set, test_set, vit_config, cfg)
    rows = prune_curve(trained, test_set, vit_config, ratios, exclude)
    return SweepResult("sparse" if with_sparse else "baseline",
                       evaluate(trained, test_set, vit_config), rows, records,
                       trained if keep_params else None)


def paired_table(sparse: SweepResult, baseline: SweepResult) -> tuple[list[dict], float | None]:
    """Per-ratio accuracies of both arms and their difference (sparse minus baseline).

    Returns the rows (ratio 0 first: the unpruned models) and the mean difference
    over the pruned ratios.
    """
    if [r.ratio for r in sparse.rows] != [r.ratio for r in baseline.rows]:
        raise ContractError("arms were swept over different ratios")
    rows = [{"ratio": 0.0, "sparse": sparse.baseline_accuracy,
             "baseline": baseline.baseline_accuracy,
             "difference": sparse.baseline_accuracy - baseline.baseline_accuracy}]
    diffs = []
    for s, b in zip(sparse.rows, baseline.rows):
        diffs.append(s.accuracy - b.accuracy)
        rows.append({"ratio": s.ratio, "sparse": s.accuracy, "baseline": b.accuracy,
                     "difference": diffs[-1]})
    mean_diff = float(np.mean(diffs)) if diffs else None
    return rows, mean_diff


DEFAULT_SWEEP_RATIOS = (0.10, 0.15, 0.20, 0.25, 0.30)
SWEEP_POSITION = SparsePosition.ATTENTION_WEIGHT
