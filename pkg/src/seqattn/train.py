"""Optimization and evaluation harness.

AdamW with decoupled weight decay, wrapped in a lookahead outer loop,
driving stratified k-fold training with per-epoch dev evaluation and
best-epoch selection. The ablation and delta-sweep drivers are thin loops
over configuration variants with shared seeds, so rows are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledCorpus, kfold_split, train_dev_indices
from .backbone import Vocab
from .errors import ConfigError, NumericError
from .model import Batch, Model, encode_embeddings, encode_texts, init_model, take
from .sam import Order, SamConfig
from .tensor import Tensor, backward, no_grad


@dataclass
class TrainConfig:
    lr: float = 0.02
    weight_decay: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 50
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    folds: int = 5
    dropout: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning rate, eps, batch size, and epochs must be positive")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lookahead_k < 1 or not 0.0 <= self.lookahead_alpha <= 1.0:
            raise ConfigError("lookahead needs k >= 1 and alpha in [0, 1]")
        if self.folds < 1:
            raise ConfigError(f"folds must be at least 1, got {self.folds}")


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    binary_f1: float
    per_class: list[dict]
    confusion: np.ndarray
    n: int
    seconds_per_epoch: float | None = None


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay update over every parameter."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data[...] = (
            p.data
            - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps))
            - cfg.lr * cfg.weight_decay * p.data
        )


def lookahead_sync(
    fast: dict[str, Tensor],
    slow: dict[str, np.ndarray],
    k: int,
    alpha: float,
    step_count: int,
) -> None:
    """Every k steps pull the slow weights toward the fast ones and reset."""
    if step_count % k != 0:
        return
    for name, p in fast.items():
        slow[name] += alpha * (p.data - slow[name])
        p.data[...] = slow[name]


def classification_report(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> EvalReport:
    """Accuracy, per-class precision/recall/F1 (0 on empty denominators),
    macro F1, and the confusion matrix. Binary F1 scores dense class 1."""
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for truth, pred in zip(labels, preds):
        confusion[truth, pred] += 1
    per_class = []
    for c in range(num_classes):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            {"precision": float(precision), "recall": float(recall), "f1": float(f1),
             "support": int(confusion[c, :].sum())}
        )
    return EvalReport(
        accuracy=float(np.trace(confusion) / len(labels)),
        macro_f1=float(np.mean([pc["f1"] for pc in per_class])),
        binary_f1=float(per_class[1]["f1"]),
        per_class=per_class,
        confusion=confusion,
        n=len(labels),
    )


def evaluate(model: Model, batch: Batch) -> EvalReport:
    with no_grad():
        logits, _ = model.forward(batch)
    preds = logits.data.argmax(axis=1)
    return classification_report(batch.labels, preds, model.head.num_classes)


def metric_name_for(num_classes: int) -> str:
    return "binary_f1" if num_classes == 2 else "accuracy"


def metric_of(report: EvalReport, name: str) -> float:
    return getattr(report, name)


@dataclass
class FoldOutcome:
    fold: int
    report: EvalReport | None
    best_epoch: int
    diverged: bool = False


@dataclass
class TrainResult:
    model: Model
    metric_name: str
    mean_metric: float
    fold_outcomes: list[FoldOutcome]
    history: list[dict]
    seconds_per_epoch: float

    @property
    def reports(self) -> list[EvalReport | None]:
        return [fo.report for fo in self.fold_outcomes]


def _train_single(
    model: Model,
    train_batch: Batch,
    dev_batch: Batch,
    cfg: TrainConfig,
    fold: int,
    rng: np.random.Generator,
    metric: str,
) -> tuple[dict[str, np.ndarray], EvalReport, int, list[dict], float]:
    params = model.parameters()
    state = init_adam_state(params)
    slow = {name: p.data.copy() for name, p in params.items()}
    history: list[dict] = []
    best_value = -np.inf
    best_state: dict[str, np.ndarray] = model.state_arrays()
    best_report: EvalReport | None = None
    best_epoch = 0
    step_count = 0
    epoch_seconds: list[float] = []

    n = len(train_batch)
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        total_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            model.zero_grad()
            loss = model.loss(take(train_batch, idx), dropout=cfg.dropout, rng=rng)
            backward(loss)
            total_loss += loss.item() * len(idx)
            adamw_step(params, {name: p.grad for name, p in params.items()}, state, cfg)
            step_count += 1
            lookahead_sync(params, slow, cfg.lookahead_k, cfg.lookahead_alpha, step_count)
            if model.table is not None:
                model.table.enforce_pad_zero()
        seconds = time.perf_counter() - started
        epoch_seconds.append(seconds)

        report = evaluate(model, dev_batch)
        value = metric_of(report, metric)
        history.append(
            {"fold": fold, "epoch": epoch, "split": "train", "metric": "loss",
             "value": total_loss / n, "seconds": seconds}
        )
        for name in ("accuracy", "macro_f1", "binary_f1"):
            history.append(
                {"fold": fold, "epoch": epoch, "split": "dev", "metric": name,
                 "value": metric_of(report, name), "seconds": seconds}
            )
        if value > best_value:
            best_value = value
            best_state = model.state_arrays()
            best_report = report
            best_epoch = epoch

    best_report.seconds_per_epoch = float(np.mean(epoch_seconds))
    return best_state, best_report, best_epoch, history, best_report.seconds_per_epoch


def train_run(
    corpus: LabeledCorpus,
    sam_cfg: SamConfig,
    train_cfg: TrainConfig,
    pooling: str = "mean",
    emb_seqs: list[tuple[np.ndarray, int]] | None = None,
) -> TrainResult:
    """Train one model per fold and keep the best by dev metric.

    Table mode builds a vocabulary from each fold's training split;
    precomputed mode (``emb_seqs``) trains the attention stage and head on
    fixed vectors. ``folds=1`` trains once against a held-out fifth of the
    data. Deterministic for a fixed seed; a fold whose loss diverges is
    reported and skipped, not fatal.
    """
    if len(corpus) == 0:
        raise ConfigError("empty dataset")
    metric = metric_name_for(corpus.num_classes)
    # folds=1 trains once against a held-out fifth (fold 0 of an internal 5-fold)
    k = 5 if train_cfg.folds == 1 else train_cfg.folds
    assignment = kfold_split(corpus, k, train_cfg.seed)
    fold_ids = [0] if train_cfg.folds == 1 else list(range(train_cfg.folds))

    all_embs = None
    if emb_seqs is not None:
        all_embs = encode_embeddings(emb_seqs, sam_cfg.max_len)

    outcomes: list[FoldOutcome] = []
    history: list[dict] = []
    best_fold_value = -np.inf
    best_model: Model | None = None
    seconds: list[float] = []

    for fold in fold_ids:
        train_idx, dev_idx = train_dev_indices(assignment, fold)
        rng = np.random.default_rng([train_cfg.seed, fold])
        if all_embs is not None:
            model = init_model(sam_cfg, corpus.num_classes, pooling, rng, vocab=None)
            train_batch = take(all_embs, train_idx)
            dev_batch = take(all_embs, dev_idx)
        else:
            vocab = Vocab.build(corpus.subset(train_idx).texts())
            model = init_model(sam_cfg, corpus.num_classes, pooling, rng, vocab=vocab)
            train_batch = encode_texts(corpus.subset(train_idx), vocab, sam_cfg.max_len)
            dev_batch = encode_texts(corpus.subset(dev_idx), vocab, sam_cfg.max_len)
        try:
            best_state, report, best_epoch, fold_history, spe = _train_single(
                model, train_batch, dev_batch, train_cfg, fold, rng, metric
            )
        except NumericError:
            outcomes.append(FoldOutcome(fold=fold, report=None, best_epoch=0, diverged=True))
            continue
        model.load_state_arrays(best_state)
        history.extend(fold_history)
        outcomes.append(FoldOutcome(fold=fold, report=report, best_epoch=best_epoch))
        seconds.append(spe)
        if metric_of(report, metric) > best_fold_value:
            best_fold_value = metric_of(report, metric)
            best_model = model

    completed = [fo for fo in outcomes if not fo.diverged]
    if not completed:
        raise NumericError("every fold diverged")
    mean_metric = float(np.mean([metric_of(fo.report, metric) for fo in completed]))
    return TrainResult(
        model=best_model,
        metric_name=metric,
        mean_metric=mean_metric,
        fold_outcomes=outcomes,
        history=history,
        seconds_per_epoch=float(np.mean(seconds)),
    )


# Setting name -> config overrides, in emission order.
ABLATION_SETTINGS: dict[str, dict] = {
    "baseline": {"fam_enabled": False, "tam_enabled": False},
    "-FAM": {"fam_enabled": False, "tam_enabled": True},
    "-TAM": {"fam_enabled": True, "tam_enabled": False},
    "TAM+FAM": {"order": Order.TAM_THEN_FAM},
    "delta=0.1": {"delta": 0.1},
    "SAM": {},
}


@dataclass
class AblationRow:
    setting: str
    metric_name: str
    metric: float | None
    seconds_per_epoch: float | None
    result: TrainResult | None
    diverged: bool = False


def ablation_suite(
    corpus: LabeledCorpus,
    base_cfg: SamConfig,
    train_cfg: TrainConfig,
    settings: list[str] | None = None,
    pooling: str = "mean",
) -> list[AblationRow]:
    """One trained row per setting, identical seeds throughout."""
    names = list(ABLATION_SETTINGS) if settings is None else list(settings)
    unknown = [s for s in names if s not in ABLATION_SETTINGS]
    if unknown:
        raise ConfigError(
            f"unknown setting(s) {unknown}; valid settings: {list(ABLATION_SETTINGS)}"
        )
    rows: list[AblationRow] = []
    for name in names:
        cfg = replace(base_cfg, **ABLATION_SETTINGS[name])
        try:
            result = train_run(corpus, cfg, train_cfg, pooling=pooling)
        except NumericError:
            rows.append(AblationRow(name, metric_name_for(corpus.num_classes), None, None, None, True))
            continue
        rows.append(
            AblationRow(
                setting=name,
                metric_name=result.metric_name,
                metric=result.mean_metric,
                seconds_per_epoch=result.seconds_per_epoch,
                result=result,
            )
        )
    return rows


@dataclass
class SweepPoint:
    delta: float
    metric: float
    max_gate: float


def default_delta_grid(start: float = 0.0, stop: float = 0.8, step: float = 0.05) -> list[float]:
    if step <= 0:
        raise ConfigError(f"grid step must be positive, got {step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def delta_sweep(
    corpus: LabeledCorpus,
    base_cfg: SamConfig,
    train_cfg: TrainConfig,
    deltas: list[float],
    pooling: str = "mean",
) -> list[SweepPoint]:
    """Train once per threshold value with a shared seed; also record the
    largest surviving feature-gate entry seen on a probe batch."""
    if any(not 0.0 <= d <= 1.0 for d in deltas):
        raise ConfigError("all sweep deltas must lie in [0, 1]")
    if sorted(deltas) != list(deltas):
        raise ConfigError("sweep deltas must be sorted ascending")
    points: list[SweepPoint] = []
    for delta in deltas:
        cfg = replace(base_cfg, delta=float(delta))
        result = train_run(corpus, cfg, train_cfg, pooling=pooling)
        probe = corpus.subset(range(min(len(corpus), 64)))
        batch = encode_texts(probe, result.model.vocab, cfg.max_len)
        with no_grad():
            _, trace = result.model.forward(batch)
        points.append(
            SweepPoint(delta=float(delta), metric=result.mean_metric,
                       max_gate=float(trace.fam_map.max()))
        )
    return points
