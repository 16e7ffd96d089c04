"""Losses, autoencoder pretraining and joint fine-tuning."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import Snapshot
from .hypergraph import Hypergraph
from .irc import AugmentedIncidence, augment_incidence, build_features, mask_incomplete
from .metrics import confusion_metrics
from .model import (
    GraphBatch,
    HyperDetParams,
    ModelConfig,
    autoencode,
    classify,
    forward,
    make_batch,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: "TrainReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    lr_pretrain: float = 0.01
    lr_finetune: float = 0.005
    l2: float = 5e-4
    pretrain_epochs: int = 200
    finetune_epochs: int = 500
    patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.lr_pretrain <= 0 or self.lr_finetune <= 0:
            raise ValueError("learning rates must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be >= 0")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 1 or self.patience < 1:
            raise ValueError("epoch counts must be positive")


# --- losses ------------------------------------------------------------------


def reconstruction_loss(X: np.ndarray, X_hat: np.ndarray) -> float:
    X, X_hat = np.asarray(X, dtype=float), np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {X_hat.shape}")
    return float(np.sum((X - X_hat) ** 2))


def balance_coefficient(n: int, num_sources: int) -> float:
    if not 0 < num_sources < n:
        raise ValueError(f"need 0 < |s| < n, got |s|={num_sources}, n={n}")
    return num_sources / (n - num_sources)


def _class_index(labels: np.ndarray) -> np.ndarray:
    # column 0 of the probability rows is the source class
    return 1 - np.asarray(labels, dtype=np.int64)


def node_weights(labels: np.ndarray, rho: float) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels == 1, 1.0, rho)


def balanced_ce_loss(probs: np.ndarray, labels: np.ndarray, rho: float) -> float:
    """Sources contribute their cross-entropy in full, non-sources scaled by ``rho``."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    p = probs[np.arange(labels.size), _class_index(labels)]
    ce = -np.log(np.clip(p, ad.PROB_CLAMP, 1 - ad.PROB_CLAMP))
    return float(np.sum(node_weights(labels, rho) * ce))


def total_loss(l_ae: float, l_af: float, params: Sequence[np.ndarray], lam: float) -> float:
    return float(l_ae + l_af + lam * sum(float(np.sum(np.square(p))) for p in params))


# --- data preparation --------------------------------------------------------


@dataclass
class Sample:
    features: np.ndarray
    incidence: AugmentedIncidence
    labels: np.ndarray


def prepare_sample(
    g: Hypergraph,
    snapshot: Snapshot,
    cfg: ModelConfig,
    mask_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Sample:
    feats = build_features(g, snapshot, cfg.k)
    if mask_rate > 0:
        feats = mask_incomplete(feats, mask_rate, rng if rng is not None else np.random.default_rng(0))
    return Sample(feats.values, augment_incidence(g, snapshot, cfg.dynamic_edges), snapshot.labels)


@dataclass
class Batch:
    graph: GraphBatch
    X: Tensor
    labels: np.ndarray
    ce_weights: np.ndarray
    samples: list[Sample] = field(repr=False)

    @property
    def size(self) -> int:
        return self.graph.num_graphs


def collate(samples: Sequence[Sample]) -> Batch:
    """Disjoint union; loss weights average the per-snapshot losses."""
    if not samples:
        raise ValueError("empty batch")
    graph = make_batch([s.incidence for s in samples])
    X = Tensor(np.vstack([s.features for s in samples]))
    labels = np.concatenate([s.labels for s in samples])
    S = len(samples)
    weights = []
    for s in samples:
        rho = balance_coefficient(s.labels.size, int(s.labels.sum()))
        weights.append(node_weights(s.labels, rho) / S)
    return Batch(graph, X, labels, np.concatenate(weights), list(samples))


# --- optimizer ---------------------------------------------------------------


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# --- loss graphs ---------------------------------------------------------------


def batch_losses(params: HyperDetParams, batch: Batch, lam: float) -> tuple[Tensor, Tensor | None, Tensor]:
    """(total, L_ae or None, L_af) as recorded tensors for one batch."""
    out = forward(batch.X, batch.graph, params)
    l_af = ad.weighted_ce(out.probs, _class_index(batch.labels), batch.ce_weights)
    total = l_af
    l_ae = None
    if out.recon is not None:
        l_ae = ad.scale(ad.mse(out.recon, batch.X), 1.0 / batch.size)
        total = ad.add(total, l_ae)
    if lam > 0:
        total = ad.add(total, ad.scale(ad.l2_penalty(params.parameters()), lam))
    return total, l_ae, l_af


def predict(params: HyperDetParams, batch: Batch) -> list[np.ndarray]:
    """Per-snapshot probability rows (column 0 = source)."""
    with ad.no_grad():
        probs = forward(batch.X, batch.graph, params).probs.data
    return [probs[batch.graph.graph_slice(i)] for i in range(batch.size)]


def mean_f1(params: HyperDetParams, batch: Batch) -> float:
    scores = []
    for i, p in enumerate(predict(params, batch)):
        labels = batch.samples[i].labels
        scores.append(confusion_metrics(classify(p), np.flatnonzero(labels), labels.size)["f1"])
    return float(np.mean(scores))


# --- training loops ------------------------------------------------------------


@dataclass
class TrainReport:
    pretrain_losses: list[float] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = float("nan")
    pretrain_skipped: bool = False
    wall_clock: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def _check_finite(value: float, what: str, report: TrainReport) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite {what}", report)


def pretrain_autoencoder(
    train: Batch, params: HyperDetParams, cfg: TrainConfig, report: TrainReport | None = None
) -> list[float]:
    """Minimize mean reconstruction loss; leaves the best-loss weights in ``params``."""
    report = report if report is not None else TrainReport()
    ae = params.autoencoder_parameters()
    opt = Adam(ae, cfg.lr_pretrain, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best, best_state = math.inf, [p.data.copy() for p in ae]
    losses = report.pretrain_losses
    for epoch in range(cfg.pretrain_epochs):
        opt.zero_grad()
        with ad.tape():
            recon = autoencode(train.X, train.graph, params)
            loss = ad.scale(ad.mse(recon, train.X), 1.0 / train.size)
            ad.backward(loss)
        value = loss.item()
        _check_finite(value, f"reconstruction loss at pretrain epoch {epoch}", report)
        losses.append(value)
        if value < best:
            best, best_state = value, [p.data.copy() for p in ae]
        opt.step()
    with ad.no_grad():
        final = ad.mse(autoencode(train.X, train.graph, params), train.X).item() / train.size
    if final < best:
        best_state = [p.data.copy() for p in ae]
    for p, s in zip(ae, best_state):
        p.data[...] = s
    opt.zero_grad()
    return losses


def finetune(
    train: Batch, val: Batch, params: HyperDetParams, cfg: TrainConfig, report: TrainReport | None = None
) -> TrainReport:
    """Jointly optimize all parameters; keeps the checkpoint with the best validation F1.

    Ties on F1 go to the lower validation classification loss.
    """
    report = report if report is not None else TrainReport()
    all_params = params.parameters()
    opt = Adam(all_params, cfg.lr_finetune, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def val_score() -> tuple[float, float]:
        with ad.no_grad():
            probs = forward(val.X, val.graph, params).probs
            val_af = ad.weighted_ce(probs, _class_index(val.labels), val.ce_weights).item()
        f1s = []
        for i in range(val.size):
            p = probs.data[val.graph.graph_slice(i)]
            labels = val.samples[i].labels
            f1s.append(confusion_metrics(classify(p), np.flatnonzero(labels), labels.size)["f1"])
        return float(np.mean(f1s)), val_af

    best_key = None
    best_state = params.state()
    stale = 0
    for epoch in range(cfg.finetune_epochs):
        opt.zero_grad()
        with ad.tape():
            total, l_ae, l_af = batch_losses(params, train, cfg.l2)
            ad.backward(total)
        value = total.item()
        _check_finite(value, f"total loss at fine-tune epoch {epoch}", report)
        opt.step()
        f1, val_af = val_score()
        report.epochs.append(
            {
                "epoch": epoch,
                "l_ae": None if l_ae is None else l_ae.item(),
                "l_af": l_af.item(),
                "total": value,
                "val_f1": f1,
                "val_l_af": val_af,
            }
        )
        key = (f1, -val_af)
        if best_key is None or key > best_key:
            best_key, best_state = key, params.state()
            report.best_epoch, report.best_val_f1 = epoch, f1
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    params.load_state(best_state)
    opt.zero_grad()
    return report


def train_hyperdet(
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
) -> tuple[HyperDetParams, TrainReport]:
    cfg.validate()
    start = time.perf_counter()
    params = HyperDetParams(replace(model_cfg, init_seed=cfg.seed))
    train_batch, val_batch = collate(train_samples), collate(val_samples)
    report = TrainReport()
    if model_cfg.use_autoencoder and cfg.pretrain_epochs > 0:
        pretrain_autoencoder(train_batch, params, cfg, report)
        log.info("pretrain: %d epochs, final L_ae %.4g", cfg.pretrain_epochs, report.pretrain_losses[-1])
    else:
        report.pretrain_skipped = True
        log.info("pretraining skipped (no autoencoder in this variant)")
    finetune(train_batch, val_batch, params, cfg, report)
    report.wall_clock = time.perf_counter() - start
    log.info("fine-tune: best epoch %d, val F1 %.4f", report.best_epoch, report.best_val_f1)
    return params, report
