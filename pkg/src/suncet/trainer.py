"""Pre-training, fine-tuning, linear evaluation and top-1 evaluation."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import accounting, optim
from . import rng as rngmod
from .accounting import FlopsLedger, macs_affine, macs_mlp, macs_similarity
from .config import TrainConfig
from .data import (
    AugmentConfig,
    Dataset,
    LabelSplit,
    SupervisedBatchSpec,
    SupervisedLoader,
    UnsupervisedLoader,
    augment_rows,
)
from .errors import DivergenceError, EmptySupervisionError, ShapeError
from .losses import combined_loss, ntxent, softmax_cross_entropy, suncet
from .model import (
    Checkpoint,
    ClassifierHead,
    ModelParams,
    backward,
    backward_encoder,
    checkpoint_bytes,
    embed,
    encode,
    init_params,
    mlp_specs,
    save_checkpoint,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "step", "loss_inst", "loss_suncet", "lr", "macs_cum",
                  "flops_cum", "eval_top1", "wallclock_s"]
CLASSIFIER_HEADER = ["epoch", "step", "loss_ce", "lr", "macs_cum", "flops_cum",
                     "train_top1", "eval_top1", "wallclock_s"]


@dataclass
class MetricsRow:
    epoch: int
    step: int
    loss_inst: float
    loss_suncet: float | None
    lr: float
    macs_cum: int
    flops_cum: int
    eval_top1: float | None = None
    wallclock_s: float | None = None


@dataclass
class ClassifierRow:
    epoch: int
    step: int
    loss_ce: float
    lr: float
    macs_cum: int
    flops_cum: int
    train_top1: float
    eval_top1: float | None = None
    wallclock_s: float | None = None


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows, header=METRICS_HEADER) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(getattr(r, k)) for k in header])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV into dicts; blank cells become ``None``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        row = {}
        for k, v in r.items():
            if v == "" or v is None:
                row[k] = None
            elif k in ("epoch", "step", "macs_cum", "flops_cum"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out


def build_model(cfg: TrainConfig, d_in: int, seed: int | None = None) -> ModelParams:
    enc = mlp_specs((d_in, *cfg.encoder_dims), final_activation="relu")
    proj = mlp_specs((cfg.encoder_dims[-1], *cfg.proj_dims), final_activation="identity")
    return init_params(enc, proj, cfg.seed if seed is None else seed)


def update_macs(params: ModelParams, rows: int) -> int:
    """Forward MACs for pushing ``rows`` inputs through encoder, head and loss."""
    return (macs_mlp(rows, params.encoder) + macs_mlp(rows, params.projection)
            + macs_similarity(rows, params.d_proj))


# ----------------------------------------------------------------- evaluation

def predict(params: ModelParams, classifier: ClassifierHead, x: np.ndarray) -> np.ndarray:
    h, _ = encode(params, x)
    # argmax returns the first maximum, i.e. ties go to the lowest class id
    return np.argmax(classifier.logits(h), axis=1)


def evaluate(params: ModelParams, classifier: ClassifierHead | None, ds_test: Dataset) -> float:
    """Top-1 accuracy of ``classifier`` on encoder features of ``ds_test``."""
    if classifier is None:
        classifier = ClassifierHead.zeros(ds_test.n_classes, params.d_repr)
    if classifier.weights.shape[1] != params.d_repr:
        raise ShapeError(
            f"classifier width {classifier.weights.shape[1]} != encoder output {params.d_repr}"
        )
    pred = predict(params, classifier, ds_test.features)
    return float(np.mean(pred == ds_test.labels))


# --------------------------------------------------------- linear evaluation

@dataclass
class ClassifierResult:
    params: ModelParams
    classifier: ClassifierHead
    rows: list[ClassifierRow]
    ledger: FlopsLedger


def _labeled(ds: Dataset, split: LabelSplit) -> np.ndarray:
    idx = split.labeled_indices()
    if idx.size == 0:
        raise EmptySupervisionError("labeled set is empty")
    return idx


def _minibatches(n: int, batch: int, seed: int, tag: int, epoch: int):
    perm = rngmod.stream(seed, tag, epoch).permutation(n)
    for start in range(0, n, batch):
        yield perm[start:start + batch]


def _classifier_grads(clf: ClassifierHead, h: np.ndarray, y: np.ndarray):
    loss, g = softmax_cross_entropy(clf.logits(h), y)
    return loss, g.T @ h, g.sum(axis=0), g @ clf.weights


def linear_eval(
    ds: Dataset,
    split: LabelSplit,
    params: ModelParams,
    cfg: TrainConfig,
    ds_test: Dataset | None = None,
    augment: AugmentConfig | None = None,
    seed: int | None = None,
) -> ClassifierResult:
    """Train a zero-initialized linear classifier on the frozen encoder.

    Nesterov SGD without weight decay under the step-decay schedule
    ``cfg.lineval_lrs`` / ``cfg.lineval_milestones`` (counted in epochs).
    """
    seed = cfg.seed if seed is None else seed
    augment = augment or AugmentConfig()
    idx = _labeled(ds, split)
    x, y = ds.features[idx], ds.labels[idx]
    clf = ClassifierHead.zeros(ds.n_classes, params.d_repr)
    sched = optim.StepDecaySchedule(cfg.lineval_lrs, cfg.lineval_milestones)
    state = optim.OptimState(optim.SGD_NESTEROV, momentum=cfg.momentum, weight_decay=0.0)
    static = augment == AugmentConfig()
    feats = encode(params, x)[0] if static else None
    ledger = FlopsLedger()
    rows: list[ClassifierRow] = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.lineval_epochs):
        lr = sched.lr_at_epoch(epoch)
        losses = []
        for k, b in enumerate(_minibatches(len(idx), cfg.lineval_batch, seed, rngmod.PROBE, epoch)):
            if static:
                h = feats[b]
            else:
                gen = rngmod.stream(seed, rngmod.FINETUNE, step)
                h = encode(params, augment_rows(x[b], augment, gen))[0]
            loss, gw, gb, _ = _classifier_grads(clf, h, y[b])
            tensors = {"classifier.weight": clf.weights, "classifier.bias": clf.bias}
            optim.sgd_nesterov_step(tensors, {"classifier.weight": gw, "classifier.bias": gb},
                                    state, lr)
            ledger.record_update(macs_affine(len(b), params.d_repr, ds.n_classes))
            losses.append(loss)
            step += 1
        if not np.isfinite(losses).all():
            raise DivergenceError(f"linear evaluation diverged at epoch {epoch}, step {step}")
        train_acc = float(np.mean(np.argmax(clf.logits(feats if static else encode(params, x)[0]),
                                            axis=1) == y))
        rows.append(ClassifierRow(
            epoch + 1, step, float(np.mean(losses)), lr, ledger.macs_cum, ledger.flops_cum,
            train_acc, evaluate(params, clf, ds_test) if ds_test is not None else None,
        ))
    log.debug("linear eval took %.2fs", time.perf_counter() - t0)
    return ClassifierResult(params, clf, rows, ledger)


def probe_accuracy(ds, split, params, cfg, ds_test) -> float:
    """Linear-evaluation top-1 on ``ds_test`` for the current encoder."""
    res = linear_eval(ds, split, params, cfg, ds_test=None)
    return evaluate(params, res.classifier, ds_test)


# -------------------------------------------------------------- fine-tuning

def finetune(
    ds: Dataset,
    split: LabelSplit,
    checkpoint: Checkpoint,
    cfg: TrainConfig,
    ds_test: Dataset | None = None,
    augment: AugmentConfig | None = None,
) -> ClassifierResult:
    """Jointly train the encoder and a zero-initialized linear classifier.

    Nesterov SGD, no weight decay, cosine-annealed lr. The projection head
    is never read or written.
    """
    augment = augment or AugmentConfig()
    idx = _labeled(ds, split)
    params = checkpoint.params.copy()
    params.zero_grad()
    clf = ClassifierHead.zeros(ds.n_classes, params.d_repr)
    steps_per_epoch = -(-len(idx) // cfg.finetune_batch)
    sched = optim.ScheduleConfig(cfg.finetune_lr, cfg.finetune_epochs, steps_per_epoch)
    state = optim.OptimState(optim.SGD_NESTEROV, momentum=cfg.momentum, weight_decay=0.0)
    enc_names = params.names("encoder")
    ledger = FlopsLedger()
    rows: list[ClassifierRow] = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.finetune_epochs):
        losses = []
        for b in _minibatches(len(idx), cfg.finetune_batch, cfg.seed, rngmod.FINETUNE, epoch):
            lr = optim.lr_at(sched, step)
            gen = rngmod.stream(cfg.seed, rngmod.FINETUNE, (1 << 32) + step)
            xb = augment_rows(ds.features[idx[b]], augment, gen)
            h, cache = encode(params, xb)
            loss, gw, gb, dh = _classifier_grads(clf, h, ds.labels[idx[b]])
            if not np.isfinite(loss):
                raise DivergenceError(f"fine-tuning diverged at step {step}")
            backward_encoder(params, cache, dh)
            optim.sgd_nesterov_step(params.tensors, params.grads, state, lr, enc_names)
            optim.sgd_nesterov_step(
                {"classifier.weight": clf.weights, "classifier.bias": clf.bias},
                {"classifier.weight": gw, "classifier.bias": gb}, state, lr)
            params.bump()
            ledger.record_update(macs_mlp(len(b), params.encoder)
                                 + macs_affine(len(b), params.d_repr, ds.n_classes))
            losses.append(loss)
            step += 1
        pred = predict(params, clf, ds.features[idx])
        rows.append(ClassifierRow(
            epoch + 1, step, float(np.mean(losses)), lr, ledger.macs_cum, ledger.flops_cum,
            float(np.mean(pred == ds.labels[idx])),
            evaluate(params, clf, ds_test) if ds_test is not None else None,
        ))
    log.debug("fine-tuning took %.2fs", time.perf_counter() - t0)
    return ClassifierResult(params, clf, rows, ledger)


# -------------------------------------------------------------- pre-training

@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    rows: list[MetricsRow]
    ledger: FlopsLedger
    sup_calls: int = 0


def pretrain(
    ds: Dataset,
    split: LabelSplit,
    cfg: TrainConfig,
    ds_test: Dataset | None = None,
    out_dir=None,
    wallclock: bool = False,
) -> PretrainResult:
    """Semi-supervised contrastive pre-training.

    Each update draws an unsupervised two-view batch from the whole dataset
    for the instance loss and, while ``epoch < suncet_off_epoch``, a
    class-balanced labeled batch for the supervised loss. The two losses are
    summed, back-propagated and applied with one optimizer step. Epochs count
    passes of the unsupervised loader. ``eval_top1`` is a linear-evaluation
    probe on ``ds_test`` every ``eval_every`` epochs and after the last one.
    """
    cfg.validate()
    params = build_model(cfg, ds.d_in)
    loader = UnsupervisedLoader(ds, cfg.unsup_batch, cfg.augment, cfg.seed)
    sup_loader = None
    if cfg.suncet_off_epoch > 0:
        sup_loader = SupervisedLoader(
            ds, split, SupervisedBatchSpec(cfg.sup_classes_per_batch, cfg.sup_samples_per_class),
            cfg.augment, cfg.seed,
        )
        if len(sup_loader.by_class) < cfg.sup_classes_per_batch:
            raise EmptySupervisionError(
                f"labeled split covers {len(sup_loader.by_class)} classes, "
                f"sup_classes_per_batch={cfg.sup_classes_per_batch}"
            )
    sched = optim.ScheduleConfig(
        cfg.base_lr, cfg.epochs, loader.steps_per_epoch, cfg.warmup_epochs,
        cfg.warmup_start_lr, cfg.final_lr,
    )
    state = optim.OptimState(cfg.optimizer, cfg.momentum, cfg.weight_decay, cfg.lars_trust_coeff)
    ledger = FlopsLedger()
    rows: list[MetricsRow] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    step = 0
    t0 = time.perf_counter()
    ck = Checkpoint(params, 0, 0, cfg.seed, 0)
    for epoch in range(cfg.epochs):
        inst_losses, sup_losses = [], []
        use_suncet = epoch < cfg.suncet_off_epoch
        for batch in loader.epoch(epoch):
            lr = optim.lr_at(sched, step)
            z, caches = embed(params, batch.views)
            inst = ntxent(z, batch.partner, cfg.tau)
            macs = update_macs(params, z.shape[0])
            sup = None
            if use_suncet:
                xs, ys = sup_loader.batch(step)
                zs, sup_caches = embed(params, xs)
                sup = suncet(zs, ys, cfg.tau)
                macs += update_macs(params, zs.shape[0])
            total, (g_inst, g_sup) = combined_loss(inst, sup)
            if not np.isfinite(total):
                raise DivergenceError(f"non-finite loss {total} at step {step} (epoch {epoch})")
            backward(params, caches, g_inst)
            if g_sup is not None:
                backward(params, sup_caches, g_sup)
            optim.step(params.tensors, params.grads, state, lr)
            params.bump()
            ledger.record_update(macs)
            inst_losses.append(inst[0])
            if sup is not None:
                sup_losses.append(sup[0])
            step += 1
        top1 = None
        if ds_test is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            top1 = probe_accuracy(ds, split, params, cfg, ds_test)
        rows.append(MetricsRow(
            epoch + 1, step, float(np.mean(inst_losses)),
            float(np.mean(sup_losses)) if sup_losses else None,
            lr, ledger.macs_cum, ledger.flops_cum, top1,
            round(time.perf_counter() - t0, 3) if wallclock else None,
        ))
        ck = Checkpoint(params, step, epoch + 1, cfg.seed, step)
        if out is not None:
            save_checkpoint(ck, out / "checkpoint.snck")
            (out / "metrics.csv").write_text(metrics_csv(rows))
        log.info("epoch %d step %d loss_inst %.4f loss_suncet %s top1 %s", epoch + 1, step,
                 rows[-1].loss_inst, rows[-1].loss_suncet, top1)
    if out is not None:
        save_checkpoint(ck, out / "checkpoint.snck")
        (out / "metrics.csv").write_text(metrics_csv(rows))
    return PretrainResult(ck, rows, ledger, sup_loader.calls if sup_loader else 0)
