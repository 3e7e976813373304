"""Supervised training, evaluation and masked pretraining loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import apply_params, load_checkpoint, save_checkpoint
from .config import ConfigFileError, RunConfig
from .losses import VOID, DataError, check_labels, context_labels, loss_terms
from .metrics import MetricAccumulator, MetricReport
from .model import CASWiT
from .optim import AdamW, NumericError, cosine_lr
from .ssl import MaskSpec, SSLModel, pretrain_forward
from .tensor import Tensor
from .tiling import TileDataset, TilePair

log = logging.getLogger("caswit")


# ---------------------------------------------------------------------------
# batching and augmentation
# ---------------------------------------------------------------------------


def labelled(pairs: list[TilePair]) -> list[TilePair]:
    return [p for p in pairs if p.labels is not None]


def validate_pairs(pairs: list[TilePair], num_classes: int) -> None:
    for p in pairs:
        try:
            check_labels(p.labels, num_classes)
        except DataError as exc:
            raise DataError(f"tile {p.tile_id}: {exc}") from exc


def augment(hr, lr, labels, rng: np.random.Generator, flips: bool = True, jitter: float = 0.0):
    """Same random flip / 90-degree rotation on all three maps, brightness jitter on the images.

    The LR context is centred on the HR tile, so any symmetry of the square
    keeps the pair co-registered.
    """
    if flips:
        k = int(rng.integers(0, 4))
        hr, lr = np.rot90(hr, k), np.rot90(lr, k)
        labels = None if labels is None else np.rot90(labels, k)
        if rng.random() < 0.5:
            hr, lr = hr[:, ::-1], lr[:, ::-1]
            labels = None if labels is None else labels[:, ::-1]
    if jitter > 0:
        scale = np.float32(1 + rng.uniform(-jitter, jitter))
        hr, lr = np.clip(hr * scale, 0, 1), np.clip(lr * scale, 0, 1)
    copy = np.ascontiguousarray
    return copy(hr), copy(lr), None if labels is None else copy(labels)


def stack_batch(pairs: list[TilePair], rng: np.random.Generator | None = None, flips=False, jitter=0.0):
    hrs, lrs, labs = [], [], []
    for p in pairs:
        hr, lr, lab = p.hr, p.lr, p.labels
        if rng is not None and (flips or jitter > 0):
            hr, lr, lab = augment(hr, lr, lab, rng, flips, jitter)
        hrs.append(hr)
        lrs.append(lr)
        labs.append(lab)
    labels = None if labs[0] is None else np.stack(labs).astype(np.int64)
    return np.stack(hrs), np.stack(lrs), labels


def batches(n: int, batch: int, rng: np.random.Generator):
    """Endless stream of index batches; each epoch is a fresh permutation, last batch may be short."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch):
            yield order[i:i + batch]


def steps_per_epoch(n: int, batch: int) -> int:
    return math.ceil(n / batch)


# ---------------------------------------------------------------------------
# supervised
# ---------------------------------------------------------------------------


@dataclass
class StepLog:
    step: int
    loss: float
    l_hr: float
    l_lr: float | None
    lr: float


@dataclass
class TrainResult:
    model: CASWiT
    optimizer: AdamW
    history: list = field(default_factory=list)
    reports: list = field(default_factory=list)


def make_optimizer(model, cfg: RunConfig) -> AdamW:
    return AdamW(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(model: CASWiT, opt: AdamW, hr, lr, labels, alpha: float, lr_now: float, clip: float = 0.0) -> StepLog:
    """One optimisation step on a batch; raises NumericError before touching weights on NaN."""
    model.train()
    with_aux = alpha > 0
    logits_hr, logits_lr = model(hr, lr, with_aux=with_aux)
    lr_labels = context_labels(labels, lr.shape[1:3]) if with_aux else None
    total, l_hr, l_lr = loss_terms(logits_hr, logits_lr, labels, alpha, lr_labels)
    value = float(total.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    opt.zero_grad()
    total.backward()
    if clip > 0:
        opt.clip_grad_norm(clip)
    opt.state.lr = lr_now
    opt.step()
    return StepLog(opt.state.t, value, float(l_hr.data), None if l_lr is None else float(l_lr.data), lr_now)


def fit(model: CASWiT, pairs: list[TilePair], cfg: RunConfig, total_steps: int, opt: AdamW | None = None,
        on_step=None, on_epoch=None) -> TrainResult:
    """Core loop: ``total_steps`` cosine-scheduled AdamW steps over shuffled batches of ``pairs``.

    ``on_step(log)`` may return True to stop early; ``on_epoch(epoch)`` runs
    after every full pass over the data.
    """
    pairs = labelled(pairs)
    if not pairs:
        raise DataError("no labelled tiles to train on")
    validate_pairs(pairs, cfg.num_classes)
    opt = opt or make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    lr_min = min(cfg.lr_min, cfg.lr)
    spe = steps_per_epoch(len(pairs), cfg.batch)
    result = TrainResult(model, opt)
    stream = batches(len(pairs), cfg.batch, rng)
    for step in range(total_steps):
        idx = next(stream)
        hr, lr, labels = stack_batch([pairs[i] for i in idx], rng, cfg.augment, cfg.brightness_jitter)
        lr_now = cosine_lr(step, total_steps, cfg.lr, lr_min)
        entry = train_step(model, opt, Tensor(hr), Tensor(lr), labels, cfg.alpha, lr_now, cfg.clip_grad)
        result.history.append(entry)
        if cfg.log_every and (step % cfg.log_every == 0 or step == total_steps - 1):
            l_lr = "-" if entry.l_lr is None else f"{entry.l_lr:.5f}"
            log.info("step %d L_HR %.5f L_LR %s lr %.3g", entry.step, entry.l_hr, l_lr, entry.lr)
        if on_step is not None and on_step(entry):
            break
        if on_epoch is not None and (step + 1) % spe == 0:
            on_epoch((step + 1) // spe)
    return result


def evaluate_model(model: CASWiT, pairs: list[TilePair], num_classes: int, d: int = 2,
                   absent: str = "skip", batch: int = 8) -> MetricReport:
    """One forward per tile, no aux head, one global confusion matrix."""
    pairs = labelled(pairs)
    validate_pairs(pairs, num_classes)
    model.eval()
    acc = MetricAccumulator(num_classes, d, absent)
    for i in range(0, len(pairs), batch):
        hr, lr, labels = stack_batch(pairs[i:i + batch])
        acc.update(model.predict(hr, lr), labels)
    return acc.report()


def pixel_accuracy(model: CASWiT, pairs: list[TilePair], classes=None) -> float:
    """Fraction of correctly labelled pixels, optionally restricted to ground truth in ``classes``."""
    pairs = labelled(pairs)
    hr, lr, labels = stack_batch(pairs)
    model.eval()
    pred = model.predict(hr, lr)
    keep = labels != VOID
    if classes is not None:
        keep &= np.isin(labels, list(classes))
    return float((pred[keep] == labels[keep]).mean())


def build_model(cfg: RunConfig) -> CASWiT:
    model = CASWiT(cfg.model_config(), seed=cfg.seed)
    if cfg.checkpoint:
        ckpt = load_checkpoint(cfg.checkpoint)
        report = apply_params(ckpt, model, cfg.init_mode)
        log.info("initialised %d tensors from %s (%d skipped)", len(report["loaded"]), cfg.checkpoint,
                 len(report["skipped"]))
    return model


def _dataset(path: str, what: str) -> TileDataset:
    if not path:
        raise ConfigFileError(f"{what} is required for this mode")
    return TileDataset.from_manifest(path)


def train(cfg: RunConfig) -> TrainResult:
    pairs = labelled(_dataset(cfg.manifest, "manifest").pairs())
    val = labelled(_dataset(cfg.val_manifest, "val_manifest").pairs()) if cfg.val_manifest else []
    model = build_model(cfg)
    total = cfg.max_steps or cfg.epochs * steps_per_epoch(len(pairs), cfg.batch)
    reports = []

    def on_epoch(epoch: int) -> None:
        if val:
            rep = evaluate_model(model, val, cfg.num_classes, cfg.boundary_radius, cfg.biou_absent)
            reports.append(rep)
            log.info("epoch %d val mIoU %.4f mF1 %.4f mBIoU %.4f", epoch, rep.miou, rep.mf1, rep.mbiou)
            if cfg.out:
                rep.write(Path(cfg.out).with_suffix(f".epoch{epoch}.txt"))

    result = fit(model, pairs, cfg, total, on_epoch=on_epoch)
    result.reports = reports
    if cfg.out:
        save_checkpoint(cfg.out, model, result.optimizer, cfg.to_dict())
    return result


def check_class_count(model: CASWiT, pairs: list[TilePair]) -> None:
    k = model.cfg.num_classes
    for p in labelled(pairs):
        valid = p.labels[p.labels != VOID]
        if valid.size and int(valid.max()) >= k:
            raise ConfigFileError(f"tile {p.tile_id} has class {int(valid.max())} but the model predicts {k} classes")


def evaluate(cfg: RunConfig) -> MetricReport:
    if not cfg.checkpoint:
        raise ConfigFileError("checkpoint is required for eval")
    model = build_model(cfg)
    pairs = _dataset(cfg.manifest, "manifest").pairs()
    check_class_count(model, pairs)
    report = evaluate_model(model, pairs, cfg.num_classes, cfg.boundary_radius, cfg.biou_absent)
    if cfg.out:
        report.write(cfg.out)
    return report


# ---------------------------------------------------------------------------
# masked pretraining
# ---------------------------------------------------------------------------


def pretrain_fit(model: SSLModel, pairs: list[TilePair], cfg: RunConfig, total_steps: int,
                 opt: AdamW | None = None, on_step=None) -> list:
    """Masked-reconstruction steps; ``total_steps`` stands in for an epoch count."""
    opt = opt or make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    lr_min = min(cfg.lr_min, cfg.lr)
    stream = batches(len(pairs), cfg.batch, rng)
    sc = model.stream_cfg
    history = []
    model.train()
    for step in range(total_steps):
        idx = next(stream)
        hr, lr, _ = stack_batch([pairs[i] for i in idx], rng, cfg.augment, cfg.brightness_jitter)
        hr_grid = (hr.shape[1] // sc.patch_size, hr.shape[2] // sc.patch_size)
        lr_grid = (lr.shape[1] // sc.patch_size, lr.shape[2] // sc.patch_size)
        masks = MaskSpec.sample(hr_grid, lr_grid, cfg.r_hr, cfg.r_lr, seed=cfg.seed * 1_000_003 + step * len(idx),
                                batch=len(idx), lr_rule=cfg.lr_mask_rule)
        loss = pretrain_forward(model, Tensor(hr), Tensor(lr), masks)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value}")
        opt.zero_grad()
        loss.backward()
        if cfg.clip_grad > 0:
            opt.clip_grad_norm(cfg.clip_grad)
        opt.state.lr = cosine_lr(step, total_steps, cfg.lr, lr_min)
        opt.step()
        history.append(value)
        if cfg.log_every and (step % cfg.log_every == 0 or step == total_steps - 1):
            log.info("step %d L_SSL %.5f lr %.3g", step + 1, value, opt.state.lr)
        if on_step is not None and on_step(step, value):
            break
    return history


def pretrain(cfg: RunConfig) -> tuple[SSLModel, list]:
    pairs = _dataset(cfg.manifest, "manifest").pairs()
    model = SSLModel(cfg.model_config(), seed=cfg.seed)
    total = cfg.max_steps or cfg.epochs * steps_per_epoch(len(pairs), cfg.batch)
    history = pretrain_fit(model, pairs, cfg, total)
    if cfg.out:
        save_checkpoint(cfg.out, model, None, cfg.to_dict())
    return model, history


# ---------------------------------------------------------------------------
# inspection
# ---------------------------------------------------------------------------


def attention_map(model: CASWiT, pair: TilePair, stage: int, query_pixel: tuple) -> np.ndarray:
    """Cross-attention of the HR token under ``query_pixel`` (row, col) at ``stage`` over the LR grid."""
    from .fusion import export_attention_maps
    from .tensor import UsageError, no_grad

    fusion = model.backbone.fusion
    if not 1 <= stage <= 4 or fusion.blocks[stage - 1] is None:
        raise UsageError(f"fusion is not enabled at stage {stage}")
    h, w = pair.hr.shape[:2]
    qy, qx = query_pixel
    if not (0 <= qy < h and 0 <= qx < w):
        raise UsageError(f"query pixel {query_pixel} outside the {h}x{w} tile")
    enc = model.backbone
    model.eval()
    with no_grad():
        x_hr = enc.hr_encoder.embed(Tensor(pair.hr[None]))
        x_lr = enc.lr_encoder.embed(Tensor(pair.lr[None]))
        for s in range(stage):
            x_hr = enc.hr_encoder.run_stage(s, x_hr)
            x_lr = enc.lr_encoder.run_stage(s, x_lr)
            if s + 1 < stage:
                x_hr = fusion.fuse_stage(x_hr, x_lr, s + 1)
    stride = h // x_hr.shape[1]
    gw = x_hr.shape[2]
    return export_attention_maps(fusion.blocks[stage - 1], x_hr, x_lr, (qy // stride) * gw + qx // stride)
