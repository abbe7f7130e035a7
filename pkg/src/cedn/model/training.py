"""Minibatch sampling and the Adam training loop."""
from dataclasses import asdict, dataclass
import csv
import json
import os
import sys
import time

import numpy as np

from ..errors import ConfigError, InputError, TrainingError
from ..tensor import Adam, save_tensors
from .loss import weighted_logistic_loss
from .network import predict


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    crop: int = 224
    crops: int = 4
    pos_weight: float = 10.0
    freeze_encoder: bool = False
    seed: int = 0
    # evaluate held-out ODS-F every this many epochs (0 disables)
    val_every: int = 1

    @classmethod
    def paper(cls, **kw):
        return cls(**{"freeze_encoder": True, **kw})

    @classmethod
    def desk(cls, **kw):
        return cls(**{"crop": 64, **kw})

    @classmethod
    def fine_tune(cls, **kw):
        return cls(**{"lr": 1e-5, "epochs": 100, **kw})

    def validate(self, stages=None):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}", stage="train")
        if self.epochs < 1 or self.crops < 1:
            raise ConfigError("epochs and crops must be >= 1", stage="train")
        if stages is not None and self.crop % 2 ** stages:
            raise ConfigError(
                f"crop size {self.crop} is not divisible by 2**{stages} = {2 ** stages}", stage="train"
            )
        return self

    def to_dict(self):
        return asdict(self)


def make_minibatch(image, mask, cfg, rng):
    """``cfg.crops`` random crops plus their horizontal mirrors.

    Returns ``(x, y)`` with shapes (2 * crops, C, crop, crop) and
    (2 * crops, 1, crop, crop); the second half mirrors the first.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if mask.shape != (h, w):
        raise InputError(f"mask {mask.shape} does not match image {(h, w)}")
    k = cfg.crop
    if h < k or w < k:
        raise InputError(f"image {h}x{w} is smaller than the {k}x{k} crop; pad it or lower crop size")
    rows = rng.integers(0, h - k + 1, cfg.crops)
    cols = rng.integers(0, w - k + 1, cfg.crops)
    xs = np.stack([img[r:r + k, c:c + k].transpose(2, 0, 1) for r, c in zip(rows, cols)])
    ys = np.stack([mask[r:r + k, c:c + k][None] for r, c in zip(rows, cols)]).astype(np.float32)
    x = np.concatenate([xs, xs[..., ::-1]])
    y = np.concatenate([ys, ys[..., ::-1]])
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def train_step(net, opt, x, y, cfg, rng):
    prob = net.forward(x, train_mode=True, rng=rng)
    loss, grad = weighted_logistic_loss(prob, y, cfg.pos_weight)
    grads = net.backward(grad, freeze_encoder=cfg.freeze_encoder)
    if cfg.freeze_encoder:
        for name in net.encoder_params:
            grads.pop(name, None)
    opt.step(net.params, grads)
    return loss


def validation_ods(net, val):
    from ..metrics import evaluate_contours

    preds = [predict(net, img) for img, _ in val]
    return evaluate_contours(preds, [g for _, g in val]).ods_f


LOG_FIELDS = ["epoch", "step", "loss", "val_ods_f"]


def train(net, dataset, cfg, val=None, log_path=None, checkpoint_dir=None, rng=None, verbose=False,
          dropout_rng=None):
    """Train on ``dataset`` = [(image HWC in [0, 1], binary contour mask), ...].

    One step per image per epoch, images visited in a fresh random order each
    epoch. ``rng`` drives the image order and crops; dropout masks draw from
    ``dropout_rng`` when given, else from ``rng``. Returns the log as a list
    of dicts (one per epoch, mean loss).
    """
    if not dataset:
        raise InputError("training set is empty")
    cfg.validate(net.cfg.stages)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    drop_rng = dropout_rng if dropout_rng is not None else rng
    opt = Adam(lr=cfg.lr)
    log = []
    if log_path:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_FIELDS)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    step = 0
    t0 = time.time()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in rng.permutation(len(dataset)):
            image, mask = dataset[idx]
            x, y = make_minibatch(image, mask, cfg, rng)
            loss = train_step(net, opt, x, y, cfg, drop_rng)
            step += 1
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch}, step {step}", epoch=epoch, step=step)
            losses.append(loss)
        row = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)), "val_ods_f": ""}
        if val and cfg.val_every and (epoch % cfg.val_every == 0 or epoch == cfg.epochs):
            row["val_ods_f"] = float(validation_ods(net, val))
        log.append(row)
        if log_path:
            with open(log_path, "a", newline="") as fh:
                csv.DictWriter(fh, LOG_FIELDS).writerow(row)
        if checkpoint_dir:
            save_tensors(os.path.join(checkpoint_dir, f"epoch{epoch:03d}.cftn"), net.state_dict())
        if verbose:
            print(f"epoch {epoch:3d} step {step:5d} loss {row['loss']:.4f} val {row['val_ods_f']} "
                  f"({time.time() - t0:.0f}s)", file=sys.stderr)
    return log


def train_config_to_json(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def train_config_from_dict(d):
    try:
        return TrainConfig(**d).validate()
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}", stage="train") from None
