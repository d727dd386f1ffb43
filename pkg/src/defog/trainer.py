"""Alternating adversarial training with checkpointing and ablations.

Every source of randomness is drawn from a stream named by (seed, purpose,
epoch), so an interrupted run restored from its checkpoint consumes exactly
the same numbers as an uninterrupted one.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .kernel import (
    Adam,
    Tensor,
    load_checkpoint,
    mse,
    no_grad,
    restore_checkpoint,
    save_checkpoint,
)
from .losses import LossWeights, PyramidConfig, adv_loss_G, loss_D, rec_loss
from .metrics import evaluate
from .network import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec
from .schema import ChannelSchema

__all__ = [
    "TrainConfig",
    "TrainReport",
    "apply_ablation",
    "predict_batches",
    "stream_rng",
    "train",
    "checkpoint_paths",
]

# purpose tags for the named rng streams
_STREAM_GEN_INIT = 1
_STREAM_DISC_INIT = 2
_STREAM_ORDER = 3
_STREAM_DROPOUT = 4

LOG_COLUMNS = ("epoch", "loss_d", "loss_g", "loss_rec", "loss_adv", "val_mse")


def stream_rng(seed: int, purpose: int, *rest: int) -> np.random.Generator:
    """Independent generator for one named purpose (and optional epoch)."""
    return np.random.default_rng(np.random.SeedSequence((seed, purpose) + rest))


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training loop, ablation switches included."""

    epochs: int = 1000
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    pyramid: PyramidConfig | None = None
    drop_partial: bool = False
    drop_accumulated: bool = False
    drop_adv: bool = False
    drop_rec: bool = False
    plain_l2: bool = False
    drop_obconn: bool = False
    seed: int = 0
    val_every: int = 10
    checkpoint_every: int = 50

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.drop_partial and self.drop_accumulated:
            raise ValueError(
                "drop_partial and drop_accumulated together leave no input")

    def to_dict(self) -> dict:
        d = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weights": {"rec": self.weights.rec, "adv": self.weights.adv},
            "drop_partial": self.drop_partial,
            "drop_accumulated": self.drop_accumulated,
            "drop_adv": self.drop_adv,
            "drop_rec": self.drop_rec,
            "plain_l2": self.plain_l2,
            "drop_obconn": self.drop_obconn,
            "seed": self.seed,
            "val_every": self.val_every,
            "checkpoint_every": self.checkpoint_every,
        }
        if self.pyramid is not None:
            d["pyramid"] = {"resolution": self.pyramid.resolution}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        kwargs = {}
        if "weights" in d:
            kwargs["weights"] = LossWeights(**d.pop("weights"))
        if "pyramid" in d:
            kwargs["pyramid"] = PyramidConfig(**d.pop("pyramid"))
        try:
            return cls(**d, **kwargs)
        except TypeError as exc:
            raise DataError(f"bad train config: {exc}") from exc


@dataclass
class TrainReport:
    """Per-epoch history plus the trained networks."""

    epochs_run: int
    start_epoch: int
    loss_d: list[float]
    loss_g: list[float]
    loss_rec: list[float]
    loss_adv: list[float]
    val_epochs: list[int]
    val_mse: list[float]
    best_epoch: int | None
    best_val_mse: float | None
    checkpoint_stem: str | None
    generator: Generator
    discriminator: Discriminator

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "start_epoch": self.start_epoch,
            "loss_d": self.loss_d,
            "loss_g": self.loss_g,
            "loss_rec": self.loss_rec,
            "loss_adv": self.loss_adv,
            "val_epochs": self.val_epochs,
            "val_mse": self.val_mse,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "checkpoint_stem": self.checkpoint_stem,
        }


def apply_ablation(cfg: TrainConfig, schema: ChannelSchema,
                   x: np.ndarray) -> np.ndarray:
    """Zero the input blocks named by the config; shape is preserved."""
    if not (cfg.drop_partial or cfg.drop_accumulated):
        return x
    out = x.copy()
    if cfg.drop_partial:
        out[..., : schema.c_partial, :, :] = 0.0
    if cfg.drop_accumulated:
        out[..., schema.c_partial :, :, :] = 0.0
    return out


def checkpoint_paths(stem: str) -> tuple[str, str]:
    """A checkpoint is a pair of files: generator and discriminator."""
    return stem + ".gen.ckpt", stem + ".disc.ckpt"


def _save_pair(stem: str, gen: Generator, disc: Discriminator,
               adam_g: Adam, adam_d: Adam, meta: dict) -> None:
    gen_path, disc_path = checkpoint_paths(stem)
    save_checkpoint(gen_path, gen.store, adam=adam_g, meta=meta)
    save_checkpoint(disc_path, disc.store, adam=adam_d,
                    meta={"epoch": meta["epoch"]})


def _guard(value: Tensor, what: str, epoch: int, batch: int) -> float:
    v = float(value.data)
    if not np.isfinite(v):
        raise NumericError(
            f"non-finite {what} at epoch {epoch}, batch {batch}; aborting")
    return v


def predict_batches(gen: Generator, x: np.ndarray, chunk: int = 64,
                    use_observation: bool = True) -> np.ndarray:
    """Eval-mode predictions over a frame stack, in bounded-memory chunks."""
    preds = []
    with no_grad():
        for lo in range(0, x.shape[0], chunk):
            out = gen.forward(Tensor(x[lo:lo + chunk]), mode="eval",
                              use_observation=use_observation)
            preds.append(out.data)
    return np.concatenate(preds, axis=0)


def _validation_mse(gen: Generator, cfg: TrainConfig, schema: ChannelSchema,
                    dataset) -> float:
    xbar, xtilde, y = dataset.split_arrays("val")
    if y.shape[0] == 0:
        return float("nan")
    x = apply_ablation(cfg, schema, np.concatenate([xbar, xtilde], axis=1))
    pred = predict_batches(gen, x, use_observation=not cfg.drop_obconn)
    return evaluate(pred, y).mse


def train(dataset, cfg: TrainConfig,
          gen_spec: GeneratorSpec | None = None,
          disc_spec: DiscriminatorSpec | None = None,
          out_dir: str | None = None,
          resume: bool = False) -> TrainReport:
    """Run the alternating update loop over the dataset's train split.

    For each batch the discriminator is updated on the real frames and the
    detached predictions, then the generator is updated on the weighted
    reconstruction + adversarial objective.  With out_dir set, a rolling
    checkpoint pair, a best-validation checkpoint pair and an append-only
    CSV log are maintained; resume=True picks up from the rolling pair.
    """
    schema = dataset.schema
    if gen_spec is None:
        gen_spec = GeneratorSpec(schema.c_input, schema.c_truth)
    if disc_spec is None:
        disc_spec = DiscriminatorSpec(schema.c_truth, grid_size=dataset.grid_size)
    pyramid = cfg.pyramid or PyramidConfig(resolution=dataset.grid_size)
    if pyramid.resolution != dataset.grid_size:
        raise ValueError(
            f"pyramid resolution {pyramid.resolution} does not match the "
            f"dataset grid {dataset.grid_size}")

    gen = Generator.build(gen_spec, schema, stream_rng(cfg.seed, _STREAM_GEN_INIT))
    disc = Discriminator.build(disc_spec, stream_rng(cfg.seed, _STREAM_DISC_INIT))
    adam_g = Adam(gen.store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  eps=cfg.eps)
    adam_d = Adam(disc.store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  eps=cfg.eps)

    stem = None
    log_path = None
    start_epoch = 1
    best_epoch: int | None = None
    best_val: float | None = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        stem = os.path.join(out_dir, "ckpt")
        log_path = os.path.join(out_dir, "train_log.csv")

    if resume:
        if stem is None:
            raise DataError("resume requested without an output directory")
        gen_path, _ = checkpoint_paths(stem)
        if not os.path.exists(gen_path):
            raise DataError(f"resume requested but {gen_path} does not exist")
        meta = load_checkpoint(gen_path)["meta"]
        if meta.get("seed") != cfg.seed:
            raise DataError(
                f"checkpoint was trained with seed {meta.get('seed')}, "
                f"config says {cfg.seed}")
        if meta.get("gen_spec") != gen_spec.to_dict():
            raise DataError("checkpoint generator spec does not match")
        if meta.get("disc_spec") != disc_spec.to_dict():
            raise DataError("checkpoint discriminator spec does not match")
        gpath, dpath = checkpoint_paths(stem)
        restore_checkpoint(gpath, gen.store, adam=adam_g)
        restore_checkpoint(dpath, disc.store, adam=adam_d)
        start_epoch = int(meta["epoch"]) + 1
        best_epoch = meta.get("best_epoch")
        best_val = meta.get("best_val_mse")

    xbar_tr, xtilde_tr, y_tr = dataset.split_arrays("train")
    n_train = y_tr.shape[0]
    if n_train == 0:
        raise DataError("the train split is empty")

    hist_d: list[float] = []
    hist_g: list[float] = []
    hist_rec: list[float] = []
    hist_adv: list[float] = []
    val_epochs: list[int] = []
    val_history: list[float] = []

    def write_log_rows(rows: list[dict]) -> None:
        if log_path is None or not rows:
            return
        fresh = not os.path.exists(log_path)
        with open(log_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            if fresh:
                writer.writeheader()
            writer.writerows(rows)

    def meta_for(epoch: int) -> dict:
        return {
            "epoch": epoch,
            "seed": cfg.seed,
            "gen_spec": gen_spec.to_dict(),
            "disc_spec": disc_spec.to_dict(),
            "best_epoch": best_epoch,
            "best_val_mse": best_val,
            "config": cfg.to_dict(),
        }

    if cfg.epochs == 0 or start_epoch > cfg.epochs:
        if stem is not None and not resume:
            _save_pair(stem, gen, disc, adam_g, adam_d, meta_for(start_epoch - 1))
        return TrainReport(0, start_epoch, hist_d, hist_g, hist_rec, hist_adv,
                           val_epochs, val_history, best_epoch, best_val,
                           stem, gen, disc)

    eff_rec = 0.0 if cfg.drop_rec else cfg.weights.rec
    eff_adv = 0.0 if cfg.drop_adv else cfg.weights.adv

    for epoch in range(start_epoch, cfg.epochs + 1):
        order = stream_rng(cfg.seed, _STREAM_ORDER, epoch).permutation(n_train)
        drop_rng = stream_rng(cfg.seed, _STREAM_DROPOUT, epoch)
        sums = {"d": 0.0, "g": 0.0, "rec": 0.0, "adv": 0.0}
        n_batches = 0
        for batch_no, lo in enumerate(range(0, n_train, cfg.batch_size), 1):
            idx = order[lo:lo + cfg.batch_size]
            xb = np.concatenate([xbar_tr[idx], xtilde_tr[idx]], axis=1)
            xb = apply_ablation(cfg, schema, xb)
            yb = y_tr[idx]

            y_true = Tensor(yb)
            y_hat = gen.forward(Tensor(xb), mode="train",
                                use_observation=not cfg.drop_obconn)

            d_val = 0.0
            if not cfg.drop_adv:
                adam_d.zero_grad()
                d_real = disc.forward(y_true, mode="train", rng=drop_rng)
                d_fake = disc.forward(Tensor(y_hat.data), mode="train",
                                      rng=drop_rng)
                l_d = loss_D(d_real, d_fake)
                d_val = _guard(l_d, "discriminator loss", epoch, batch_no)
                l_d.backward()
                adam_d.step()

            adam_g.zero_grad()
            if cfg.plain_l2:
                l_rec = mse(y_hat, y_true)
            else:
                l_rec = rec_loss(y_hat, y_true, pyramid)
            rec_val = _guard(l_rec, "reconstruction loss", epoch, batch_no)
            adv_val = 0.0
            l_g = l_rec * eff_rec
            if not cfg.drop_adv:
                adam_d.zero_grad()
                l_adv = adv_loss_G(disc.forward(y_hat, mode="train",
                                                rng=drop_rng))
                adv_val = _guard(l_adv, "adversarial loss", epoch, batch_no)
                l_g = l_g + l_adv * eff_adv
            g_val = _guard(l_g, "generator loss", epoch, batch_no)
            l_g.backward()
            adam_g.step()

            sums["d"] += d_val
            sums["g"] += g_val
            sums["rec"] += rec_val
            sums["adv"] += adv_val
            n_batches += 1

        hist_d.append(sums["d"] / n_batches)
        hist_g.append(sums["g"] / n_batches)
        hist_rec.append(sums["rec"] / n_batches)
        hist_adv.append(sums["adv"] / n_batches)

        row = {
            "epoch": epoch,
            "loss_d": f"{hist_d[-1]:.10e}",
            "loss_g": f"{hist_g[-1]:.10e}",
            "loss_rec": f"{hist_rec[-1]:.10e}",
            "loss_adv": f"{hist_adv[-1]:.10e}",
            "val_mse": "",
        }
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            vmse = _validation_mse(gen, cfg, schema, dataset)
            if not np.isnan(vmse):
                val_epochs.append(epoch)
                val_history.append(vmse)
                row["val_mse"] = f"{vmse:.10e}"
                if best_val is None or vmse < best_val:
                    best_val = vmse
                    best_epoch = epoch
                    if stem is not None:
                        _save_pair(os.path.join(out_dir, "best"), gen, disc,
                                   adam_g, adam_d, meta_for(epoch))
        write_log_rows([row])

        if stem is not None and (
            epoch == cfg.epochs
            or (cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0)
        ):
            _save_pair(stem, gen, disc, adam_g, adam_d, meta_for(epoch))

    return TrainReport(cfg.epochs - start_epoch + 1, start_epoch, hist_d,
                       hist_g, hist_rec, hist_adv, val_epochs, val_history,
                       best_epoch, best_val, stem, gen, disc)
