"""Evaluation battery: count MSE, existence confusion, derived scores.

A prediction is judged two ways: squared error on the raw per-cell unit
counts, and a confusion matrix after thresholding counts into per-cell
existence.  The two non-learned reference predictors are also built
here: the fogged current frame padded with empty building channels, and
the last-known-state estimate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError
from .schema import ChannelSchema, observation_prior


def existence_binarize(t: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Counts >= threshold mark a cell-channel as occupied."""
    if threshold <= 0:
        raise ValueError(f"binarize: threshold {threshold} must be positive")
    return np.asarray(t) >= threshold


def confusion_counts(pred: np.ndarray, truth: np.ndarray,
                     threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) over every element of the two aligned tensors."""
    if pred.shape != truth.shape:
        raise DataError(f"confusion: misaligned streams {pred.shape} vs {truth.shape}")
    p = existence_binarize(pred, threshold)
    t = existence_binarize(truth, threshold)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    return tp, fp, fn, tn


@dataclass(frozen=True)
class EvalReport:
    mse: float
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    frames: int
    precision_defined: bool = True
    recall_defined: bool = True

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @staticmethod
    def from_confusion(mse: float, tp: int, fp: int, fn: int, tn: int,
                       frames: int) -> "EvalReport":
        total = tp + fp + fn + tn
        p_def = (tp + fp) > 0
        r_def = (tp + fn) > 0
        precision = tp / (tp + fp) if p_def else 0.0
        recall = tp / (tp + fn) if r_def else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        return EvalReport(mse=float(mse), tp=tp, fp=fp, fn=fn, tn=tn,
                          accuracy=(tp + tn) / total if total else 0.0,
                          precision=precision, recall=recall, f1=f1,
                          frames=frames, precision_defined=p_def,
                          recall_defined=r_def)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred_frames: np.ndarray, truth_frames: np.ndarray,
             threshold: float = 0.5) -> EvalReport:
    """Score a stream of predicted state tensors against aligned truth."""
    pred = np.asarray(pred_frames)
    truth = np.asarray(truth_frames)
    if pred.shape != truth.shape:
        raise DataError(f"evaluate: misaligned streams {pred.shape} vs {truth.shape}")
    if pred.ndim == 3:
        pred, truth = pred[None], truth[None]
    diff = pred.astype(np.float64) - truth.astype(np.float64)
    mse = float(np.mean(diff * diff)) if diff.size else 0.0
    tp, fp, fn, tn = confusion_counts(pred, truth, threshold)
    return EvalReport.from_confusion(mse, tp, fp, fn, tn, frames=pred.shape[0])


# ---------------------------------------------------------------------------
# non-learned reference predictors
# ---------------------------------------------------------------------------

def partial_predictor(xbar: np.ndarray, schema: ChannelSchema) -> np.ndarray:
    """Fogged current frame as a full-state guess: unseen building
    channels are all zero.  [.., C_partial, H, W] -> [.., C_truth, H, W]."""
    if xbar.shape[-3] != schema.c_partial:
        raise DataError(f"predictor: partial block has {xbar.shape[-3]} channels, "
                        f"schema wants {schema.c_partial}")
    pad_shape = (*xbar.shape[:-3], schema.n_enemy_building, *xbar.shape[-2:])
    return np.concatenate([xbar, np.zeros(pad_shape, dtype=xbar.dtype)], axis=-3)


def accumulated_predictor(xbar: np.ndarray, xtilde: np.ndarray,
                          schema: ChannelSchema) -> np.ndarray:
    """Last-known-state guess: friendly from the fogged frame, every enemy
    channel from the accumulated map."""
    x = np.concatenate([xbar, xtilde], axis=-3)
    return observation_prior(x, schema)


def evaluate_baseline(kind: str, dataset, split: str = "test",
                      threshold: float = 0.5) -> EvalReport:
    """Score one of the reference predictors on a dataset split.

    ``dataset`` is any object with ``schema`` and ``split_arrays(name)``
    returning (xbar, xtilde, y) stacks.
    """
    xbar, xtilde, y = dataset.split_arrays(split)
    schema = dataset.schema
    if kind == "partial":
        pred = partial_predictor(xbar, schema)
    elif kind == "accumulated":
        pred = accumulated_predictor(xbar, xtilde, schema)
    else:
        raise ValueError(f"baseline kind {kind!r}: want partial or accumulated")
    return evaluate(pred, y, threshold)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

_COLUMNS = (("MSE", "mse", 5), ("Acc", "accuracy", 5), ("F1", "f1", 3),
            ("Recall", "recall", 3), ("Precision", "precision", 3))


def report_table(reports: list[tuple[str, EvalReport]]) -> str:
    """Aligned comparison table, rows in the given order."""
    name_w = max([len("model")] + [len(n) for n, _ in reports])
    header = "model".ljust(name_w) + "".join(f"  {c[0]:>9}" for c in _COLUMNS)
    lines = [header]
    for name, rep in reports:
        row = name.ljust(name_w)
        for _, attr, dec in _COLUMNS:
            row += f"  {getattr(rep, attr):>9.{dec}f}"
        lines.append(row)
    return "\n".join(lines)


def report_json(reports: list[tuple[str, EvalReport]]) -> str:
    return json.dumps({name: rep.to_dict() for name, rep in reports},
                      indent=2, sort_keys=True)
