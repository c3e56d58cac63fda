"""Datasets, curriculum schedule and SGD training loops for the recognizers."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import InfeasibleLabel
from ..preprocess import normalize_crop_char, normalize_crop_train, read_pgm
from ..rec_metrics import RecognitionStats
from ..synthdata import read_recognition_manifest
from ..types import Alphabet, GrayImage, LabelSequence
from .model import DOWNSAMPLE, CharRecognizer, ConvRecognizer, to_input

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    image: GrayImage
    text: str
    label: LabelSequence


def load_dataset(manifest, alphabet: Alphabet) -> list[Sample]:
    return [Sample(read_pgm(path), text, alphabet.encode(text))
            for path, text in read_recognition_manifest(manifest)]


def filter_dataset(data: Sequence[Sample], max_len: int) -> list[Sample]:
    """Keep samples whose transcription has at most ``max_len`` characters."""
    return [s for s in data if len(s.label) <= max_len]


def filter_by_feature_map(data: Sequence[Sample], width: int, downsample: int = DOWNSAMPLE) -> list[Sample]:
    """Keep samples a CTC lattice of ``width / downsample`` steps can emit (repeats need a blank)."""
    if width % downsample:
        raise ValueError(f"width {width} is not a multiple of {downsample}")
    steps = width // downsample
    return [s for s in data if s.label.min_ctc_length() <= steps]


SCHEDULE_MODES = ("geometric", "faithful")


@dataclass(frozen=True)
class CurriculumConfig:
    warmup_epochs: int = 10
    epochs: int = 20
    initial_max_len: int = 3
    warmup_width: int = 64
    initial_width: int = 96
    alpha: float = 0.01
    beta: float = 0.1
    decay_period: int = 10
    schedule_mode: str = "geometric"

    def __post_init__(self):
        if not 0 < self.alpha <= self.beta:
            raise ValueError("need 0 < alpha <= beta")
        if min(self.warmup_epochs, self.epochs, self.decay_period) < 1:
            raise ValueError("warmup_epochs, epochs and decay_period must be >= 1")
        if self.initial_width < 8:
            raise ValueError("initial_width must be >= 8")
        if self.warmup_width % DOWNSAMPLE or self.initial_width % DOWNSAMPLE:
            raise ValueError(f"widths must be multiples of {DOWNSAMPLE}")
        if self.schedule_mode not in SCHEDULE_MODES:
            raise ValueError(f"schedule_mode must be one of {SCHEDULE_MODES}")


@dataclass(frozen=True)
class EpochPlan:
    phase: str
    epoch: int
    phase_epoch: int
    lr: float
    width: int
    max_len: int


def curriculum_schedule(cfg: CurriculumConfig) -> list[EpochPlan]:
    """Per-epoch learning rate, image width and length cap.

    Warm-up: short words at a narrow width while the learning rate climbs
    from alpha; the length cap grows by one per epoch.  Main phase: the
    width grows by 8 per epoch and the learning rate decays in steps of 10x
    every ``decay_period`` epochs.

    ``geometric`` ramps log-linearly so the warm-up ends exactly at beta and
    decays as a staircase from there.  ``faithful`` uses
    ``lr = alpha + 10 ** (i * delta)`` with ``delta = (log10 beta - log10 alpha) / N``
    and multiplies the decay factors cumulatively.
    """
    plans = []
    lr = cfg.alpha
    delta = (math.log10(cfg.beta) - math.log10(cfg.alpha)) / cfg.epochs
    for i in range(1, cfg.warmup_epochs + 1):
        plans.append(EpochPlan("warmup", i, i, lr, cfg.warmup_width, cfg.initial_max_len + i - 1))
        if cfg.schedule_mode == "geometric":
            lr = cfg.alpha * (cfg.beta / cfg.alpha) ** (i / cfg.warmup_epochs)
        else:
            lr = cfg.alpha + 10.0 ** (i * delta)
    base = lr
    for i in range(1, cfg.epochs + 1):
        width = cfg.initial_width + 8 * (i - 1)
        plans.append(EpochPlan("main", cfg.warmup_epochs + i, i, lr, width, width // DOWNSAMPLE))
        if cfg.schedule_mode == "geometric":
            lr = base * 10.0 ** (-(i // cfg.decay_period))
        else:
            lr = lr * 10.0 ** (-(i // cfg.decay_period))
    return plans


def flat_schedule(epochs: int, lr: float, width: int = 128, decay_period: int | None = None) -> list[EpochPlan]:
    """Constant-width training on everything, optional 10x staircase decay."""
    plans = []
    for i in range(1, epochs + 1):
        rate = lr * 10.0 ** (-((i - 1) // decay_period)) if decay_period else lr
        plans.append(EpochPlan("main", i, i, rate, width, width // DOWNSAMPLE))
    return plans


@dataclass
class TrainConfig:
    batch_size: int = 8
    momentum: float = 0.0
    clip_norm: float | None = 10.0
    seed: int = 0


@dataclass
class EpochLog:
    phase: str
    epoch: int
    phase_epoch: int
    lr: float
    width: int
    max_len: int
    n_samples: int
    loss: float
    seconds: float


TRACE_FIELDS = [f for f in EpochLog.__dataclass_fields__]


class SGD:
    """SGD with optional heavy-ball momentum and global-norm gradient clipping."""

    def __init__(self, params, momentum: float = 0.0, clip_norm: float | None = None):
        self.params = params
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p) for _, p, _ in params] if momentum else None

    def step(self, lr: float) -> None:
        scale = 1.0
        if self.clip_norm:
            norm = math.sqrt(sum(float(np.vdot(g, g)) for _, _, g in self.params))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for k, (_, p, g) in enumerate(self.params):
            step = g * scale
            if self.velocity is not None:
                v = self.velocity[k]
                v *= self.momentum
                v += step
                step = v
            p -= (lr * step).astype(p.dtype)


def _ctc_epoch_inputs(model: ConvRecognizer, data: Sequence[Sample], width: int) -> np.ndarray:
    return to_input(np.stack([normalize_crop_train(s.image, model.preprocess, width).pixels for s in data]),
                    model.dtype)


def _char_epoch_inputs(model: CharRecognizer, data: Sequence[Sample]) -> np.ndarray:
    return to_input(np.stack([normalize_crop_char(s.image, model.preprocess).pixels for s in data]), model.dtype)


def train_with_schedule(model, data: Sequence[Sample], plans: Sequence[EpochPlan], tcfg: TrainConfig = TrainConfig(),
                        on_epoch: Callable[[EpochLog], None] | None = None) -> list[EpochLog]:
    """Run one epoch per plan.  CTC epochs filter by length cap and lattice size."""
    rng = np.random.default_rng(tcfg.seed)
    opt = SGD(model.params(), tcfg.momentum, tcfg.clip_norm)
    history = []
    char_inputs = _char_epoch_inputs(model, data) if model.kind == "char" else None
    for plan in plans:
        start = time.perf_counter()
        if model.kind == "ctc":
            subset_idx = [k for k, s in enumerate(data)
                          if len(s.label) <= plan.max_len and s.label.min_ctc_length() <= plan.width // DOWNSAMPLE]
            subset = [data[k] for k in subset_idx]
            inputs = _ctc_epoch_inputs(model, subset, plan.width) if subset else None
        else:
            subset_idx = list(range(len(data)))
            subset = list(data)
            inputs = char_inputs
        order = rng.permutation(len(subset))
        total = 0.0
        for b in range(0, len(order), tcfg.batch_size):
            batch = order[b : b + tcfg.batch_size]
            model.zero_grad()
            loss = model.loss_and_grad(inputs[batch], [subset[k].label for k in batch])
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {plan.epoch}")
            opt.step(plan.lr)
            total += loss * len(batch)
        entry = EpochLog(plan.phase, plan.epoch, plan.phase_epoch, plan.lr, plan.width, plan.max_len,
                         len(subset), total / max(len(subset), 1), time.perf_counter() - start)
        log.info("epoch %d (%s %d) lr=%.3g width=%d max_len=%d n=%d loss=%.4f %.1fs", entry.epoch, entry.phase,
                 entry.phase_epoch, entry.lr, entry.width, entry.max_len, entry.n_samples, entry.loss, entry.seconds)
        history.append(entry)
        if on_epoch:
            on_epoch(entry)
    return history


def curriculum_train(data: Sequence[Sample], cfg: CurriculumConfig, alphabet: Alphabet | None = None,
                     tcfg: TrainConfig = TrainConfig(), model: ConvRecognizer | None = None,
                     on_epoch=None) -> ConvRecognizer:
    """Train a CTC recognizer with the length/width curriculum; the trace lands in ``model.history``."""
    if not data:
        raise ValueError("training set is empty")
    if model is None:
        model = ConvRecognizer(alphabet or Alphabet.default(), seed=tcfg.seed)
    model.history = train_with_schedule(model, data, curriculum_schedule(cfg), tcfg, on_epoch)
    return model


def train_char(data: Sequence[Sample], epochs: int, lr: float, alphabet: Alphabet | None = None,
               tcfg: TrainConfig = TrainConfig(), decay_period: int | None = None, on_epoch=None) -> CharRecognizer:
    if not data:
        raise ValueError("training set is empty")
    model = CharRecognizer(alphabet or Alphabet.default(), seed=tcfg.seed)
    plans = flat_schedule(epochs, lr, width=model.preprocess.char_model_size[1], decay_period=decay_period)
    plans = [EpochPlan(p.phase, p.epoch, p.phase_epoch, p.lr, p.width, model.k) for p in plans]
    model.history = train_with_schedule(model, data, plans, tcfg, on_epoch)
    return model


def predict(model, data: Sequence[Sample]) -> list[tuple[str, str]]:
    return [(model.recognize(s.image), s.text) for s in data]


def evaluate(model, data: Sequence[Sample], case_sensitive: bool = True) -> RecognitionStats:
    stats = RecognitionStats()
    for predicted, truth in predict(model, data):
        stats.add(predicted, truth, case_sensitive)
    return stats


def write_trace(path, history: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for entry in history:
            writer.writerow(asdict(entry))


def read_trace(path) -> list[EpochLog]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(EpochLog(row["phase"], int(row["epoch"]), int(row["phase_epoch"]), float(row["lr"]),
                                int(row["width"]), int(row["max_len"]), int(row["n_samples"]),
                                float(row["loss"]), float(row["seconds"])))
    return out
