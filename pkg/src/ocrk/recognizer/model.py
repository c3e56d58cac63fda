"""Fully convolutional CTC word recognizer and the fixed-length CHAR baseline.

Both share the same convolutional body:

    conv 3x3,  8 ch, stride (2, 2) + ReLU
    conv 3x3, 16 ch, stride (2, 2) + ReLU
    conv 3x3, 32 ch, stride (2, 1) + ReLU
    conv 4x1, 32 ch, valid         + ReLU     (height 4 -> 1)

The CTC model adds a 1x1 convolution producing one class distribution per
column, so a 32 x W crop yields W / 4 timesteps.  The CHAR model flattens the
body output of a 32 x 100 crop and feeds k independent linear classifiers.
"""
from __future__ import annotations

import numpy as np

from .. import ctc
from ..errors import BadInputShape
from ..preprocess import DEFAULT as DEFAULT_PREPROCESS
from ..preprocess import PreprocessConfig, normalize_crop_char, normalize_crop_test, pad_width_to_multiple
from ..types import Alphabet, GrayImage, LabelSequence, ProbLattice
from .layers import Conv2D, Dense, ReLU

HEIGHT = 32
DOWNSAMPLE = 4
MIN_WIDTH = 8
BODY_CHANNELS = 32
CHAR_MAX_LEN = 23


def to_input(pixels_batch, dtype=np.float32) -> np.ndarray:
    """(B, 32, W) intensities -> (B, 32, W, 1) network input with ink positive."""
    x = np.asarray(pixels_batch, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    return (0.5 - x)[..., None]


class ConvBody:
    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.layers = [
            Conv2D("conv1", 1, 8, (3, 3), (2, 2), (1, 1), rng, dtype), ReLU(),
            Conv2D("conv2", 8, 16, (3, 3), (2, 2), (1, 1), rng, dtype), ReLU(),
            Conv2D("conv3", 16, 32, (3, 3), (2, 1), (1, 1), rng, dtype), ReLU(),
            Conv2D("conv4", 32, BODY_CHANNELS, (4, 1), (1, 1), (0, 0), rng, dtype), ReLU(),
        ]

    def forward(self, x, keep=True):
        for layer in self.layers:
            x = layer.forward(x, keep)
        return x

    def backward(self, dy):
        for k, layer in enumerate(reversed(self.layers)):
            dy = layer.backward(dy, need_input_grad=k < len(self.layers) - 1)
        return dy

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class _Model:
    kind = ""

    def __init__(self, alphabet: Alphabet, seed: int = 0, dtype=np.float32,
                 preprocess: PreprocessConfig = DEFAULT_PREPROCESS):
        self.alphabet = alphabet
        self.dtype = np.dtype(dtype)
        self.preprocess = preprocess
        self.rng = np.random.default_rng(seed)
        self.body = ConvBody(self.rng, self.dtype)

    @property
    def num_classes(self) -> int:
        return self.alphabet.num_classes

    def params(self):
        return self.body.params() + self.head_params()

    def head_params(self):
        raise NotImplementedError

    def zero_grad(self):
        for _, _, g in self.params():
            g[...] = 0

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.params()}

    def set_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p, _ in self.params():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            src = np.asarray(arrays[name])
            if src.shape != p.shape:
                raise BadInputShape(f"{name}: expected shape {p.shape}, got {src.shape}")
            p[...] = src

    def copy_body_from(self, other: "_Model") -> None:
        for (name, p, _), (oname, op, _) in zip(self.body.params(), other.body.params()):
            assert name == oname
            p[...] = op

    def astype(self, dtype) -> "_Model":
        clone = type(self).__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.dtype = np.dtype(dtype)
        clone.body = ConvBody(np.random.default_rng(0), clone.dtype)
        clone._build_head(np.random.default_rng(0))
        clone.set_parameters(self.parameter_arrays())
        return clone

    def _build_head(self, rng):
        raise NotImplementedError


class ConvRecognizer(_Model):
    """CTC recognizer: one class distribution per 4 input columns."""

    kind = "ctc"

    def __init__(self, alphabet: Alphabet, seed: int = 0, dtype=np.float32,
                 preprocess: PreprocessConfig = DEFAULT_PREPROCESS):
        super().__init__(alphabet, seed, dtype, preprocess)
        self._build_head(self.rng)

    def _build_head(self, rng):
        self.head = Conv2D("head", BODY_CHANNELS, self.num_classes, (1, 1), rng=rng, dtype=self.dtype)

    def head_params(self):
        return self.head.params()

    @staticmethod
    def timesteps(width: int) -> int:
        return -(-width // DOWNSAMPLE)

    def check_input(self, x: np.ndarray) -> None:
        if x.shape[1] != HEIGHT or x.shape[2] % DOWNSAMPLE or x.shape[2] < MIN_WIDTH:
            raise BadInputShape(f"input must be {HEIGHT} x W with W a multiple of {DOWNSAMPLE} "
                                f"and W >= {MIN_WIDTH}; got {x.shape[1]} x {x.shape[2]}")

    def logits(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        """(B, 32, W, 1) input -> (B, W / 4, classes) logits."""
        self.check_input(x)
        h = self.head.forward(self.body.forward(x, keep), keep)
        return h[:, 0]

    def backward(self, dlogits: np.ndarray) -> None:
        d = self.head.backward(dlogits[:, None].astype(self.dtype))
        self.body.backward(d)

    def forward(self, img: GrayImage) -> ProbLattice:
        x = to_input(img.pixels, self.dtype)
        z = self.logits(x)[0].astype(np.float64)
        return ProbLattice(ctc.softmax(z))

    def loss_and_grad(self, x: np.ndarray, labels) -> float:
        """Mean CTC loss over the batch; parameter gradients are accumulated."""
        z = self.logits(x, keep=True)
        losses, dz = ctc.ctc_batch_loss_grad(z, labels)
        self.backward(dz / len(labels))
        return float(losses.mean())

    def prepare(self, crop: GrayImage) -> GrayImage:
        img = normalize_crop_test(crop, self.preprocess)
        if img.width < MIN_WIDTH:
            img = GrayImage(np.pad(img.pixels, ((0, 0), (0, MIN_WIDTH - img.width))))
        return pad_width_to_multiple(img, DOWNSAMPLE)

    def recognize(self, crop: GrayImage) -> str:
        return ctc.ctc_greedy_decode(self.forward(self.prepare(crop)), self.alphabet)


class CharRecognizer(_Model):
    """Baseline with k independent per-position classifiers over symbols + NULL."""

    kind = "char"

    def __init__(self, alphabet: Alphabet, seed: int = 0, dtype=np.float32,
                 preprocess: PreprocessConfig = DEFAULT_PREPROCESS, k: int = CHAR_MAX_LEN):
        super().__init__(alphabet, seed, dtype, preprocess)
        self.k = k
        self._build_head(self.rng)

    def _build_head(self, rng):
        h, w = self.preprocess.char_model_size
        if h != HEIGHT or w % DOWNSAMPLE:
            raise BadInputShape("CHAR input must be 32 x (multiple of 4)")
        self.features = (w // DOWNSAMPLE) * BODY_CHANNELS
        self.head = Dense("char_head", self.features, self.k * self.num_classes, rng, self.dtype)

    def head_params(self):
        return self.head.params()

    def logits(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        """(B, 32, 100, 1) input -> (B, k, classes) logits."""
        if x.shape[1:3] != tuple(self.preprocess.char_model_size):
            raise BadInputShape(f"CHAR input must be {self.preprocess.char_model_size}, got {x.shape[1:3]}")
        f = self.body.forward(x, keep)
        self._feature_shape = f.shape
        z = self.head.forward(f.reshape(len(x), -1), keep)
        return z.reshape(len(x), self.k, self.num_classes)

    def targets(self, label) -> np.ndarray:
        idx = list(label.indices if isinstance(label, LabelSequence) else label)[: self.k]
        return np.array(idx + [self.alphabet.null_index] * (self.k - len(idx)), dtype=np.int64)

    def loss_and_grad(self, x: np.ndarray, labels) -> float:
        """Sum of the k cross-entropies, averaged over the batch."""
        z = self.logits(x, keep=True).astype(np.float64)
        tgt = np.stack([self.targets(l) for l in labels])
        logp = ctc.log_softmax(z)
        B = len(labels)
        picked = np.take_along_axis(logp, tgt[..., None], axis=2)[..., 0]
        loss = -picked.sum(axis=1).mean()
        dz = np.exp(logp)
        np.put_along_axis(dz, tgt[..., None], np.take_along_axis(dz, tgt[..., None], axis=2) - 1.0, axis=2)
        dz = (dz / B).reshape(B, -1).astype(self.dtype)
        df = self.head.backward(dz)
        self.body.backward(df.reshape(self._feature_shape))
        return float(loss)

    def prepare(self, crop: GrayImage) -> GrayImage:
        return normalize_crop_char(crop, self.preprocess)

    def recognize(self, crop: GrayImage) -> str:
        return char_decode(char_forward(self, self.prepare(crop)), self.alphabet)


def char_forward(model: CharRecognizer, img: GrayImage) -> np.ndarray:
    """Per-head argmax class indices (length k)."""
    z = model.logits(to_input(img.pixels, model.dtype))[0]
    return np.argmax(z, axis=1)


def char_decode(preds, alphabet: Alphabet) -> str:
    """Drop NULL predictions and concatenate the rest."""
    return alphabet.decode([int(p) for p in preds if int(p) != alphabet.null_index])


def forward(model: ConvRecognizer, img: GrayImage) -> ProbLattice:
    return model.forward(img)


def backward_step(model, img: GrayImage, label, lr: float) -> float:
    """One plain SGD step on a single sample; returns the pre-update loss."""
    model.zero_grad()
    loss = model.loss_and_grad(to_input(img.pixels, model.dtype), [label])
    if lr:
        for _, p, g in model.params():
            p -= (lr * g).astype(p.dtype)
    return loss
