"""Straight-through-estimator training for the binarized MLP.

Shadow weights are real-valued and clipped to [-1, 1]; every forward pass
binarizes them by sign (sign(0) = +1) and applies batch norm followed by a
sign activation. Gradients pass straight through each sign wherever the
pre-activation magnitude is at most 1 and are zero elsewhere. Adam with a
step-decayed learning rate updates the shadow parameters; batch-norm
running statistics collected during training are folded into the integer
thresholds at finalize time.

Everything is driven by one seeded generator, so a (config, data) pair
reproduces the final model bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bitops import BinWeightMatrix
from .bnn import BnnModel, OutputLayer, evaluate, fold_batchnorm
from .data import Dataset, binarize_batch


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple = (784, 512, 512, 512, 10)
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 0.01
    lr_decay: float = 0.5
    lr_decay_every: int = 10
    seed: int = 0
    t_pix: float = 0.5
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    logit_temp: float = 16.0  # softmax temperature; argmax-invariant at inference

    def __post_init__(self):
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least input, one hidden layer and a head")
        if self.layer_sizes[0] % 2 != 0 or any(s % 2 for s in self.layer_sizes[1:-1]):
            raise ValueError("input width and hidden widths must be even")
        if self.epochs < 1 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not 0.0 <= self.t_pix <= 1.0:
            raise ValueError("t_pix must lie in [0, 1]")


class ShadowModel:
    """Real-valued weights and BN statistics mirroring the BnnModel shape."""

    def __init__(self, config: TrainConfig, rng: np.random.Generator):
        sizes = config.layer_sizes
        self.config = config
        # Glorot-scale init keeps shadow weights near 0 so signs can flip
        # cheaply during the first epochs.
        self.weights = [
            self._init(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 2)
        ]
        hidden = sizes[1:-1]
        self.gamma = [np.ones(h, dtype=np.float32) for h in hidden]
        self.beta = [np.zeros(h, dtype=np.float32) for h in hidden]
        self.run_mean = [np.zeros(h, dtype=np.float64) for h in hidden]
        self.run_var = [np.ones(h, dtype=np.float64) for h in hidden]
        self.head_w = self._init(rng, sizes[-2], sizes[-1])
        self.head_b = np.zeros(sizes[-1], dtype=np.float32)

    @staticmethod
    def _init(rng, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, (fan_in, fan_out)).astype(np.float32)

    def parameters(self):
        return self.weights + self.gamma + self.beta + [self.head_w, self.head_b]


def _binarize(w: np.ndarray) -> np.ndarray:
    return np.where(w >= 0, 1.0, -1.0).astype(np.float32)


class _Adam:
    def __init__(self, params, eps=1e-8, beta1=0.9, beta2=0.999):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.eps, self.beta1, self.beta2 = eps, beta1, beta2

    def step(self, params, grads, lr):
        self.t += 1
        correction = np.sqrt(1 - self.beta2**self.t) / (1 - self.beta1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * correction * m / (np.sqrt(v) + self.eps)


def _train_step(shadow: ShadowModel, opt: _Adam, x: np.ndarray, labels: np.ndarray, lr: float):
    cfg = shadow.config
    n_hidden = len(shadow.weights)
    act = x
    caches = []
    for i in range(n_hidden):
        wb = _binarize(shadow.weights[i])
        s = act @ wb
        mu = s.mean(axis=0)
        var = s.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
        shat = (s - mu) * inv_std
        z = shadow.gamma[i] * shat + shadow.beta[i]
        caches.append((act, wb, inv_std, shat, z))
        act = _binarize(z)
        shadow.run_mean[i] = cfg.bn_momentum * shadow.run_mean[i] + (1 - cfg.bn_momentum) * mu
        shadow.run_var[i] = cfg.bn_momentum * shadow.run_var[i] + (1 - cfg.bn_momentum) * var

    head_wb = _binarize(shadow.head_w)
    logits = (act @ head_wb + shadow.head_b) / cfg.logit_temp
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = x.shape[0]
    dlogits = probs
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch * cfg.logit_temp

    d_head_w = (act.T @ dlogits) * (np.abs(shadow.head_w) <= 1)
    d_head_b = dlogits.sum(axis=0)
    da = dlogits @ head_wb.T

    grads_w = [None] * n_hidden
    grads_g = [None] * n_hidden
    grads_b = [None] * n_hidden
    for i in reversed(range(n_hidden)):
        prev, wb, inv_std, shat, z = caches[i]
        dz = da * (np.abs(z) <= 1)
        grads_g[i] = (dz * shat).sum(axis=0)
        grads_b[i] = dz.sum(axis=0)
        dshat = dz * shadow.gamma[i]
        ds = inv_std / batch * (
            batch * dshat - dshat.sum(axis=0) - shat * (dshat * shat).sum(axis=0)
        )
        grads_w[i] = (prev.T @ ds) * (np.abs(shadow.weights[i]) <= 1)
        da = ds @ wb.T

    params = shadow.parameters()
    grads = grads_w + grads_g + grads_b + [d_head_w, d_head_b]
    opt.step(params, grads, lr)
    for w in shadow.weights:
        np.clip(w, -1.0, 1.0, out=w)
    np.clip(shadow.head_w, -1.0, 1.0, out=shadow.head_w)


def train_ste(config: TrainConfig, train_set: Dataset, test_set: Dataset | None = None):
    """Train a shadow model; returns (shadow, per-epoch test accuracy history)."""
    rng = np.random.default_rng(config.seed)
    shadow = ShadowModel(config, rng)
    opt = _Adam(shadow.parameters())
    x_all = binarize_batch(train_set.images, config.t_pix).astype(np.float32)
    y_all = train_set.labels.astype(np.int64)
    history = []
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_decay ** (epoch // config.lr_decay_every)
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.shape[0] < 2:
                continue  # batch norm needs more than one sample
            _train_step(shadow, opt, x_all[idx], y_all[idx], lr)
        if test_set is not None:
            acc = evaluate(finalize(shadow), test_set, config.t_pix)
            history.append(acc)
            if epoch >= 2 and acc < 0.15:
                warnings.warn(
                    f"training may have diverged: accuracy {acc:.3f} after "
                    f"epoch {epoch + 1}",
                    RuntimeWarning,
                )
    return shadow, history


def finalize(shadow: ShadowModel) -> BnnModel:
    """Binarize shadow weights and fold BN stats into integer thresholds."""
    cfg = shadow.config
    layers = []
    for i, w in enumerate(shadow.weights):
        w_pm1 = np.where(w >= 0, 1, -1).astype(np.int8)
        b, flip = fold_batchnorm(
            shadow.gamma[i], shadow.beta[i], shadow.run_mean[i],
            shadow.run_var[i], cfg.bn_eps, w.shape[0],
        )
        if np.any(flip):
            w_pm1 = w_pm1.copy()
            w_pm1[:, flip] = -w_pm1[:, flip]
        layers.append((BinWeightMatrix.from_pm1(w_pm1), b))
    head_w = BinWeightMatrix.from_pm1(np.where(shadow.head_w >= 0, 1, -1).astype(np.int8))
    head_b = np.rint(shadow.head_b).astype(np.int32)
    return BnnModel(layers, OutputLayer(head_w, head_b))
