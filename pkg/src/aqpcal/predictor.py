"""The dual-branch accuracy/ratio predictor and the linear baseline.

One architecture serves two modes:

* accuracy mode: inputs (q, log10(sigma)) + histogram, output the expected
  query accuracy, clamped to [0, 1];
* ratio mode: inputs (q, target accuracy) + histogram, output a sampling
  ratio; the network regresses log10(sigma) and the output is 10**raw
  clamped to [1e-5, 1].

A small tabular MLP and a conv stack over the histogram are concatenated
into a fully connected head ending in a single linear node.  Training
minimizes MAPE between the transformed output and the target with Adam,
mini-batches, and early stopping on a validation slice.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import rng
from .histogram import HistogramGrid
from .ioutil import atomic_write_text
from .nn import Adam, Conv2d, Dense, Flatten, MaxPool2, ReLU, mape_loss

SUPPORTED_H = (1, 4, 8, 16, 32, 64)
RATIO_MIN = 1e-5

_TAG_INIT = 31
_TAG_VAL_SPLIT = 32
_TAG_EPOCH = 33


class Mode(str, Enum):
    ACCURACY = "accuracy"
    RATIO = "ratio"


@dataclass(frozen=True)
class TabularFeatures:
    """The two tabular inputs: query size q and the mode's driver value
    (log10 of the sampling ratio in accuracy mode, the target accuracy in
    ratio mode)."""

    q: float
    driver: float


def accuracy_features(q: float, sigma: float) -> TabularFeatures:
    if not 0.0 < sigma <= 1.0:
        raise ValueError(f"sigma must be in (0, 1], got {sigma}")
    return TabularFeatures(q, math.log10(sigma))


def ratio_features(q: float, alpha: float) -> TabularFeatures:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return TabularFeatures(q, alpha)


def features_for(mode: Mode, q: float, sigma: float, alpha: float) -> TabularFeatures:
    if mode == Mode.ACCURACY:
        return accuracy_features(q, sigma)
    return ratio_features(q, alpha)


def target_for(mode: Mode, sigma: float, alpha: float) -> float:
    return alpha if mode == Mode.ACCURACY else sigma


@dataclass
class FeatureScaler:
    """Affine standardization of the tabular inputs plus a histogram scale.

    The histogram scale is h^2 so a perfectly uniform grid feeds 1.0 per cell
    regardless of resolution.
    """

    q_mean: float = 0.0
    q_std: float = 1.0
    driver_mean: float = 0.0
    driver_std: float = 1.0
    hist_scale: float = 1.0

    @classmethod
    def fit(cls, qs: np.ndarray, drivers: np.ndarray, h: int) -> "FeatureScaler":
        def _std(a):
            s = float(np.std(a))
            return s if s > 1e-12 else 1.0

        return cls(
            q_mean=float(np.mean(qs)),
            q_std=_std(qs),
            driver_mean=float(np.mean(drivers)),
            driver_std=_std(drivers),
            hist_scale=float(h * h),
        )

    def tab(self, qs: np.ndarray, drivers: np.ndarray) -> np.ndarray:
        return np.column_stack(
            (
                (qs - self.q_mean) / self.q_std,
                (drivers - self.driver_mean) / self.driver_std,
            )
        )

    def as_tuple(self):
        return (self.q_mean, self.q_std, self.driver_mean, self.driver_std, self.hist_scale)


@dataclass
class TrainHyper:
    batch: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20
    max_epochs: int = 500
    val_fraction: float = 0.2
    min_delta: float = 1e-4


@dataclass
class EpochStats:
    epoch: int
    train_mape: float
    val_mape: float
    seconds: float


def _hist_branch_spec(h: int):
    """Layer stack for the histogram branch and its output width."""
    if h < 8:
        return [Flatten(), Dense(h * h, 32), ReLU()], 32
    side = h - 2
    side //= 2
    side -= 2
    layers = [Conv2d(1, 8), ReLU(), MaxPool2(), Conv2d(8, 16), ReLU()]
    if side >= 2:
        layers.append(MaxPool2())
        side //= 2
    layers.append(Flatten())
    return layers, 16 * side * side


class DualBranchNet:
    """Tabular MLP + histogram conv stack, concatenated into a dense head."""

    def __init__(self, h: int):
        self.h = h
        self.tab_layers = [Dense(2, 32), ReLU(), Dense(32, 32), ReLU()]
        self.hist_layers, hist_dim = _hist_branch_spec(h)
        self.concat_dim = 32 + hist_dim
        self.head_layers = [
            Dense(self.concat_dim, 64),
            ReLU(),
            Dense(64, 32),
            ReLU(),
            Dense(32, 1),
        ]

    def _branches(self):
        yield "tab", self.tab_layers
        yield "hist", self.hist_layers
        yield "head", self.head_layers

    def init_params(self, seed: int) -> None:
        i = 0
        for _, layers in self._branches():
            for layer in layers:
                layer.init_params(rng.derive(seed, _TAG_INIT, i))
                i += 1

    def named_params(self):
        out = []
        for branch, layers in self._branches():
            for i, layer in enumerate(layers):
                for pname, arr in layer.params():
                    out.append((f"{branch}{i}.{pname}", arr))
        return out

    def param_arrays(self):
        return [arr for _, arr in self.named_params()]

    def _run(self, branch, layers, x):
        caches = []
        for i, layer in enumerate(layers):
            if not layer.expects(x.shape):
                raise ValueError(
                    f"layer {branch}[{i}] ({layer.kind}): input shape {x.shape} not accepted"
                )
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def forward(self, tab: np.ndarray, hist: np.ndarray):
        """tab (B, 2), hist (B, 1, h, h) -> raw output (B,) plus caches."""
        if hist.shape[2] != self.h or hist.shape[3] != self.h:
            raise ValueError(
                f"histogram side {hist.shape[2]}x{hist.shape[3]} does not match model h={self.h}"
            )
        t, tc = self._run("tab", self.tab_layers, tab)
        g, gc = self._run("hist", self.hist_layers, hist)
        z = np.concatenate((t, g), axis=1)
        y, hc = self._run("head", self.head_layers, z)
        return y[:, 0], (tc, gc, hc)

    def loss_and_param_grads(self, tab: np.ndarray, hist: np.ndarray, target):
        """MAPE of the raw output against ``target`` plus parameter gradients.

        This is the hook the finite-difference gradient check drives; it
        exercises the full backprop stack without the mode output clamps,
        whose dead zones would silence the gradients being verified.
        """
        targets = np.atleast_1d(np.asarray(target, dtype=np.float64))
        raw, caches = self.forward(tab, hist)
        loss, gpred = mape_loss(raw, targets)
        return loss, self.backward(caches, gpred)

    def backward(self, caches, graw: np.ndarray):
        """Gradient of a scalar loss w.r.t. every parameter (same order as
        named_params)."""
        tc, gc, hc = caches
        tab_grads: list = []
        hist_grads: list = []
        head_grads: list = []

        g = graw[:, None]
        for layer, cache in zip(reversed(self.head_layers), reversed(hc)):
            g, pg = layer.backward(cache, g)
            head_grads[:0] = pg
        gt = g[:, :32]
        gh = g[:, 32:]
        for layer, cache in zip(reversed(self.tab_layers), reversed(tc)):
            gt, pg = layer.backward(cache, gt)
            tab_grads[:0] = pg
        for layer, cache in zip(reversed(self.hist_layers), reversed(gc)):
            gh, pg = layer.backward(cache, gh)
            hist_grads[:0] = pg
        return tab_grads + hist_grads + head_grads


def transform(mode: Mode, raw: np.ndarray) -> np.ndarray:
    """Delivered-output transform: clamp to [0, 1] (accuracy) or map through
    10**raw and clamp to [1e-5, 1] (ratio)."""
    if mode == Mode.ACCURACY:
        return np.clip(raw, 0.0, 1.0)
    return np.clip(np.power(10.0, raw), RATIO_MIN, 1.0)


def train_transform_with_grad(mode: Mode, raw: np.ndarray):
    """Loss-path transform and derivative.

    Same monotone map as ``transform`` but without the saturating clamps: a
    hard clamp has zero gradient outside its interval, so a batch that lands
    beyond the boundary would freeze training for good.  The clamps still
    bound everything the model ever reports.
    """
    if mode == Mode.ACCURACY:
        return raw, np.ones_like(raw)
    g = np.power(10.0, raw)
    return g, math.log(10.0) * g


@dataclass
class Model:
    """A dual-branch network plus everything needed to use it: mode, histogram
    resolution, feature scaling, and the hyperparameters it was trained with."""

    mode: Mode
    h: int
    net: DualBranchNet
    scaler: FeatureScaler = field(default_factory=FeatureScaler)
    hyper: TrainHyper = field(default_factory=TrainHyper)
    seed: int = 0

    def param_arrays(self):
        return self.net.param_arrays()

    def predict_batch(self, qs, drivers, hists) -> np.ndarray:
        tab = self.scaler.tab(np.asarray(qs, float), np.asarray(drivers, float))
        hist = np.asarray(hists, float) * self.scaler.hist_scale
        raw, _ = self.net.forward(tab, hist)
        return transform(self.mode, raw)


def build_network(mode: Mode | str, h: int, seed: int) -> Model:
    """Fresh model with fan-in-scaled, seeded initial weights."""
    mode = Mode(mode)
    if h not in SUPPORTED_H:
        raise ValueError(f"unsupported h={h}; choose one of {SUPPORTED_H}")
    seed = rng.check_seed(seed)
    net = DualBranchNet(h)
    net.init_params(seed)
    return Model(mode=mode, h=h, net=net, seed=seed)


def predict(model: Model, features: TabularFeatures, hist: HistogramGrid) -> float:
    """Single prediction; accuracy in [0, 1] or ratio in [1e-5, 1] by mode."""
    if hist.h != model.h:
        raise ValueError(f"histogram h={hist.h} does not match model h={model.h}")
    out = model.predict_batch(
        np.array([features.q]),
        np.array([features.driver]),
        hist.values[None, None, :, :],
    )
    return float(out[0])


def estimate_sampling_ratio(model: Model, q: float, alpha: float, hist: HistogramGrid) -> float:
    """Sampling ratio predicted to reach accuracy alpha on this dataset."""
    if model.mode != Mode.RATIO:
        raise ValueError("model is not a ratio-estimation model")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return predict(model, ratio_features(q, alpha), hist)


def _row_arrays(mode: Mode, rows, hists, h: int):
    """Feature/target/histogram-stack arrays for a table of training rows."""
    ids = []
    for row in rows:
        if row.dataset_id not in hists:
            raise KeyError(f"missing histogram for dataset {row.dataset_id!r}")
        if row.dataset_id not in ids:
            ids.append(row.dataset_id)
    stack = np.stack([hists[i].values for i in ids])[:, None, :, :]
    idx = {d: i for i, d in enumerate(ids)}
    qs = np.array([row.q for row in rows], dtype=np.float64)
    drivers = np.empty(len(rows))
    targets = np.empty(len(rows))
    hrefs = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        f = features_for(mode, row.q, row.sigma, row.mean_accuracy)
        drivers[i] = f.driver
        targets[i] = target_for(mode, row.sigma, row.mean_accuracy)
        hrefs[i] = idx[row.dataset_id]
    if (targets <= 0.0).any():
        raise ValueError("training targets must be positive for MAPE")
    for i in ids:
        if hists[i].h != h:
            raise ValueError(f"histogram for {i!r} has h={hists[i].h}, expected {h}")
    return qs, drivers, targets, hrefs, stack


def train(model: Model, rows, hists, hyper: TrainHyper | None = None, seed: int = 0):
    """Mini-batch MAPE training with early stopping; returns epoch history.

    Deterministic for a fixed (model seed, rows, seed): batch order and the
    validation split come from the derived stream, reductions are fixed.
    The weights of the best validation epoch are restored at the end.
    """
    hyper = hyper or model.hyper
    model.hyper = hyper
    seed = rng.check_seed(seed)
    rows = list(rows)
    if not rows:
        raise ValueError("empty training table")
    qs, drivers, targets, hrefs, stack = _row_arrays(model.mode, rows, hists, model.h)

    n = len(rows)
    perm = rng.permutation(rng.derive(seed, _TAG_VAL_SPLIT), n)
    n_val = min(max(1, round(hyper.val_fraction * n)), n - 1) if n > 1 else 1
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:] if n > 1 else perm

    model.scaler = FeatureScaler.fit(qs[tr_idx], drivers[tr_idx], model.h)
    tab_all = model.scaler.tab(qs, drivers)
    hist_all = stack * model.scaler.hist_scale

    # center the output on the mean (transformed) target before the first
    # step: starting at 10**0 = 1 in ratio mode puts MAPE orders of magnitude
    # off and the early stopper would fire mid-descent
    if model.mode == Mode.RATIO:
        center = float(np.mean(np.log10(targets[tr_idx])))
    else:
        center = float(np.mean(targets[tr_idx]))
    model.net.head_layers[-1].b[...] = center

    params = model.net.param_arrays()
    opt = Adam(params, hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.epsilon)

    def eval_mape(idx) -> float:
        preds = np.empty(idx.size)
        for a in range(0, idx.size, 256):
            part = idx[a : a + 256]
            raw, _ = model.net.forward(tab_all[part], hist_all[hrefs[part]])
            preds[a : a + 256] = transform(model.mode, raw)
        return float(np.mean(np.abs(targets[idx] - preds) / np.abs(targets[idx])))

    history: list[EpochStats] = []
    best_val = math.inf
    best_params = [p.copy() for p in params]
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(hyper.max_epochs):
        order = tr_idx[rng.permutation(rng.derive(seed, _TAG_EPOCH, epoch), tr_idx.size)]
        loss_sum = 0.0
        for a in range(0, order.size, hyper.batch):
            part = order[a : a + hyper.batch]
            raw, caches = model.net.forward(tab_all[part], hist_all[hrefs[part]])
            pred, dpred = train_transform_with_grad(model.mode, raw)
            loss, gpred = mape_loss(pred, targets[part])
            grads = model.net.backward(caches, gpred * dpred)
            opt.step(params, grads)
            loss_sum += loss * part.size
        train_mape = loss_sum / order.size
        val_mape = eval_mape(val_idx)
        history.append(
            EpochStats(epoch, train_mape, val_mape, time.perf_counter() - t0)
        )
        if val_mape < best_val - hyper.min_delta:
            best_val = val_mape
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    for p, b in zip(params, best_params):
        p[...] = b
    return history


# ---------------------------------------------------------------------------
# linear-regression baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LRParams:
    """Ordinary least squares on [1, q, driver] with the mode's output clamp."""

    mode: Mode
    intercept: float
    coef_q: float
    coef_driver: float


def lr_fit(rows, mode: Mode | str) -> LRParams:
    mode = Mode(mode)
    rows = list(rows)
    if len(rows) < 3:
        raise ValueError("need at least 3 rows to fit the linear baseline")
    x = np.empty((len(rows), 3))
    y = np.empty(len(rows))
    for i, row in enumerate(rows):
        f = features_for(mode, row.q, row.sigma, row.mean_accuracy)
        x[i] = (1.0, f.q, f.driver)
        y[i] = target_for(mode, row.sigma, row.mean_accuracy)
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 3:
        raise ValueError("degenerate training table")
    return LRParams(mode, float(coef[0]), float(coef[1]), float(coef[2]))


def lr_predict(params: LRParams, features: TabularFeatures) -> float:
    raw = params.intercept + params.coef_q * features.q + params.coef_driver * features.driver
    if params.mode == Mode.ACCURACY:
        return float(min(1.0, max(0.0, raw)))
    return float(min(1.0, max(RATIO_MIN, raw)))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "format=aqpcal-model/1"
_LR_MAGIC = "format=aqpcal-lr/1"


def save_model(path, model: Model) -> None:
    """Write the structured-text model file (exact float round trip)."""
    from .nn import write_tensor

    hy = model.hyper
    lines = [
        _MODEL_MAGIC,
        f"mode={model.mode.value}",
        f"h={model.h}",
        f"seed={model.seed}",
        "scale=" + ",".join(repr(float(v)) for v in model.scaler.as_tuple()),
        (
            "hyper="
            f"batch={hy.batch};learning_rate={hy.learning_rate!r};"
            f"beta1={hy.beta1!r};beta2={hy.beta2!r};epsilon={hy.epsilon!r};"
            f"patience={hy.patience};max_epochs={hy.max_epochs};"
            f"val_fraction={hy.val_fraction!r};min_delta={hy.min_delta!r}"
        ),
        "layers="
        + "|".join(
            f"{name}:{layer.kind}"
            for name, layers in (
                ("tab", model.net.tab_layers),
                ("hist", model.net.hist_layers),
                ("head", model.net.head_layers),
            )
            for layer in layers
        ),
    ]
    for name, arr in model.net.named_params():
        write_tensor(lines, name, arr)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path) -> Model:
    from .nn import read_tensors

    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MODEL_MAGIC:
        raise ValueError(f"{path} is not a model file")
    meta = {}
    body_start = 0
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("tensor "):
            body_start = i
            break
        k, _, v = line.partition("=")
        meta[k] = v
    model = build_network(Mode(meta["mode"]), int(meta["h"]), int(meta.get("seed", 0)))
    sc = [float(v) for v in meta["scale"].split(",")]
    model.scaler = FeatureScaler(*sc)
    if "hyper" in meta:
        kv = dict(item.split("=") for item in meta["hyper"].split(";"))
        model.hyper = TrainHyper(
            batch=int(kv["batch"]),
            learning_rate=float(kv["learning_rate"]),
            beta1=float(kv["beta1"]),
            beta2=float(kv["beta2"]),
            epsilon=float(kv["epsilon"]),
            patience=int(kv["patience"]),
            max_epochs=int(kv["max_epochs"]),
            val_fraction=float(kv["val_fraction"]),
            min_delta=float(kv["min_delta"]),
        )
    tensors = read_tensors(lines[body_start:])
    for name, arr in model.net.named_params():
        if name not in tensors:
            raise ValueError(f"model file is missing tensor {name!r}")
        if tensors[name].shape != arr.shape:
            raise ValueError(
                f"tensor {name!r} has shape {tensors[name].shape}, expected {arr.shape}"
            )
        arr[...] = tensors[name]
    return model


def save_lr(path, params: LRParams) -> None:
    text = (
        f"{_LR_MAGIC}\n"
        f"mode={params.mode.value}\n"
        f"intercept={params.intercept!r}\n"
        f"coef_q={params.coef_q!r}\n"
        f"coef_driver={params.coef_driver!r}\n"
    )
    atomic_write_text(path, text)


def load_lr(path) -> LRParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _LR_MAGIC:
        raise ValueError(f"{path} is not a linear-baseline file")
    meta = dict(line.partition("=")[::2] for line in lines[1:] if line)
    return LRParams(
        Mode(meta["mode"]),
        float(meta["intercept"]),
        float(meta["coef_q"]),
        float(meta["coef_driver"]),
    )


def load_any(path):
    """Load either model file kind by magic line."""
    first = Path(path).read_text().splitlines()[0] if Path(path).exists() else ""
    if first == _LR_MAGIC:
        return load_lr(path)
    return load_model(path)
