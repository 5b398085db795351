"""Feed-forward MLP surrogate: forward, exact Jacobian, Adam training.

Maps the flattened deformation gradient (row-major, d^2 components) to the
flattened averaged stress. Inputs and outputs are normalized per component
with statistics of the training split; the Jacobian includes the
normalization scaling and the exact (erf-based) GELU derivative, so Newton
tangents built from it are consistent.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DivergedLoss, ParseError, ShapeMismatch, VersionMismatch

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ACTIVATION_TAGS = {"gelu": 0, "tanh": 1, "sigmoid": 2}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}


def gelu(x: np.ndarray) -> np.ndarray:
    """x * Phi(x) with the exact Gaussian CDF."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_prime(x: np.ndarray) -> np.ndarray:
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACT = {
    "gelu": (gelu, gelu_prime),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
}


@dataclass
class MlpModel:
    """Dense MLP with per-hidden-layer activations and linear output."""

    dim: int                       # tensor dimension; width is dim^2
    hidden: list
    activations: list              # one tag per hidden layer
    weights: list                  # (n_in, n_out) arrays, row-vector convention
    biases: list
    mu_in: np.ndarray
    s_in: np.ndarray
    mu_out: np.ndarray
    s_out: np.ndarray

    @property
    def width(self) -> int:
        return self.dim * self.dim

    def copy(self) -> "MlpModel":
        return MlpModel(
            dim=self.dim, hidden=list(self.hidden),
            activations=list(self.activations),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            mu_in=self.mu_in.copy(), s_in=self.s_in.copy(),
            mu_out=self.mu_out.copy(), s_out=self.s_out.copy(),
        )


def init_model(dim: int, hidden, activation, seed: int = 0) -> MlpModel:
    """Fan-in scaled uniform init; `activation` is one tag or one per layer."""
    hidden = list(hidden)
    if isinstance(activation, str):
        activations = [activation] * len(hidden)
    else:
        activations = list(activation)
    if len(activations) != len(hidden):
        raise ValueError("one activation per hidden layer required")
    for a in activations:
        if a not in _ACT:
            raise ValueError(f"unknown activation {a!r}")
    rng = np.random.default_rng(seed)
    sizes = [dim * dim] + hidden + [dim * dim]
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    w = dim * dim
    return MlpModel(
        dim=dim, hidden=hidden, activations=activations,
        weights=weights, biases=biases,
        mu_in=np.zeros(w), s_in=np.ones(w),
        mu_out=np.zeros(w), s_out=np.ones(w),
    )


# ---------------------------------------------------------------------------
# forward / jacobian
# ---------------------------------------------------------------------------

def _forward_normalized(model: MlpModel, xh: np.ndarray, keep=False):
    """Forward through the layers in normalized space; xh is (m, d^2)."""
    pre = []
    a = xh
    n_hidden = len(model.hidden)
    for li in range(n_hidden):
        z = a @ model.weights[li] + model.biases[li]
        if keep:
            pre.append(z)
        a = _ACT[model.activations[li]][0](z)
    y = a @ model.weights[-1] + model.biases[-1]
    return (y, pre) if keep else y


def forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Stress predictions for flattened inputs X (m, d^2) -> (m, d^2)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.width:
        raise ShapeMismatch(
            f"expected (m, {model.width}) inputs, got {X.shape}"
        )
    xh = (X - model.mu_in) / model.s_in
    yh = _forward_normalized(model, xh)
    return yh * model.s_out + model.mu_out


def forward(model: MlpModel, F_bar: np.ndarray) -> np.ndarray:
    """Predicted stress tensor for one deformation gradient."""
    F_bar = np.asarray(F_bar, dtype=float)
    d = model.dim
    if F_bar.shape != (d, d):
        raise ShapeMismatch(f"expected {d}x{d} deformation gradient, got {F_bar.shape}")
    y = forward_batch(model, F_bar.reshape(1, d * d))
    return y.reshape(d, d)


def jacobian_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Exact d(vec P)/d(vec F) for each row of X: (m, d^2, d^2).

    Row index is the stress component, column index the deformation-gradient
    component (both row-major)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.width:
        raise ShapeMismatch(f"expected (m, {model.width}) inputs, got {X.shape}")
    m = X.shape[0]
    xh = (X - model.mu_in) / model.s_in
    _, pre = _forward_normalized(model, xh, keep=True)
    # chain[m, i, j] = d yhat_j / d xhat_i, accumulated forward
    chain = np.broadcast_to(
        model.weights[0], (m,) + model.weights[0].shape
    ).copy()
    for li, z in enumerate(pre):
        dact = _ACT[model.activations[li]][1](z)      # (m, n_li)
        chain = (chain * dact[:, None, :]) @ model.weights[li + 1]
    # d P_j / d F_i = s_out_j * chain[i, j] / s_in_i; transpose to (row=P)
    J = chain.transpose(0, 2, 1) * model.s_out[None, :, None] / model.s_in[None, None, :]
    return J


def jacobian(model: MlpModel, F_bar: np.ndarray) -> np.ndarray:
    F_bar = np.asarray(F_bar, dtype=float)
    d = model.dim
    if F_bar.shape != (d, d):
        raise ShapeMismatch(f"expected {d}x{d} deformation gradient, got {F_bar.shape}")
    return jacobian_batch(model, F_bar.reshape(1, d * d))[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1500
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    lr_decay_epoch: int = 1000
    lr_decay_factor: float = 0.1
    log_every: int = 0             # epochs between stdout lines; 0 = silent

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)   # per epoch, normalized MSE
    val_loss: list = field(default_factory=list)
    final_train_loss: float = np.nan
    final_val_loss: float = np.nan
    wall_time: float = 0.0


def _mse(model, X, Y):
    xh = (X - model.mu_in) / model.s_in
    yh = (Y - model.mu_out) / model.s_out
    pred = _forward_normalized(model, xh)
    return float(np.mean((pred - yh) ** 2))


def train(model: MlpModel, dataset, config: TrainConfig):
    """Adam on the normalized mean squared error.

    `dataset` is a data.Dataset (train/validation split tags respected).
    Normalization statistics come from the training split only. Deterministic
    for a fixed config seed. Returns (trained model, TrainReport)."""
    from .data import Dataset  # local import to avoid a cycle

    if isinstance(dataset, Dataset):
        Xtr, Ytr = dataset.arrays("train")
        Xva, Yva = dataset.arrays("validation")
    else:
        (Xtr, Ytr), (Xva, Yva) = dataset
    if len(Xtr) == 0:
        raise ValueError("empty training split")
    model = model.copy()
    model.mu_in = Xtr.mean(axis=0)
    model.s_in = np.where(Xtr.std(axis=0) > 0, Xtr.std(axis=0), 1.0)
    model.mu_out = Ytr.mean(axis=0)
    model.s_out = np.where(Ytr.std(axis=0) > 0, Ytr.std(axis=0), 1.0)

    xh = (Xtr - model.mu_in) / model.s_in
    yh = (Ytr - model.mu_out) / model.s_out

    rng = np.random.default_rng(config.seed)
    params = model.weights + model.biases
    m_mom = [np.zeros_like(p) for p in params]
    v_mom = [np.zeros_like(p) for p in params]
    t = 0
    n = len(xh)
    bs = min(config.batch_size, n)
    n_hidden = len(model.hidden)
    report = TrainReport()
    t_start = time.perf_counter()

    for epoch in range(config.epochs):
        lr = config.lr * (
            config.lr_decay_factor if epoch >= config.lr_decay_epoch else 1.0
        )
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            xb, yb = xh[idx], yh[idx]
            # forward with caches
            acts = [xb]
            pre = []
            a = xb
            for li in range(n_hidden):
                z = a @ model.weights[li] + model.biases[li]
                pre.append(z)
                a = _ACT[model.activations[li]][0](z)
                acts.append(a)
            out = a @ model.weights[-1] + model.biases[-1]
            diff = out - yb
            loss = float(np.mean(diff**2))
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * len(idx)
            # backward
            g_out = 2.0 * diff / diff.size
            grads_w = [None] * (n_hidden + 1)
            grads_b = [None] * (n_hidden + 1)
            grads_w[-1] = acts[-1].T @ g_out
            grads_b[-1] = g_out.sum(axis=0)
            g = g_out @ model.weights[-1].T
            for li in range(n_hidden - 1, -1, -1):
                g = g * _ACT[model.activations[li]][1](pre[li])
                grads_w[li] = acts[li].T @ g
                grads_b[li] = g.sum(axis=0)
                if li:
                    g = g @ model.weights[li].T
            # adam update
            t += 1
            b1c = 1.0 - config.beta1**t
            b2c = 1.0 - config.beta2**t
            for p, gr, mm, vv in zip(
                params, grads_w + grads_b, m_mom, v_mom
            ):
                mm *= config.beta1
                mm += (1 - config.beta1) * gr
                vv *= config.beta2
                vv += (1 - config.beta2) * gr**2
                p -= lr * (mm / b1c) / (np.sqrt(vv / b2c) + config.eps)
        report.train_loss.append(epoch_loss / n)
        if len(Xva):
            report.val_loss.append(_mse(model, Xva, Yva))
        if config.log_every and (epoch + 1) % config.log_every == 0:
            v = report.val_loss[-1] if report.val_loss else float("nan")
            print(f"epoch {epoch + 1}/{config.epochs}  "
                  f"train {report.train_loss[-1]:.3e}  val {v:.3e}")
    report.final_train_loss = _mse(model, Xtr, Ytr)
    if len(Xva):
        report.final_val_loss = _mse(model, Xva, Yva)
    report.wall_time = time.perf_counter() - t_start
    return model, report


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridResult:
    activations: list
    widths: list
    depths: list
    losses: np.ndarray            # (n_act, n_width, n_depth) final train loss
    best: tuple = ()              # (activation, width, depth)

    def best_loss_for(self, activation: str) -> float:
        i = self.activations.index(activation)
        return float(np.nanmin(self.losses[i]))

    def to_rows(self):
        rows = []
        for i, a in enumerate(self.activations):
            for j, w in enumerate(self.widths):
                for k, dd in enumerate(self.depths):
                    rows.append((a, w, dd, float(self.losses[i, j, k])))
        return rows


def grid_search(dataset, activations=("sigmoid", "tanh", "gelu"),
                widths=(64, 128, 256, 512), depths=(1, 2, 3),
                config: TrainConfig | None = None) -> GridResult:
    """Train one model per (activation, width, depth) cell; tabulate final
    training losses (normalized MSE). Failures are recorded as NaN."""
    if config is None:
        config = TrainConfig(epochs=300)
    dim = dataset.dim if hasattr(dataset, "dim") else 2
    res = GridResult(
        activations=list(activations), widths=list(widths),
        depths=list(depths),
        losses=np.full((len(activations), len(widths), len(depths)), np.nan),
    )
    best = (np.inf, ())
    for i, act in enumerate(activations):
        for j, w in enumerate(widths):
            for k, depth in enumerate(depths):
                model = init_model(dim, [w] * depth, act, seed=config.seed)
                try:
                    _, rep = train(model, dataset, config)
                except DivergedLoss:
                    continue
                res.losses[i, j, k] = rep.final_train_loss
                if rep.final_train_loss < best[0]:
                    best = (rep.final_train_loss, (act, w, depth))
    res.best = best[1]
    return res


# ---------------------------------------------------------------------------
# binary model format
# ---------------------------------------------------------------------------
# header: magic 'PHNN', u32 version, u32 dim, u32 n_hidden,
#         n_hidden x u32 widths, n_hidden x u8 activation tags;
# then per layer W then b (row-major float64),
# then mu_in, s_in, mu_out, s_out (each d^2 float64). Little-endian.

_MAGIC = b"PHNN"
_VERSION = 1


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, model.dim, len(model.hidden)))
        f.write(struct.pack(f"<{len(model.hidden)}I", *model.hidden)
                if model.hidden else b"")
        f.write(bytes(ACTIVATION_TAGS[a] for a in model.activations))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        for arr in (model.mu_in, model.s_in, model.mu_out, model.s_out):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path, expect_dim: int | None = None) -> MlpModel:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    if raw[:4] != _MAGIC:
        raise ParseError(f"{path}: not a porohom model file")
    try:
        version, dim, n_hidden = struct.unpack_from("<III", raw, 4)
        off = 16
        hidden = list(struct.unpack_from(f"<{n_hidden}I", raw, off))
        off += 4 * n_hidden
        tags = raw[off:off + n_hidden]
        off += n_hidden
        if version != _VERSION:
            raise VersionMismatch(
                f"{path}: model format version {version}, expected {_VERSION}"
            )
        activations = [_TAG_NAMES[t] for t in tags]
        sizes = [dim * dim] + hidden + [dim * dim]
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(raw, dtype="<f8", count=n_in * n_out, offset=off)
            off += 8 * n_in * n_out
            weights.append(w.reshape(n_in, n_out).copy())
            b = np.frombuffer(raw, dtype="<f8", count=n_out, offset=off)
            off += 8 * n_out
            biases.append(b.copy())
        norms = []
        for _ in range(4):
            v = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=off)
            off += 8 * dim * dim
            norms.append(v.copy())
        if off != len(raw):
            raise ParseError(f"{path}: trailing bytes in model file")
    except (struct.error, ValueError, KeyError) as exc:
        raise ParseError(f"{path}: truncated or corrupt model file") from exc
    if expect_dim is not None and dim != expect_dim:
        raise VersionMismatch(
            f"{path}: model dim {dim}, expected {expect_dim}"
        )
    return MlpModel(
        dim=dim, hidden=hidden, activations=activations,
        weights=weights, biases=biases,
        mu_in=norms[0], s_in=norms[1], mu_out=norms[2], s_out=norms[3],
    )
