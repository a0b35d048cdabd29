"""A small fully connected network with hand-written backpropagation.

ReLU hidden layers with inverted dropout during training, a tanh output
layer, and two flavours of the squared-log loss.  Parameters are stored as
float64 so that finite-difference checks are meaningful.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError

SHIFT = 2.0  # log(x + 1 + 1): maps the [-1, 1] range to [0, 2] before the +1

LOSSES = ("msle", "msle-ratio")


def _log_shifted(x, name):
    z = np.asarray(x, dtype=np.float64) + SHIFT
    if np.any(z <= 0):
        raise ValueError(f"{name} must be greater than {-SHIFT} for the log")
    return np.log(z)


def msle(target, output) -> float:
    """Conventional squared log difference ``mean((log(y + 2) - log(o + 2))^2)``; 0 when equal."""
    return float(np.mean((_log_shifted(target, "target") - _log_shifted(output, "output")) ** 2))


def msle_ratio(target, output) -> float:
    """Ratio form ``mean((log(y + 2) / log(o + 2))^2)``; 1 when equal.

    Not a usable training loss on its own: for a fixed target it keeps
    falling as the output grows, so it rewards saturating every output.
    """
    lo = _log_shifted(output, "output")
    if np.any(lo <= 0):
        raise ValueError("output must be greater than -1 for the ratio form")
    return float(np.mean((_log_shifted(target, "target") / lo) ** 2))


def loss_and_grad(kind: str, target: np.ndarray, output: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``output``."""
    n = output.size
    ly = _log_shifted(target, "target")
    lo = _log_shifted(output, "output")
    if kind == "msle":
        d = lo - ly
        return float(np.mean(d * d)), 2.0 * d / (output + SHIFT) / n
    if kind == "msle-ratio":
        if np.any(lo <= 0):
            raise ValueError("output must be greater than -1 for the ratio form")
        r = ly / lo
        return float(np.mean(r * r)), -2.0 * r * r / lo / (output + SHIFT) / n
    raise ValueError(f"unknown loss {kind!r}; choose from {LOSSES}")


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: float = 0.0

    @classmethod
    def create(cls, sizes, seed: int = 0, dropout: float = 0.0) -> "Mlp":
        """He-uniform initialisation for ReLU layers, Glorot-uniform for the tanh output."""
        rng = np.random.default_rng(seed)
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes, all positive")
        W, b = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            limit = math.sqrt(6.0 / (n_in + n_out)) if last else math.sqrt(6.0 / n_in)
            W.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            b.append(np.zeros(n_out))
        return cls(sizes, W, b, dropout)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, X: np.ndarray, rng: np.random.Generator | None = None, cache: list | None = None) -> np.ndarray:
        """Forward pass; dropout is applied only when ``rng`` is given."""
        h = np.asarray(X, dtype=np.float64)
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i == n_layers - 1:
                out = np.tanh(z)
                if cache is not None:
                    cache.append((h, None, out))
                return out
            a = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            if cache is not None:
                cache.append((h, z, mask))
            h = a
        return h

    def predict(self, X) -> np.ndarray:
        return self.forward(X)

    def gradients(self, X, Y, loss: str = "msle", rng=None) -> tuple[float, list, list]:
        cache: list = []
        out = self.forward(X, rng=rng, cache=cache)
        value, g = loss_and_grad(loss, Y, out)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        h, _, o = cache[-1]
        delta = g * (1.0 - o * o)
        for i in range(len(self.weights) - 1, -1, -1):
            h = cache[i][0]
            gW[i] = h.T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                _, z_prev, mask_prev = cache[i - 1]
                delta = delta @ self.weights[i].T
                delta = delta * (z_prev > 0)
                if mask_prev is not None:
                    delta = delta * mask_prev
        return value, gW, gb

    def loss(self, X, Y, loss: str = "msle") -> float:
        return loss_and_grad(loss, Y, self.forward(X))[0]

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout)

    # -- checkpoint -------------------------------------------------------

    MAGIC = b"NILMMLP1"

    def save(self, path, meta: dict | None = None) -> None:
        """Versioned binary dump: magic, header length, JSON header, raw little-endian float64."""
        header = {"format": 1, "sizes": list(self.sizes), "dropout": self.dropout, "activation": "relu", "output": "tanh", "meta": meta or {}}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["Mlp", dict]:
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != cls.MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (n,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12 : 12 + n])
        if header.get("format") != 1:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
        sizes = header["sizes"]
        pos = 12 + n
        W, b = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=pos).reshape(n_in, n_out)
            pos += 8 * n_in * n_out
            bb = np.frombuffer(data, dtype="<f8", count=n_out, offset=pos)
            pos += 8 * n_out
            W.append(w.astype(np.float64))
            b.append(bb.astype(np.float64))
        if pos != len(data):
            raise ValueError(f"{path}: checkpoint size does not match its header")
        return cls(tuple(sizes), W, b, header["dropout"]), header["meta"]


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch: int = 2048
    momentum: float = 0.0
    epochs: int = 300
    patience: int = 5
    val_fraction: float = 0.05
    loss: str = "msle"
    seed: int = 0
    optimizer: str = "sgd"  # or "adam"


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for e, tr, va in self.rows:
                fh.write(f"{e},{tr!r},{va!r}\n")


def _adam(param, grad, m, v, lr, step, b1=0.9, b2=0.999, eps=1e-8):
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    param -= lr * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)


def train(model: Mlp, X: np.ndarray, Y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> tuple[Mlp, TrainLog]:
    """Mini-batch gradient descent with early stopping on a chronological hold-out.

    The last ``val_fraction`` of the rows (in the given order) is held out.
    Training stops once the validation loss has not improved for
    ``patience`` epochs and the best weights are restored.
    """
    if cfg.loss not in LOSSES:
        raise ValueError(f"unknown loss {cfg.loss!r}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if n < 2 or Y.shape[0] != n:
        raise ValueError("need at least two aligned rows to train")
    n_val = max(1, int(round(cfg.val_fraction * n)))
    Xt, Yt, Xv, Yv = X[: n - n_val], Y[: n - n_val], X[n - n_val :], Y[n - n_val :]
    rng = np.random.default_rng(cfg.seed)
    if cfg.optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    vel_W = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    sq_W = [np.zeros_like(w) for w in model.weights]
    sq_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    best, best_val = model.copy(), model.loss(Xv, Yv, cfg.loss)
    log = TrainLog(rows=[(0, model.loss(Xt, Yt, cfg.loss), best_val)])
    since = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(Xt.shape[0])
        total = 0.0
        for s in range(0, order.size, cfg.batch):
            idx = order[s : s + cfg.batch]
            value, gW, gb = model.gradients(Xt[idx], Yt[idx], cfg.loss, rng=rng)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            total += value * idx.size
            step += 1
            for i in range(len(model.weights)):
                if cfg.optimizer == "sgd":
                    vel_W[i] = cfg.momentum * vel_W[i] - cfg.lr * gW[i]
                    vel_b[i] = cfg.momentum * vel_b[i] - cfg.lr * gb[i]
                    model.weights[i] += vel_W[i]
                    model.biases[i] += vel_b[i]
                else:
                    _adam(model.weights[i], gW[i], vel_W[i], sq_W[i], cfg.lr, step)
                    _adam(model.biases[i], gb[i], vel_b[i], sq_b[i], cfg.lr, step)
        val = model.loss(Xv, Yv, cfg.loss)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        log.rows.append((epoch, total / Xt.shape[0], val))
        if val < best_val:
            best, best_val, log.best_epoch, since = model.copy(), val, epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                log.stopped_early = True
                break
    return best, log
