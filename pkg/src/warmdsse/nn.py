"""Single-hidden-layer network g(z) = sum_t alpha_t sigma(w_t^T z + beta_t) with an
epsilon-insensitive squared loss, trained by mini-batch Adam in numpy."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SCHEMA = "nnmodel/1"


class ModelFileError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def logistic(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(eq=False)
class NnModel:
    W: np.ndarray  # T x L
    b: np.ndarray  # T
    A: np.ndarray  # K_out x T
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    activation: str = "logistic"
    fingerprint: str = ""

    def __post_init__(self):
        T, L = self.W.shape
        if self.b.shape != (T,) or self.A.shape[1] != T:
            raise ValueError("inconsistent parameter shapes")
        if self.in_mean.shape != (L,) or self.in_std.shape != (L,):
            raise ValueError("input normalisation must have length L")
        if self.out_mean.shape != (self.A.shape[0],) or self.out_std.shape != (self.A.shape[0],):
            raise ValueError("output normalisation must have length K_out")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("normalisation std entries must be positive")
        if self.activation != "logistic":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def L(self) -> int:
        return self.W.shape[1]

    @property
    def T(self) -> int:
        return self.W.shape[0]

    @property
    def K_out(self) -> int:
        return self.A.shape[0]

    def params(self):
        return self.W, self.b, self.A

    def copy(self) -> "NnModel":
        return NnModel(
            self.W.copy(), self.b.copy(), self.A.copy(), self.in_mean.copy(), self.in_std.copy(),
            self.out_mean.copy(), self.out_std.copy(), self.activation, self.fingerprint,
        )


def _hidden(m: NnModel, Z):
    Zn = (Z - m.in_mean) / m.in_std
    return Zn, logistic(Zn @ m.W.T + m.b)


def forward(m: NnModel, z) -> np.ndarray:
    """De-normalised network output for one input (L,) or a batch (N, L)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != m.L:
        raise ValueError(f"input length {z.shape[-1]} does not match L={m.L}")
    _, Hd = _hidden(m, np.atleast_2d(z))
    out = m.out_mean + m.out_std * (Hd @ m.A.T)
    return out[0] if z.ndim == 1 else out


EPS_SPACES = ("pu", "normalized")


def _check_space(space):
    if space not in EPS_SPACES:
        raise ValueError(f"eps_space must be one of {EPS_SPACES}")


def _sq_err(m, Z, V, space="pu"):
    E = np.atleast_2d(V) - forward(m, np.atleast_2d(Z))
    if space == "normalized":
        E = E / m.out_std
    return np.sum(E * E, axis=1)


def hinge_loss(m: NnModel, z, v_target, epsilon: float, space: str = "pu") -> float:
    """max(||v - g(z)||^2 - eps^2, 0); batch inputs give the mean.

    ``space="normalized"`` measures the error in standardised output units.
    """
    _check_space(space)
    return float(np.mean(np.maximum(_sq_err(m, z, v_target, space) - epsilon**2, 0.0)))


def conventional_loss(m: NnModel, z, v_target) -> float:
    return float(np.mean(_sq_err(m, z, v_target)))


@dataclass
class Gradients:
    W: np.ndarray
    b: np.ndarray
    A: np.ndarray

    def as_tuple(self):
        return self.W, self.b, self.A


def loss_gradient(m: NnModel, Z, V, epsilon: float, space: str = "pu") -> Gradients:
    """Exact gradient of the mean hinge loss; samples inside the ball contribute 0."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if len(Z) == 0:
        raise ValueError("empty batch")
    Zn, Hd = _hidden(m, Z)
    G = m.out_mean + m.out_std * (Hd @ m.A.T)
    E = V - G
    _check_space(space)
    if space == "normalized":
        E = E / m.out_std**2
        active = np.sum(E * E * m.out_std**2, axis=1) > epsilon**2
    else:
        active = np.sum(E * E, axis=1) > epsilon**2
    dG = np.where(active[:, None], -2.0 * E, 0.0) / len(Z)
    dO = dG * m.out_std
    gA = dO.T @ Hd
    dPre = (dO @ m.A) * Hd * (1.0 - Hd)
    return Gradients(dPre.T @ Zn, dPre.sum(axis=0), gA)


@dataclass(frozen=True)
class TrainConfig:
    epsilon: float = 0.0
    hidden: int = 512
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    patience: int = 10
    split: float = 0.9
    stop_at_zero: bool = False
    eps_space: str = "pu"

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        _check_space(self.eps_space)


@dataclass
class TrainingTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_hinge,val_hinge\n")
            for k, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                fh.write(f"{k},{tr!r},{va!r}\n")


def _in_std(x):
    # near-constant features (relative spread below 1e-6) are left unscaled so
    # that test-time noise on them is not amplified
    s = x.std(axis=0)
    return np.where(s > 1e-6 * (1.0 + np.abs(x.mean(axis=0))), s, 1.0)


def _out_std(x):
    # constant outputs (e.g. the slack bus) keep a tiny scale: the network then
    # reproduces the training mean there
    return np.maximum(x.std(axis=0), 1e-9)


def init_model(Z, V, hidden: int, rng: np.random.Generator, fingerprint: str = "") -> NnModel:
    L, K = Z.shape[1], V.shape[1]
    lim_w = math.sqrt(6.0 / (L + hidden))
    lim_a = math.sqrt(6.0 / (hidden + K))
    return NnModel(
        W=rng.uniform(-lim_w, lim_w, size=(hidden, L)),
        b=np.zeros(hidden),
        A=rng.uniform(-lim_a, lim_a, size=(K, hidden)),
        in_mean=Z.mean(axis=0), in_std=_in_std(Z),
        out_mean=V.mean(axis=0), out_std=_out_std(V),
        fingerprint=fingerprint,
    )


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(Z_tr, V_tr, Z_va, V_va, cfg: TrainConfig, fingerprint: str = ""):
    """Train on an explicit split; returns the best-validation model and its trace."""
    rng = np.random.default_rng(cfg.seed)
    if len(Z_tr) < 10 * cfg.hidden:
        log.warning("training set (%d) smaller than 10x hidden size (%d)", len(Z_tr), cfg.hidden)
    model = init_model(Z_tr, V_tr, cfg.hidden, rng, fingerprint)
    params = list(model.params())
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2)
    trace = TrainingTrace()
    best, best_val, stale = model.copy(), np.inf, 0
    n = len(Z_tr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            g = loss_gradient(model, Z_tr[idx], V_tr[idx], cfg.epsilon, cfg.eps_space)
            opt.step(params, g.as_tuple())
        tr = hinge_loss(model, Z_tr, V_tr, cfg.epsilon, cfg.eps_space)
        va = hinge_loss(model, Z_va, V_va, cfg.epsilon, cfg.eps_space) if len(Z_va) else tr
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.train_loss.append(tr)
        trace.val_loss.append(va)
        if va < best_val:
            best, best_val, stale = model.copy(), va, 0
            trace.best_epoch = epoch
        else:
            stale += 1
        if stale >= cfg.patience:
            break
        if cfg.stop_at_zero and tr == 0.0 and va == 0.0:
            break
    return best, trace


def train(dataset, cfg: TrainConfig, expected_fingerprint: str | None = None):
    """Split ``dataset`` (``Z``, ``V`` arrays plus ``fingerprint``) and fit."""
    from .dataset import split_dataset

    fp = getattr(dataset, "fingerprint", "")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise TrainingError("dataset fingerprint does not match the feeder/measurement layout")
    tr, va = split_dataset(dataset, cfg.split, cfg.seed)
    return fit(tr.Z, tr.V, va.Z, va.V, cfg, fp)


def save_model(m: NnModel, path) -> None:
    doc = {
        "schema": SCHEMA,
        "L": m.L, "T": m.T, "K_out": m.K_out,
        "activation": m.activation,
        "fingerprint": m.fingerprint,
        "W": m.W.ravel().tolist(), "b": m.b.tolist(), "A": m.A.ravel().tolist(),
        "in_mean": m.in_mean.tolist(), "in_std": m.in_std.tolist(),
        "out_mean": m.out_mean.tolist(), "out_std": m.out_std.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path, expected_fingerprint: str | None = None) -> NnModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ModelFileError(f"{path}: unsupported model schema {doc.get('schema') if isinstance(doc, dict) else None!r}")
    try:
        L, T, K = int(doc["L"]), int(doc["T"]), int(doc["K_out"])
        m = NnModel(
            W=np.array(doc["W"], dtype=float).reshape(T, L),
            b=np.array(doc["b"], dtype=float),
            A=np.array(doc["A"], dtype=float).reshape(K, T),
            in_mean=np.array(doc["in_mean"], dtype=float), in_std=np.array(doc["in_std"], dtype=float),
            out_mean=np.array(doc["out_mean"], dtype=float), out_std=np.array(doc["out_std"], dtype=float),
            activation=doc["activation"], fingerprint=doc.get("fingerprint", ""),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFileError(f"{path}: corrupt model file ({exc})") from None
    if expected_fingerprint is not None and m.fingerprint != expected_fingerprint:
        raise ModelFileError(f"{path}: model was trained for a different feeder/measurement layout")
    return m
