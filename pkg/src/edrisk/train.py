"""Training loop: mean negative log likelihood, exact backpropagation,
SGD / SGD-with-momentum, linear step-size decay, and early stopping on
validation balanced accuracy with checkpoint restore.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import MLPModel, ShapeMismatch, hidden_activations, selu_prime, sigmoid

PROB_EPS = 1e-12  # clamp inside the loss only; gradients use P - y directly


class TrainError(Exception):
    pass


class EmptySet(TrainError):
    pass


class DivergenceDetected(TrainError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = "sgd_momentum"  # "sgd" or "sgd_momentum"
    momentum: float = 0.9
    eta0: float = 0.01
    total_steps: int = 10000
    eta_floor: float = 0.0
    batch_size: int = 256
    eval_every: int = 0  # 0 means once per epoch-equivalent
    patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise TrainError(f"momentum {self.momentum} outside [0, 1)")
        if not self.eta0 > self.eta_floor >= 0.0:
            raise TrainError(f"need eta0 > eta_floor >= 0, got {self.eta0}, {self.eta_floor}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size {self.batch_size} < 1")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LogEntry:
    step: int
    train_loss: float
    val_accuracy: float
    val_sensitivity: float
    val_specificity: float
    step_size: float


@dataclass
class TrainLog:
    entries: list[LogEntry] = field(default_factory=list)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("step\ttrain_loss\tval_accuracy\tval_sensitivity\tval_specificity\tstep_size\n")
            for e in self.entries:
                f.write(
                    f"{e.step}\t{e.train_loss!r}\t{e.val_accuracy!r}\t"
                    f"{e.val_sensitivity!r}\t{e.val_specificity!r}\t{e.step_size!r}\n"
                )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_w: np.ndarray
    out_b: float


def _check_batch(model, X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"X has shape {X.shape}, model expects (*, {model.n_inputs})")
    if y.shape != (X.shape[0],):
        raise ShapeMismatch(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    return X, y


def loss(model: MLPModel, X: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log likelihood of the labels under the model."""
    X, y = _check_batch(model, X, y)
    P = np.clip(
        sigmoid(hidden_activations(model, X)[-1] @ model.out_w + model.out_b),
        PROB_EPS,
        1.0 - PROB_EPS,
    )
    return float(-np.mean(y * np.log(P) + (1.0 - y) * np.log(1.0 - P)))


def grad(model: MLPModel, X: np.ndarray, y: np.ndarray) -> Gradients:
    """Exact gradient of the mean negative log likelihood via backpropagation."""
    X, y = _check_batch(model, X, y)
    n = X.shape[0]
    # forward, keeping pre-activations
    zs, hs = [], [X]
    h = X
    for W, b in zip(model.weights, model.biases):
        z = h @ W + b
        zs.append(z)
        h = model.selu_lambda * np.where(z > 0, z, model.selu_alpha * np.expm1(np.minimum(z, 0.0)))
        hs.append(h)
    P = sigmoid(h @ model.out_w + model.out_b)

    delta_u = (P - y) / n
    g_out_w = hs[-1].T @ delta_u
    g_out_b = float(delta_u.sum())
    dWs = [None] * model.depth
    dbs = [None] * model.depth
    delta_h = np.outer(delta_u, model.out_w)
    for i in range(model.depth - 1, -1, -1):
        delta_z = delta_h * selu_prime(zs[i])
        dWs[i] = hs[i].T @ delta_z
        dbs[i] = delta_z.sum(axis=0)
        if i > 0:
            delta_h = delta_z @ model.weights[i].T
    return Gradients(weights=dWs, biases=dbs, out_w=g_out_w, out_b=g_out_b)


def step_size(t: int, cfg: TrainConfig) -> float:
    """Linear decay from eta0 to eta_floor over total_steps."""
    return max(cfg.eta_floor, cfg.eta0 * (1.0 - t / cfg.total_steps))


def _validation_metrics(model, X_val, y_val, threshold=0.5):
    probs = sigmoid(hidden_activations(model, X_val)[-1] @ model.out_w + model.out_b)
    pred = probs >= threshold
    pos = y_val == 1
    neg = ~pos
    acc = float(np.mean(pred == pos))
    sens = float(np.mean(pred[pos])) if pos.any() else float("nan")
    spec = float(np.mean(~pred[neg])) if neg.any() else float("nan")
    return acc, sens, spec


def train(
    model: MLPModel,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> tuple[MLPModel, TrainLog, str]:
    """Minibatch SGD with shuffled epochs.  Evaluates validation metrics every
    eval_every steps (default: once per epoch) and stops after `patience`
    consecutive evaluations without a min_delta improvement in balanced
    accuracy; the returned model is the best-validation checkpoint."""
    X_tr, y_tr = _check_batch(model, *train_set)
    X_val, y_val = _check_batch(model, *val_set)
    if X_tr.shape[0] == 0 or X_val.shape[0] == 0:
        raise EmptySet("train and validation sets must be non-empty")

    n = X_tr.shape[0]
    steps_per_epoch = max(1, int(np.ceil(n / cfg.batch_size)))
    eval_every = cfg.eval_every if cfg.eval_every > 0 else steps_per_epoch

    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    use_momentum = cfg.optimizer == "sgd_momentum"
    mu = cfg.momentum if use_momentum else 0.0
    vel = Gradients(
        weights=[np.zeros_like(W) for W in model.weights],
        biases=[np.zeros_like(b) for b in model.biases],
        out_w=np.zeros_like(model.out_w),
        out_b=0.0,
    )

    log = TrainLog()
    best = model.copy()
    best_metric = -np.inf
    bad_evals = 0
    stop_reason = "budget_exhausted"
    t = 0
    done = False
    while not done:
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            g = grad(model, X_tr[batch], y_tr[batch])
            eta = step_size(t, cfg)
            for i in range(model.depth):
                vel.weights[i] = mu * vel.weights[i] - eta * g.weights[i]
                vel.biases[i] = mu * vel.biases[i] - eta * g.biases[i]
                model.weights[i] += vel.weights[i]
                model.biases[i] += vel.biases[i]
            vel.out_w = mu * vel.out_w - eta * g.out_w
            vel.out_b = mu * vel.out_b - eta * g.out_b
            model.out_w += vel.out_w
            model.out_b += vel.out_b
            t += 1

            if t % eval_every == 0 or t >= cfg.total_steps:
                train_loss = loss(model, X_tr, y_tr)
                if not np.isfinite(train_loss):
                    raise DivergenceDetected(f"non-finite training loss at step {t}")
                acc, sens, spec = _validation_metrics(model, X_val, y_val)
                log.entries.append(LogEntry(t, train_loss, acc, sens, spec, step_size(t, cfg)))
                balanced = np.nanmean([sens, spec])
                first_eval = best_metric == -np.inf
                if first_eval or balanced > best_metric + cfg.min_delta:
                    best_metric = balanced
                    best = model.copy()
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        stop_reason = "early_stop"
                        done = True
                        break
            if t >= cfg.total_steps:
                done = True
                break
    return best, log, stop_reason
