"""Supervised-learning authentication test.

Transcripts are one-hot encoded and fed to a small feedforward network
(two rectifier hidden layers, logistic output) trained from scratch with
mini-batch Adam on binary cross-entropy.  Label 1 means "legitimate client".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from agentauth.engine import InteractionHistory, run_interaction
from agentauth.hypo import AuthVerdict
from agentauth.models import Pdt

DECISION_THRESHOLD = 0.5


@dataclass
class TrainConfig:
    n_legit: int = 4000
    n_adv: int = 4000
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("n_legit", "n_adv", "epochs", "batch_size", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def encode_history(history: InteractionHistory) -> np.ndarray:
    """One-hot encoding, per step: server block then client block."""
    n = history.n_actions
    v = np.zeros(2 * history.length * n)
    for t, (a_s, a_c) in enumerate(history.steps):
        v[2 * t * n + (a_s - 1)] = 1.0
        v[(2 * t + 1) * n + (a_c - 1)] = 1.0
    return v


def decode_history(vector: np.ndarray, n_actions: int) -> InteractionHistory:
    """Inverse of encode_history for valid encodings."""
    vector = np.asarray(vector)
    if vector.size % (2 * n_actions) != 0:
        raise ValueError("vector length is not a multiple of 2*n_actions")
    steps = []
    blocks = vector.reshape(-1, 2, n_actions)
    for srv, cli in blocks:
        steps.append((int(np.argmax(srv)) + 1, int(np.argmax(cli)) + 1))
    return InteractionHistory(steps=steps, n_actions=n_actions)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def generate_dataset(
    server: Pdt,
    legit: Pdt,
    adversary_factory,
    cfg: TrainConfig,
    l: int,
    rng: np.random.Generator,
    holdout_frac: float = 0.1,
) -> Dataset:
    """Labeled transcripts: cfg.n_legit sessions vs the legitimate model and
    cfg.n_adv sessions each vs a freshly built adversary, shuffled and split
    train / held-out.  Every adversarial transcript gets its own adversary, so
    no adversary model is shared between the splits.
    """
    from agentauth.models import PdtAgent

    xs, ys = [], []
    server_agent = PdtAgent(server)
    legit_agent = PdtAgent(legit)
    for _ in range(cfg.n_legit):
        h = run_interaction(server_agent, legit_agent, l, rng, rng)
        xs.append(encode_history(h))
        ys.append(1.0)
    for _ in range(cfg.n_adv):
        h = run_interaction(server_agent, adversary_factory(rng), l, rng, rng)
        xs.append(encode_history(h))
        ys.append(0.0)
    x = np.stack(xs)
    y = np.array(ys)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    n_test = max(1, int(round(holdout_frac * len(y))))
    return Dataset(
        x_train=x[n_test:], y_train=y[n_test:], x_test=x[:n_test], y_test=y[:n_test]
    )


class Mlp:
    """[input, hidden, hidden, 1] network, rectifier activations, logistic
    output.  Weights start uniform scaled by 1/sqrt(fan_in) from a fixed seed."""

    def __init__(self, input_size: int, hidden: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        sizes = [input_size, hidden, hidden, 1]
        self.sizes = sizes
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Probabilities in (0, 1), shape (batch,)."""
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        logits = h @ self.weights[-1] + self.biases[-1]
        return _sigmoid(logits[:, 0])

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean binary cross-entropy and its gradients."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        p = _sigmoid(logits)
        eps = 1e-12
        loss = float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
        m = len(y)
        delta = ((p - y) / m)[:, None]
        grads_w, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w.append(acts[i].T @ delta)
            grads_b.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, grads_w[::-1], grads_b[::-1]

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        model = cls(doc["sizes"][0], doc["sizes"][1])
        model.weights = [np.array(w) for w in doc["weights"]]
        model.biases = [np.array(b) for b in doc["biases"]]
        return model


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train_classifier(dataset: Dataset, cfg: TrainConfig) -> Mlp:
    """Mini-batch Adam on binary cross-entropy; deterministic given cfg.seed."""
    y = dataset.y_train
    if len(y) == 0 or len(np.unique(y)) < 2:
        raise ValueError("training set must contain both labels")
    rng = np.random.default_rng(cfg.seed)
    model = Mlp(dataset.x_train.shape[1], cfg.hidden, seed=cfg.seed)
    mw = [np.zeros_like(w) for w in model.weights]
    vw = [np.zeros_like(w) for w in model.weights]
    mb = [np.zeros_like(b) for b in model.biases]
    vb = [np.zeros_like(b) for b in model.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _, gw, gb = model.loss_and_grads(dataset.x_train[idx], y[idx])
            step += 1
            corr1 = 1 - beta1**step
            corr2 = 1 - beta2**step
            for i in range(len(model.weights)):
                mw[i] = beta1 * mw[i] + (1 - beta1) * gw[i]
                vw[i] = beta2 * vw[i] + (1 - beta2) * gw[i] ** 2
                model.weights[i] -= cfg.learning_rate * (mw[i] / corr1) / (
                    np.sqrt(vw[i] / corr2) + eps
                )
                mb[i] = beta1 * mb[i] + (1 - beta1) * gb[i]
                vb[i] = beta2 * vb[i] + (1 - beta2) * gb[i] ** 2
                model.biases[i] -= cfg.learning_rate * (mb[i] / corr1) / (
                    np.sqrt(vb[i] / corr2) + eps
                )
    return model


def accuracy(model: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    pred = model.forward(x) > DECISION_THRESHOLD
    return float(np.mean(pred == (y > 0.5)))


def classifier_test(model: Mlp, history: InteractionHistory) -> AuthVerdict:
    """Accept iff the network's output strictly exceeds 0.5."""
    x = encode_history(history)[None, :]
    if x.shape[1] != model.sizes[0]:
        raise ValueError(
            f"encoded history has length {x.shape[1]}, model expects {model.sizes[0]}"
        )
    score = float(model.forward(x)[0])
    return AuthVerdict(
        accept=score > DECISION_THRESHOLD,
        score=score,
        threshold=DECISION_THRESHOLD,
        method="classifier",
    )


def save_classifier(model: Mlp, path) -> None:
    with open(path, "w") as f:
        json.dump(model.to_dict(), f)


def load_classifier(path) -> Mlp:
    with open(path) as f:
        return Mlp.from_dict(json.load(f))
