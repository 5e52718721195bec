"""Probabilistic decision tree (PDT) agent models.

A PDT of depth k over n actions stores one distribution per node, with nodes
laid out in breadth-first order.  An agent traverses its tree with the
opponent's most recent (up to k) actions, oldest first, and samples its next
action from the node it lands on.  Trees serve both as agent behavior and as
the shared secret the server authenticates against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

NODE_KIND_LOGIT = "logit"
NODE_KIND_LITERAL = "literal"

MODEL_FILE_VERSION = 1


class ModelFormatError(ValueError):
    """A model file is malformed or violates a structural invariant."""


class UnsupportedVersionError(ModelFormatError):
    """A model file declares a version this code does not understand."""


def node_count(n_actions: int, depth: int) -> int:
    """Number of nodes in a complete n-ary tree of the given depth:
    (n^(depth+1) - 1) / (n - 1)."""
    return (n_actions ** (depth + 1) - 1) // (n_actions - 1)


def _softmax_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    # Fixed evaluation order (max-subtraction, exp, left-to-right sum) so two
    # independent parties computing from the same logits agree bit for bit.
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled)
    totals = np.cumsum(e, axis=1)[:, -1:]
    return e / totals


def boltzmann(logits, temperature: float) -> np.ndarray:
    """Softmax of logits/temperature, numerically stabilized."""
    if not (isinstance(temperature, (int, float)) and temperature > 0):
        raise ValueError("temperature must be a positive real")
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("logits must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must all be finite")
    return _softmax_rows(arr[None, :], float(temperature))[0]


@dataclass(frozen=True)
class Pdt:
    """Immutable probabilistic decision tree.

    nodes holds one row per tree node in breadth-first order.  With
    node_kind "logit" each row is a logit vector pushed through a Boltzmann
    distribution at the tree's temperature; with "literal" each row already
    is a probability vector (used by empirical-frequency fits, which must be
    able to represent exact zeros).
    """

    n_actions: int
    depth: int
    temperature: float
    nodes: np.ndarray
    node_kind: str = NODE_KIND_LOGIT
    _probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("n_actions must be >= 2")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.node_kind not in (NODE_KIND_LOGIT, NODE_KIND_LITERAL):
            raise ValueError(f"unknown node_kind {self.node_kind!r}")
        nodes = np.array(self.nodes, dtype=np.float64)
        expected = node_count(self.n_actions, self.depth)
        if nodes.shape != (expected, self.n_actions):
            raise ValueError(
                f"nodes must have shape ({expected}, {self.n_actions}), "
                f"got {nodes.shape}"
            )
        if not np.all(np.isfinite(nodes)):
            raise ValueError("node parameters must be finite")
        if self.node_kind == NODE_KIND_LITERAL:
            if np.any(nodes < 0):
                raise ValueError("literal node probabilities must be >= 0")
            sums = nodes.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ValueError("literal node probabilities must sum to 1")
            probs = nodes.copy()
        else:
            probs = _softmax_rows(nodes, self.temperature)
        nodes.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_probs", probs)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    def node_index(self, context) -> int:
        """Breadth-first index of the node reached by descending one level per
        context entry (oldest opponent action first); empty context is the root."""
        if len(context) > self.depth:
            raise ValueError(
                f"context length {len(context)} exceeds tree depth {self.depth}"
            )
        start, width, pos = 0, 1, 0
        for a in context:
            if not 1 <= a <= self.n_actions:
                raise ValueError(f"action {a} out of range 1..{self.n_actions}")
            start += width
            width *= self.n_actions
            pos = pos * self.n_actions + (a - 1)
        return start + pos

    def node_probs(self, index: int) -> np.ndarray:
        return self._probs[index]

    def action_distribution(self, opponent_history) -> np.ndarray:
        """Distribution over own next action given the opponent's action
        history (only the last depth entries matter)."""
        window = list(opponent_history)[-self.depth:]
        return self._probs[self.node_index(window)]

    def sample_action(self, opponent_history, rng: np.random.Generator) -> int:
        """Inverse-CDF draw in ascending action-index order."""
        p = self.action_distribution(opponent_history)
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
        return min(idx, self.n_actions - 1) + 1


class PdtAgent:
    """Decision source backed by a PDT; usable anywhere an agent handle is
    expected."""

    def __init__(self, pdt: Pdt):
        self.pdt = pdt

    def next_action(self, opponent_history, rng: np.random.Generator) -> int:
        return self.pdt.sample_action(opponent_history, rng)


def generate_random_pdt(
    n_actions: int, depth: int, temperature: float, rng: np.random.Generator
) -> Pdt:
    """Fresh tree with every logit drawn i.i.d. uniform on [0, 1]."""
    if n_actions < 2 or depth < 1:
        raise ValueError("need n_actions >= 2 and depth >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    nodes = rng.random((node_count(n_actions, depth), n_actions))
    return Pdt(n_actions=n_actions, depth=depth, temperature=temperature, nodes=nodes)


def fit_mle_pdt(n_actions: int, depth: int, transcripts, role: str = "client") -> Pdt:
    """Empirical-frequency fit of one side of recorded interactions.

    transcripts is a list of step sequences [(server_action, client_action), ...].
    For role "client" the fitted tree imitates the client (contexts are server
    actions); "server" imitates the server.  Unvisited nodes fall back to the
    uniform distribution; no smoothing is applied elsewhere, so the result is
    the exact per-node maximum likelihood estimate.
    """
    if role not in ("client", "server"):
        raise ValueError(f"role must be 'client' or 'server', got {role!r}")
    steps_lists = [getattr(t, "steps", t) for t in transcripts]
    if not steps_lists:
        raise ValueError("need at least one transcript")
    counts = np.zeros((node_count(n_actions, depth), n_actions))
    scratch = Pdt(
        n_actions=n_actions,
        depth=depth,
        temperature=1.0,
        nodes=np.zeros((node_count(n_actions, depth), n_actions)),
    )
    for steps in steps_lists:
        window: list[int] = []
        for a_s, a_c in steps:
            own, opp = (a_c, a_s) if role == "client" else (a_s, a_c)
            node = scratch.node_index(window)
            counts[node, own - 1] += 1
            window.append(opp)
            if len(window) > depth:
                window.pop(0)
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 1.0 / n_actions)
    return Pdt(
        n_actions=n_actions,
        depth=depth,
        temperature=1.0,
        nodes=probs,
        node_kind=NODE_KIND_LITERAL,
    )


def save_pdt(pdt: Pdt, path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "n_actions": pdt.n_actions,
        "depth": pdt.depth,
        "temperature": pdt.temperature,
        "node_kind": pdt.node_kind,
        "nodes": [list(row) for row in pdt.nodes],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_pdt(path) -> Pdt:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("top-level value must be an object")
    version = doc.get("version")
    if version != MODEL_FILE_VERSION:
        raise UnsupportedVersionError(f"unsupported model file version: {version!r}")
    for key in ("n_actions", "depth", "temperature", "node_kind", "nodes"):
        if key not in doc:
            raise ModelFormatError(f"missing field {key!r}")
    try:
        return Pdt(
            n_actions=int(doc["n_actions"]),
            depth=int(doc["depth"]),
            temperature=float(doc["temperature"]),
            nodes=np.asarray(doc["nodes"], dtype=np.float64),
            node_kind=doc["node_kind"],
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model file: {exc}") from exc
