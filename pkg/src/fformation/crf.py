"""Linear-chain CRF over left-to-right pose sequences with labels {G, O}.

Scores factorize into per-node observation terms and a single 2x2 transition
table shared across positions:

    score(g | x) = sum_i w_obs[g_i] . x_i  +  sum_i trans[g_{i-1}, g_i]
    P(g | x)     = exp(score(g | x) - log Z)

All chain computations run in log-space. Training maximizes the
L2-regularized conditional log-likelihood; the objective is convex.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ConvergenceError, DataError, VersionMismatchError
from .features import F_NODE, FEATURE_CATALOG_VERSION
from .pose import GROUP, GROUP_LABELS, OUTLIER

NUM_LABELS = 2
LABEL_INDEX = {GROUP: 0, OUTLIER: 1}

CRF_FORMAT_VERSION = 1


def weight_dim(f_node: int = F_NODE) -> int:
    return f_node * NUM_LABELS + NUM_LABELS * NUM_LABELS


@dataclass(frozen=True)
class CrfModel:
    weights: np.ndarray
    feature_catalog_version: str = FEATURE_CATALOG_VERSION
    l2: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or (w.size - NUM_LABELS * NUM_LABELS) % NUM_LABELS != 0:
            raise ValueError(f"weight vector of size {w.size} is not k = 2F + 4")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def f_node(self) -> int:
        return (self.weights.size - NUM_LABELS * NUM_LABELS) // NUM_LABELS

    def obs_weights(self) -> np.ndarray:
        """(2, F) observation weights, row per label."""
        f = self.f_node
        return self.weights[: 2 * f].reshape(NUM_LABELS, f)

    def transition_weights(self) -> np.ndarray:
        """(2, 2) transition weights, [from, to]."""
        return self.weights[2 * self.f_node :].reshape(NUM_LABELS, NUM_LABELS)


@dataclass(frozen=True)
class ChainInstance:
    """Node feature matrix (n, F) plus optional gold labels (0=G, 1=O)."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2:
            raise ValueError("chain features must be a 2-D matrix")
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labs = np.asarray(self.labels, dtype=int)
            if labs.shape != (feats.shape[0],):
                raise ValueError(
                    f"{labs.size} labels for a chain of {feats.shape[0]} nodes"
                )
            object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]


def labels_to_indices(labels) -> np.ndarray:
    return np.array([LABEL_INDEX[l] for l in labels], dtype=int)


def indices_to_labels(indices) -> list[str]:
    return [GROUP_LABELS[i] for i in indices]


def _check_version(model: CrfModel) -> None:
    if model.feature_catalog_version != FEATURE_CATALOG_VERSION:
        raise VersionMismatchError(
            f"model built for catalog {model.feature_catalog_version!r}, "
            f"library provides {FEATURE_CATALOG_VERSION!r}"
        )


def log_potentials(model: CrfModel, chain: ChainInstance) -> tuple[np.ndarray, np.ndarray]:
    """Node scores (n, 2) and the shared transition score table (2, 2)."""
    _check_version(model)
    if chain.n == 0:
        raise ValueError("chain must contain at least one node")
    if chain.features.shape[1] != model.f_node:
        raise ValueError(
            f"chain has {chain.features.shape[1]} features per node, "
            f"model expects {model.f_node}"
        )
    node = chain.features @ model.obs_weights().T
    return node, model.transition_weights()


def sequence_score(node: np.ndarray, trans: np.ndarray, labels: np.ndarray) -> float:
    s = float(node[np.arange(len(labels)), labels].sum())
    if len(labels) > 1:
        s += float(trans[labels[:-1], labels[1:]].sum())
    return s


def _forward_messages(node: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """alpha[i, y] = log sum over prefixes ending in label y at node i."""
    n = node.shape[0]
    alpha = np.empty_like(node)
    alpha[0] = node[0]
    for i in range(1, n):
        alpha[i] = node[i] + logsumexp(alpha[i - 1][:, None] + trans, axis=0)
    return alpha


def _backward_messages(node: np.ndarray, trans: np.ndarray) -> np.ndarray:
    n = node.shape[0]
    beta = np.zeros_like(node)
    for i in range(n - 2, -1, -1):
        beta[i] = logsumexp(trans + (node[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def forward(model: CrfModel, chain: ChainInstance) -> float:
    """log Z: log-partition over all 2^n labelings."""
    node, trans = log_potentials(model, chain)
    alpha = _forward_messages(node, trans)
    return float(logsumexp(alpha[-1]))


def marginals(model: CrfModel, chain: ChainInstance) -> tuple[np.ndarray, np.ndarray]:
    """Node marginals (n, 2) and edge marginals (n-1, 2, 2)."""
    node, trans = log_potentials(model, chain)
    return _marginals_from_potentials(node, trans)[:2]


def _marginals_from_potentials(node, trans):
    alpha = _forward_messages(node, trans)
    beta = _backward_messages(node, trans)
    log_z = float(logsumexp(alpha[-1]))
    node_marg = np.exp(alpha + beta - log_z)
    n = node.shape[0]
    edge_marg = np.empty((max(n - 1, 0), NUM_LABELS, NUM_LABELS))
    for i in range(n - 1):
        log_edge = (
            alpha[i][:, None]
            + trans
            + (node[i + 1] + beta[i + 1])[None, :]
            - log_z
        )
        edge_marg[i] = np.exp(log_edge)
    return node_marg, edge_marg, log_z


def nll_and_gradient(
    model: CrfModel, batch: list[ChainInstance], l2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Negative conditional log-likelihood of the batch plus L2 penalty.

    grad = sum over chains (expected - empirical feature counts) + l2 * w.
    """
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    w = model.weights
    f = model.f_node
    loss = 0.5 * l2 * float(w @ w)
    grad = l2 * w.copy()
    grad_obs = grad[: 2 * f].reshape(NUM_LABELS, f)
    grad_trans = grad[2 * f :].reshape(NUM_LABELS, NUM_LABELS)

    for chain in batch:
        if chain.labels is None:
            raise ValueError("all chains must carry gold labels for training")
        node, trans = log_potentials(model, chain)
        node_marg, edge_marg, log_z = _marginals_from_potentials(node, trans)
        gold = chain.labels
        loss += log_z - sequence_score(node, trans, gold)

        resid = node_marg.copy()
        resid[np.arange(chain.n), gold] -= 1.0
        grad_obs += resid.T @ chain.features
        if chain.n > 1:
            grad_trans += edge_marg.sum(axis=0)
            np.add.at(grad_trans, (gold[:-1], gold[1:]), -1.0)
    return loss, grad


def _group_by_length(batch: list[ChainInstance]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack chains of equal length: [(features (B, n, F), labels (B, n)), ...]."""
    by_n: dict[int, list[ChainInstance]] = {}
    for chain in batch:
        if chain.labels is None:
            raise ValueError("all chains must carry gold labels for training")
        by_n.setdefault(chain.n, []).append(chain)
    groups = []
    for n in sorted(by_n):
        chains = by_n[n]
        groups.append(
            (
                np.stack([c.features for c in chains]),
                np.stack([c.labels for c in chains]),
            )
        )
    return groups


def _batched_objective(
    w: np.ndarray, groups, l2: float, f: int
) -> tuple[float, np.ndarray]:
    """Same value/gradient as nll_and_gradient, vectorized across chains.

    Cross-checked against the per-chain reference in the test suite.
    """
    w_obs = w[: 2 * f].reshape(NUM_LABELS, f)
    trans = w[2 * f :].reshape(NUM_LABELS, NUM_LABELS)
    loss = 0.5 * l2 * float(w @ w)
    grad_obs = l2 * w_obs.copy()
    grad_trans = l2 * trans.copy()

    for feats, labels in groups:
        b, n, _ = feats.shape
        node = feats @ w_obs.T  # (B, n, 2)
        alpha = np.empty((b, n, NUM_LABELS))
        alpha[:, 0] = node[:, 0]
        for i in range(1, n):
            alpha[:, i] = node[:, i] + logsumexp(
                alpha[:, i - 1][:, :, None] + trans[None], axis=1
            )
        beta = np.zeros((b, n, NUM_LABELS))
        for i in range(n - 2, -1, -1):
            beta[:, i] = logsumexp(
                trans[None] + (node[:, i + 1] + beta[:, i + 1])[:, None, :], axis=2
            )
        log_z = logsumexp(alpha[:, -1], axis=1)  # (B,)

        rows = np.arange(n)
        gold_node = np.take_along_axis(node, labels[:, :, None], axis=2)[:, :, 0]
        gold_score = gold_node.sum(axis=1)
        if n > 1:
            gold_score = gold_score + trans[labels[:, :-1], labels[:, 1:]].sum(axis=1)
        loss += float(log_z.sum() - gold_score.sum())

        resid = np.exp(alpha + beta - log_z[:, None, None])
        one_hot = np.zeros_like(resid)
        np.put_along_axis(one_hot, labels[:, :, None], 1.0, axis=2)
        resid -= one_hot
        grad_obs += np.einsum("bny,bnf->yf", resid, feats)
        if n > 1:
            for i in range(n - 1):
                log_edge = (
                    alpha[:, i][:, :, None]
                    + trans[None]
                    + (node[:, i + 1] + beta[:, i + 1])[:, None, :]
                    - log_z[:, None, None]
                )
                grad_trans += np.exp(log_edge).sum(axis=0)
            flat = labels[:, :-1] * NUM_LABELS + labels[:, 1:]
            counts = np.bincount(flat.ravel(), minlength=NUM_LABELS * NUM_LABELS)
            grad_trans -= counts.reshape(NUM_LABELS, NUM_LABELS)
    return loss, np.concatenate([grad_obs.ravel(), grad_trans.ravel()])


@dataclass(frozen=True)
class CrfTrainConfig:
    l2: float = 1.0
    max_iters: int = 500
    tol: float = 1e-4


@dataclass
class CrfTrainResult:
    model: CrfModel
    converged: bool
    final_grad_inf_norm: float
    n_iters: int
    loss_history: list[float] = field(default_factory=list)


def train(
    batch: list[ChainInstance],
    config: CrfTrainConfig = CrfTrainConfig(),
    record_history: bool = False,
) -> CrfTrainResult:
    """Fit weights by L-BFGS on the convex regularized NLL.

    Deterministic given the batch order and config. Stops when the gradient
    infinity norm reaches config.tol or after config.max_iters iterations.
    """
    if not batch:
        raise ValueError("training batch is empty")
    f = batch[0].features.shape[1]
    k = weight_dim(f)
    groups = _group_by_length(batch)
    history: list[float] = []

    def objective(w):
        loss, grad = _batched_objective(w, groups, config.l2, f)
        if not np.isfinite(loss):
            raise ConvergenceError(f"non-finite training loss {loss!r}")
        return loss, grad

    callback = None
    if record_history:
        callback = lambda w: history.append(objective(w)[0])

    res = minimize(
        objective,
        np.zeros(k),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={
            "maxiter": config.max_iters,
            "gtol": config.tol,
            "ftol": 1e-15,
            "maxfun": 20 * config.max_iters,
        },
    )
    model = CrfModel(res.x, l2=config.l2)
    _, grad = _batched_objective(res.x, groups, config.l2, f)
    norm = float(np.abs(grad).max())
    return CrfTrainResult(
        model=model,
        converged=norm <= config.tol,
        final_grad_inf_norm=norm,
        n_iters=int(res.nit),
        loss_history=history,
    )


def viterbi(model: CrfModel, chain: ChainInstance) -> list[str]:
    """Max-scoring label sequence; ties prefer G at the first differing position.

    Decodes left to right against a suffix-max table, so among equally scoring
    sequences the lexicographically G-first one is returned.
    """
    node, trans = log_potentials(model, chain)
    n = node.shape[0]
    suffix = np.empty_like(node)
    suffix[n - 1] = node[n - 1]
    for i in range(n - 2, -1, -1):
        suffix[i] = node[i] + np.max(trans + suffix[i + 1][None, :], axis=1)
    labels = np.empty(n, dtype=int)
    labels[0] = int(np.argmax(suffix[0]))
    for i in range(1, n):
        labels[i] = int(np.argmax(trans[labels[i - 1]] + suffix[i]))
    return indices_to_labels(labels)


# ---------------------------------------------------------------------------
# Serialization: versioned JSON with full decimal precision (floats are
# written with repr, which round-trips exactly).


def crf_to_dict(model: CrfModel) -> dict:
    return {
        "format_version": CRF_FORMAT_VERSION,
        "kind": "crf",
        "feature_catalog_version": model.feature_catalog_version,
        "l2": model.l2,
        "labels": list(GROUP_LABELS),
        "weights": model.weights.tolist(),
    }


def crf_from_dict(doc: dict) -> CrfModel:
    try:
        if doc.get("kind") != "crf":
            raise ValueError(f"not a crf model file (kind={doc.get('kind')!r})")
        if doc["format_version"] != CRF_FORMAT_VERSION:
            raise ValueError(f"unsupported crf format_version {doc['format_version']}")
        return CrfModel(
            weights=np.array(doc["weights"], dtype=float),
            feature_catalog_version=doc["feature_catalog_version"],
            l2=float(doc["l2"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed crf model file: {exc}") from exc


def save_crf(model: CrfModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(crf_to_dict(model), fp)
        fp.write("\n")


def load_crf(path) -> CrfModel:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt crf model file {path}: {exc}") from exc
    model = crf_from_dict(doc)
    _check_version(model)
    return model
