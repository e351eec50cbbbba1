"""Matrix-factorization backend: training, scoring, top-N, clustering, retrieval."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import CategoryMap

_log = logging.getLogger(__name__)

MAX_DIM = 512


class TrainingError(RuntimeError):
    pass


class UnknownIdError(KeyError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    neg_ratio: int = 4
    learning_rate: float = 0.01
    epochs: int = 40
    l2: float = 1e-4
    seed: int = 0
    batch_size: int = 1024
    init_scale: float = 0.1
    loss: str = "bce"

    def __post_init__(self):
        if not 1 <= self.d <= MAX_DIM:
            raise ValueError(f"embedding dimension must be in [1, {MAX_DIM}]")
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in ("bce", "bpr"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True, eq=False)
class ModelState:
    """Frozen user/item embeddings; scores are plain inner products."""

    user_ids: np.ndarray
    item_ids: np.ndarray
    user_matrix: np.ndarray
    item_matrix: np.ndarray
    seed: int = 0
    losses: tuple[float, ...] = ()
    _uidx: dict = field(init=False, repr=False)
    _iidx: dict = field(init=False, repr=False)

    def __post_init__(self):
        for arr in (self.user_ids, self.item_ids, self.user_matrix, self.item_matrix):
            arr.setflags(write=False)
        if self.user_matrix.shape[1] != self.item_matrix.shape[1]:
            raise ValueError("user and item embeddings differ in dimension")
        if self.d > MAX_DIM:
            raise ValueError(f"dimension {self.d} exceeds {MAX_DIM}")
        if not (np.all(np.isfinite(self.user_matrix)) and np.all(np.isfinite(self.item_matrix))):
            raise ValueError("embeddings contain non-finite values")
        object.__setattr__(self, "_uidx", {int(u): k for k, u in enumerate(self.user_ids)})
        object.__setattr__(self, "_iidx", {int(i): k for k, i in enumerate(self.item_ids)})

    @property
    def d(self) -> int:
        return self.user_matrix.shape[1]

    def user_vector(self, user_id: int) -> np.ndarray:
        try:
            return self.user_matrix[self._uidx[user_id]]
        except KeyError:
            raise UnknownIdError(f"unknown user {user_id}") from None

    def item_vector(self, item_id: int) -> np.ndarray:
        try:
            return self.item_matrix[self._iidx[item_id]]
        except KeyError:
            raise UnknownIdError(f"unknown item {item_id}") from None

    def item_rows(self, items: Iterable[int]) -> np.ndarray:
        try:
            return np.fromiter((self._iidx[i] for i in items), dtype=np.int64)
        except KeyError as e:
            raise UnknownIdError(f"unknown item {e.args[0]}") from None

    def user_rows(self, users: Iterable[int]) -> np.ndarray:
        try:
            return np.fromiter((self._uidx[u] for u in users), dtype=np.int64)
        except KeyError as e:
            raise UnknownIdError(f"unknown user {e.args[0]}") from None

    def same_as(self, other: ModelState) -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in [
                (self.user_ids, other.user_ids),
                (self.item_ids, other.item_ids),
                (self.user_matrix, other.user_matrix),
                (self.item_matrix, other.item_matrix),
            ]
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log1pexp(x):
    return np.logaddexp(0.0, x)


class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0

    def step(self, param, grad):
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _sample_negatives(rng, users, pos_codes, n_items, ratio):
    """Uniform unobserved items, ``ratio`` per positive; rejection-resampled."""
    u = np.repeat(users, ratio)
    j = rng.integers(0, n_items, size=u.shape[0])
    bad = np.isin(u * n_items + j, pos_codes)
    for _ in range(100):
        if not bad.any():
            break
        j[bad] = rng.integers(0, n_items, size=int(bad.sum()))
        bad = np.isin(u * n_items + j, pos_codes)
    else:
        # users who have seen the entire catalog; their negatives stay as drawn
        bad_users = np.unique(u[bad])
        _log.warning("%d users have no unobserved items; keeping colliding negatives", len(bad_users))
    return u, j


def train_mf(
    positives: Iterable[tuple[int, int]],
    users: Sequence[int],
    items: Sequence[int],
    config: TrainConfig = TrainConfig(),
) -> ModelState:
    """Train a bias-free MF model on positive (user, item) pairs.

    Pointwise BCE: every positive is paired with ``neg_ratio`` uniformly
    drawn items the user has not interacted with positively, resampled each
    epoch. ``loss="bpr"`` switches to a pairwise ranking loss over the same
    samples. Users listed in ``users`` without positives keep their
    initial vectors.
    """
    users = list(dict.fromkeys(users))
    items = list(dict.fromkeys(items))
    uidx = {u: k for k, u in enumerate(users)}
    iidx = {i: k for k, i in enumerate(items)}
    pairs = sorted({(uidx[u], iidx[i]) for u, i in positives})
    n_users, n_items = len(users), len(items)
    rng = np.random.default_rng(config.seed)
    P = rng.normal(0.0, config.init_scale, size=(n_users, config.d))
    Q = rng.normal(0.0, config.init_scale, size=(n_items, config.d))
    if not pairs:
        raise TrainingError("no positive interactions to train on")
    pu = np.array([p[0] for p in pairs], dtype=np.int64)
    pi = np.array([p[1] for p in pairs], dtype=np.int64)
    untrained = n_users - len(np.unique(pu))
    if untrained:
        _log.info("%d users have no positives and keep their initial vectors", untrained)
    pos_codes = np.sort(pu * n_items + pi)

    optP = _Adam(P.shape, config.learning_rate)
    optQ = _Adam(Q.shape, config.learning_rate)
    losses: list[float] = []
    for epoch in range(config.epochs):
        nu, nj = _sample_negatives(rng, pu, pos_codes, n_items, config.neg_ratio)
        if config.loss == "bce":
            bu = np.concatenate([pu, nu])
            bi = np.concatenate([pi, nj])
            by = np.concatenate([np.ones(len(pu)), np.zeros(len(nu))])
            order = rng.permutation(len(bu))
            bu, bi, by = bu[order], bi[order], by[order]
            total = 0.0
            for s in range(0, len(bu), config.batch_size):
                u, i, y = bu[s:s + config.batch_size], bi[s:s + config.batch_size], by[s:s + config.batch_size]
                pu_v, qi_v = P[u], Q[i]
                logit = np.einsum("ij,ij->i", pu_v, qi_v)
                total += float(np.sum(_log1pexp(logit) - y * logit))
                g = (_sigmoid(logit) - y)[:, None] / len(u)
                gP = np.zeros_like(P)
                gQ = np.zeros_like(Q)
                np.add.at(gP, u, g * qi_v + config.l2 * pu_v / len(u))
                np.add.at(gQ, i, g * pu_v + config.l2 * qi_v / len(u))
                optP.step(P, gP)
                optQ.step(Q, gQ)
            avg = total / len(bu)
        else:
            bu = np.repeat(pu, config.neg_ratio)
            bp = np.repeat(pi, config.neg_ratio)
            order = rng.permutation(len(bu))
            bu, bp, bn = bu[order], bp[order], nj[order]
            total = 0.0
            for s in range(0, len(bu), config.batch_size):
                u, i, j = bu[s:s + config.batch_size], bp[s:s + config.batch_size], bn[s:s + config.batch_size]
                pu_v, qi_v, qj_v = P[u], Q[i], Q[j]
                diff = np.einsum("ij,ij->i", pu_v, qi_v - qj_v)
                total += float(np.sum(_log1pexp(-diff)))
                g = (-_sigmoid(-diff))[:, None] / len(u)
                gP = np.zeros_like(P)
                gQ = np.zeros_like(Q)
                np.add.at(gP, u, g * (qi_v - qj_v) + config.l2 * pu_v / len(u))
                np.add.at(gQ, i, g * pu_v + config.l2 * qi_v / len(u))
                np.add.at(gQ, j, -g * pu_v + config.l2 * qj_v / len(u))
                optP.step(P, gP)
                optQ.step(Q, gQ)
            avg = total / len(bu)
        if not np.isfinite(avg) or not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} (loss={avg}, lr={config.learning_rate}, "
                f"max|P|={np.nanmax(np.abs(P)):.3g}, max|Q|={np.nanmax(np.abs(Q)):.3g})"
            )
        losses.append(avg)
        _log.debug("epoch %d loss %.5f", epoch, avg)
    tail = losses[-3:]
    if len(tail) == 3 and any(b > a for a, b in zip(tail, tail[1:])):
        warnings.warn(f"training loss not non-increasing over final epochs: {tail}", RuntimeWarning, stacklevel=2)
    return ModelState(
        np.asarray(users, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        P,
        Q,
        seed=config.seed,
        losses=tuple(losses),
    )


def score(model: ModelState, user_id: int, item_id: int) -> float:
    return float(model.user_vector(user_id) @ model.item_vector(item_id))


def score_items(model: ModelState, user_id: int, items: Sequence[int]) -> np.ndarray:
    return model.item_matrix[model.item_rows(items)] @ model.user_vector(user_id)


def rank_by_score(items: Sequence[int], scores: Sequence[float]) -> np.ndarray:
    """Order positions by descending score, ties by ascending item id."""
    items = np.asarray(items)
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((items, -scores))


def candidate_pool(catalog: Iterable[int], history: Iterable[int]) -> list[int]:
    seen = set(history)
    return sorted(i for i in catalog if i not in seen)


def top_n(model: ModelState, user_id: int, candidates: Sequence[int], N: int) -> list[int]:
    if N > len(candidates):
        raise ValueError(f"N={N} exceeds the {len(candidates)} available candidates")
    scores = score_items(model, user_id, candidates)
    order = rank_by_score(candidates, scores)[:N]
    return [int(candidates[k]) for k in order]


def kmeans(X: np.ndarray, C: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; returns labels.

    An empty cluster is re-seeded with the point farthest from its
    currently assigned centroid, so no label goes unused while there are
    at least ``C`` distinct points.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if C < 1:
        raise ValueError("C must be >= 1")
    if C > n:
        raise ValueError(f"cannot form {C} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = np.empty((C, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, C):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[k] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        for k in range(C):
            if np.any(labels == k):
                continue
            own = dist[np.arange(n), labels]
            # only steal from clusters that keep at least one member
            sizes = np.bincount(labels, minlength=C)
            own = np.where(sizes[labels] > 1, own, -np.inf)
            far = int(np.argmax(own))
            if not np.isfinite(own[far]):
                break
            labels[far] = k
            centers[k] = X[far]
        new = np.array([X[labels == k].mean(axis=0) if np.any(labels == k) else centers[k] for k in range(C)])
        shift = float(np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1))))
        centers = new
        if shift < tol:
            break
    return labels


def cluster_items(model: ModelState, C: int, seed: int = 0) -> CategoryMap:
    labels = kmeans(model.item_matrix, C, seed)
    return CategoryMap({int(i): int(c) for i, c in zip(model.item_ids, labels)}, C)


def cosine_similarity(query: np.ndarray, samples: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=float)
    samples = np.asarray(samples, dtype=float)
    qn = np.linalg.norm(query)
    if qn == 0:
        raise ValueError("zero-norm query vector")
    sn = np.linalg.norm(samples, axis=1)
    sims = samples @ query
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(sn > 0, sims / (sn * qn), 0.0)
    return sims


def nearest_samples(query: np.ndarray, samples: np.ndarray, K: int, exclude: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``K`` samples most cosine-similar to ``query``.

    Ties go to the lower index. ``exclude`` is an optional boolean mask of
    samples that may not be returned.
    """
    sims = cosine_similarity(query, samples)
    idx = np.arange(len(sims))
    if exclude is not None:
        keep = ~np.asarray(exclude, dtype=bool)
        sims, idx = sims[keep], idx[keep]
    if K > len(idx):
        raise ValueError(f"K={K} exceeds the {len(idx)} available samples")
    order = np.lexsort((idx, -sims))
    return idx[order[:K]]


def save_model(path: str | Path, model: ModelState) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.array([model.d, len(model.user_ids), len(model.item_ids), model.seed], dtype=np.int64),
            user_ids=model.user_ids,
            item_ids=model.item_ids,
            user_matrix=model.user_matrix,
            item_matrix=model.item_matrix,
            losses=np.asarray(model.losses, dtype=float),
        )


def load_model(path: str | Path) -> ModelState:
    with np.load(path) as z:
        d, n_users, n_items, seed = (int(v) for v in z["header"])
        model = ModelState(
            z["user_ids"].copy(),
            z["item_ids"].copy(),
            z["user_matrix"].copy(),
            z["item_matrix"].copy(),
            seed=seed,
            losses=tuple(float(x) for x in z["losses"]),
        )
    if (model.d, len(model.user_ids), len(model.item_ids)) != (d, n_users, n_items):
        raise ValueError(f"{path}: header does not match stored matrices")
    return model


def export_embeddings(path: str | Path, ids: Sequence[int], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in zip(ids, matrix):
            fh.write(str(int(i)) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
