"""Random survival forests and weighted regression forests with kernel-weight prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from survcate.forest import _tree


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 500
    subsample_fraction: float = 0.5
    mtry: int | None = None  # chosen by mtry_rule when None
    min_node_size: int | None = None  # 15 for survival, 5 for regression when None
    alpha_imbalance: float = 0.05
    honesty: bool = False
    seed: int = 0
    mtry_rule: str = "sqrt"  # "sqrt": ceil(sqrt(d)); "reference": min(ceil(sqrt(d) + 20), d)

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be at least 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.min_node_size is not None and self.min_node_size < 1:
            raise ValueError("min_node_size must be at least 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be at least 1")
        if not 0 < self.alpha_imbalance <= 0.25:
            raise ValueError("alpha_imbalance must lie in (0, 0.25]")
        if self.mtry_rule not in ("sqrt", "reference"):
            raise ValueError("mtry_rule must be 'sqrt' or 'reference'")

    def resolve_mtry(self, d: int) -> int:
        if self.mtry is not None:
            return min(d, self.mtry)
        if self.mtry_rule == "reference":
            return min(d, math.ceil(math.sqrt(d) + 20))
        return min(d, math.ceil(math.sqrt(d)))

    def with_seed(self, seed: int) -> "ForestParams":
        return replace(self, seed=int(seed))


def reference_forest_params(num_trees: int = 500, seed: int = 0) -> ForestParams:
    """Honest trees trying nearly every feature per split, as common forest packages default to."""
    return ForestParams(num_trees=num_trees, honesty=True, mtry_rule="reference", seed=seed)


class InsufficientTreesError(ValueError):
    """No tree is available to predict for a point (all trees hold it in-bag)."""


@dataclass(frozen=True)
class Forest:
    kind: int
    params: ForestParams
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    roots: np.ndarray  # node index of each tree's root
    members: np.ndarray  # leaf members, original row indices
    inbag: np.ndarray  # (num_trees, n) uint8
    covariates: np.ndarray
    followup: np.ndarray | None = None
    event: np.ndarray | None = None
    response: np.ndarray | None = None
    sample_weights: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.inbag.shape[1]

    @property
    def num_trees(self) -> int:
        return self.roots.size

    def tree_leaves(self, b: int, x) -> np.ndarray:
        """Members (original indices) of the leaf of tree ``b`` that ``x`` falls in."""
        leaf = _tree._descend(self.feature, self.threshold, self.left, self.right,
                              self.roots[b], np.asarray(x, dtype=float))
        s = self.leaf_start[leaf]
        return self.members[s: s + self.leaf_count[leaf]]


def _canonical_order(X, *columns):
    keys = [np.asarray(c) for c in reversed(columns)] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _tree_seed(seed, b):
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), b]).generate_state(1)[0])


def _grow(kind, X, U, D, y, w, params: ForestParams, default_min_node) -> Forest:
    n, d = X.shape
    order = _canonical_order(X, *(c for c in (U, D, y, w) if c is not None))
    Xc = np.asfortranarray(X[order])
    Uc = np.zeros(n) if U is None else np.ascontiguousarray(U[order])
    Dc = np.zeros(n, dtype=np.int8) if D is None else np.ascontiguousarray(D[order])
    yc = np.zeros(n) if y is None else np.ascontiguousarray(y[order])
    wc = np.ones(n) if w is None else np.ascontiguousarray(w[order])
    mtry = params.resolve_mtry(d)
    min_node = params.min_node_size if params.min_node_size is not None else default_min_node
    n_sub = max(1, min(n, int(round(params.subsample_fraction * n))))
    if params.honesty and n_sub < 2:
        raise ValueError("honest trees need a subsample of at least 2 rows")
    parts = {k: [] for k in ("feature", "threshold", "left", "right", "leaf_start", "leaf_count", "members")}
    roots = np.empty(params.num_trees, dtype=np.int64)
    inbag = np.zeros((params.num_trees, n), dtype=np.uint8)
    node_off = 0
    member_off = 0
    for b in range(params.num_trees):
        feat, thr, lft, rgt, lstart, lcount, members, sub = _tree.grow_tree(
            kind, Xc, Uc, Dc, yc, wc, n_sub, mtry, min_node, params.alpha_imbalance,
            params.honesty, _tree_seed(params.seed, b) % (2**32))
        roots[b] = node_off
        parts["feature"].append(feat)
        parts["threshold"].append(thr)
        parts["left"].append(np.where(lft >= 0, lft + node_off, -1))
        parts["right"].append(np.where(rgt >= 0, rgt + node_off, -1))
        parts["leaf_start"].append(lstart + member_off)
        parts["leaf_count"].append(lcount)
        parts["members"].append(order[members])
        inbag[b, order[sub]] = 1
        node_off += feat.size
        member_off += members.size
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    for v in cat.values():
        v.setflags(write=False)
    inbag.setflags(write=False)
    Xo = np.ascontiguousarray(X)
    Xo.setflags(write=False)
    return Forest(
        kind=kind, params=params, roots=roots, inbag=inbag, covariates=Xo,
        followup=U, event=D, response=y, sample_weights=w, **cat,
    )


def _check_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("covariates must be a non-empty matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    return X


def fit_survival_forest(covariates, followup, event, params: ForestParams) -> Forest:
    """Log-rank splitting survival forest; leaves aggregate through Nelson-Aalen."""
    X = _check_matrix(covariates)
    U = np.asarray(followup, dtype=float).copy()
    D = (np.asarray(event) == 1).astype(np.int8)
    if U.shape != (X.shape[0],) or D.shape != U.shape:
        raise ValueError("followup and event must match the number of rows")
    if not np.all(np.isfinite(U)) or np.any(U < 0):
        raise ValueError("followup must be finite and nonnegative")
    if D.sum() == 0:
        raise ValueError("survival forest needs at least one event")
    U.setflags(write=False)
    D.setflags(write=False)
    return _grow(_tree.SURVIVAL, X, U, D, None, None, params, 15)


def fit_regression_forest(covariates, y, sample_weights, params: ForestParams) -> Forest:
    """Weighted variance-reduction regression forest."""
    X = _check_matrix(covariates)
    y = np.asarray(y, dtype=float).copy()
    w = np.asarray(sample_weights, dtype=float).copy()
    if y.shape != (X.shape[0],) or w.shape != y.shape:
        raise ValueError("y and sample_weights must match the number of rows")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("y must be finite and weights finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("total sample weight must be positive")
    y.setflags(write=False)
    w.setflags(write=False)
    return _grow(_tree.REGRESSION, X, None, None, y, w, params, 5)


def _queries(forest, x, oob_for):
    Xq = np.asarray(x, dtype=float)
    single = Xq.ndim == 1
    Xq = np.ascontiguousarray(np.atleast_2d(Xq))
    if Xq.shape[1] != forest.covariates.shape[1]:
        raise ValueError(f"expected {forest.covariates.shape[1]} covariates, got {Xq.shape[1]}")
    if not np.all(np.isfinite(Xq)):
        raise ValueError("query covariates must be finite")
    if oob_for is None:
        oob = np.full(Xq.shape[0], -1, dtype=np.int64)
    else:
        oob = np.atleast_1d(np.asarray(oob_for, dtype=np.int64))
        if oob.shape != (Xq.shape[0],):
            raise ValueError("oob_for must give one training index per query")
        if np.any(oob < 0) or np.any(oob >= forest.n):
            raise ValueError("oob_for index out of range")
    return Xq, oob, single


def _node_args(forest):
    return (forest.feature, forest.threshold, forest.left, forest.right, forest.roots,
            forest.leaf_start, forest.leaf_count, forest.members, forest.inbag)


def kernel_weights(forest: Forest, x, oob_for: int | None = None) -> np.ndarray:
    """Average over contributing trees of the uniform weights on the query's leaf."""
    Xq, oob, _ = _queries(forest, x, oob_for)
    out = np.zeros(forest.n)
    used = _tree.accumulate_weights(*_node_args(forest), Xq[0], int(oob[0]), out)
    if used == 0:
        raise InsufficientTreesError("no tree has a usable leaf for this query")
    return out / used


def _oob_all(forest):
    return np.arange(forest.n)


def predict_survival_forest(forest: Forest, x, t0, oob_for=None):
    """Kernel-weighted Nelson-Aalen survival at ``t0``.

    ``x`` may be one covariate vector or a matrix of queries; ``t0`` is a
    scalar or one time per query; ``oob_for`` gives the training index of each
    query for out-of-bag prediction.
    """
    if forest.kind != _tree.SURVIVAL:
        raise TypeError("not a survival forest")
    Xq, oob, single = _queries(forest, x, oob_for)
    t_eval = np.broadcast_to(np.asarray(t0, dtype=float), (Xq.shape[0],)).copy()
    if not np.all(np.isfinite(t_eval)) or np.any(t_eval < 0):
        raise ValueError("t0 must be finite and nonnegative")
    order = np.argsort(forest.followup, kind="stable")
    rank = np.empty(forest.n, dtype=np.int64)
    rank[order] = np.arange(forest.n)
    pred, used = _tree.predict_survival_batch(
        *_node_args(forest), Xq, oob, rank, forest.followup[order],
        forest.event[order], t_eval)
    if np.any(used == 0):
        raise InsufficientTreesError("some queries have no contributing tree")
    return float(pred[0]) if single else pred


def predict_regression_forest(forest: Forest, x, oob_for=None):
    if forest.kind != _tree.REGRESSION:
        raise TypeError("not a regression forest")
    Xq, oob, single = _queries(forest, x, oob_for)
    pred, used = _tree.predict_regression_batch(
        *_node_args(forest), Xq, oob, forest.response, forest.sample_weights)
    if np.any(used == 0):
        raise InsufficientTreesError("some queries have no contributing tree")
    return float(pred[0]) if single else pred


def oob_predict_survival(forest: Forest, t0) -> np.ndarray:
    """Out-of-bag survival prediction at ``t0`` (scalar or per row) for every training row."""
    return predict_survival_forest(forest, forest.covariates, t0, oob_for=_oob_all(forest))


def oob_predict_regression(forest: Forest) -> np.ndarray:
    return predict_regression_forest(forest, forest.covariates, oob_for=_oob_all(forest))
