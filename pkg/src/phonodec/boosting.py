"""Gradient-boosted decision trees with second-order loss expansion.

Per round the logistic (binary) or softmax (multiclass, one tree per class)
loss is expanded to its gradient g and hessian h; exact greedy search picks
the split maximizing

    gain = 1/2 * [ GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam) ]

and each leaf takes weight -G/(H+lam) scaled by the learning rate. Split
candidates are midpoints between consecutive distinct sorted feature values;
ties break on the lowest feature index, then the lowest threshold. Row and
column subsampling draw from a seeded counter-based generator, so fitting is
fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import ShapeError, ValidationError

_EPS = 1e-12


@dataclass
class GbtParams:
    max_depth: int = 10
    rounds: int = 200
    learning_rate: float = 0.1
    l2_leaf_regularization: float = 0.3
    row_subsample: float = 0.8
    column_subsample_per_tree: float = 0.4
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValidationError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.rounds < 0:
            raise ValidationError(f"rounds must be >= 0, got {self.rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        for name in ("row_subsample", "column_subsample_per_tree"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValidationError(f"{name} must be in (0, 1], got {v}")
        if self.l2_leaf_regularization < 0:
            raise ValidationError("l2_leaf_regularization must be >= 0")
        if self.min_child_weight < 0:
            raise ValidationError("min_child_weight must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf. Leaf values already
    carry the learning rate."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        idx = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[idx]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            node = idx[rows]
            go_left = x[rows, feat[rows]] < self.threshold[node]
            idx[rows] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


def _leaf_weight(g_sum: float, h_sum: float, lam: float, lr: float) -> float:
    return -lr * g_sum / (h_sum + lam + _EPS)


def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float,
                min_child_weight: float):
    """Vectorized exact greedy split over all columns of x.

    Prefix sums run in sorted order per column so gains match the sequential
    accumulation of `best_split_oracle` bit for bit.
    """
    n, d = x.shape
    if n < 2:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    gs = g[order]
    hs = h[order]
    cg = np.cumsum(gs, axis=0)
    ch = np.cumsum(hs, axis=0)
    gl, hl = cg[:-1], ch[:-1]
    gt, ht = cg[-1], ch[-1]
    gr, hr = gt - gl, ht - hl
    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - gt * gt / (ht + lam))
    valid = xs[1:] > xs[:-1]
    if min_child_weight > 0:
        valid &= (hl >= min_child_weight) & (hr >= min_child_weight)
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    if not np.isfinite(best) or best <= 0.0:
        return None
    cols = np.nonzero((gain == best).any(axis=0))[0]
    f = int(cols[0])
    pos = int(np.argmax(gain[:, f] == best))
    thr = (xs[pos, f] + xs[pos + 1, f]) / 2.0
    return f, float(thr), float(best)


def best_split_oracle(features: np.ndarray, gradients: np.ndarray,
                      hessians: np.ndarray, l2: float,
                      min_child_weight: float = 0.0):
    """Brute-force reference: walk every (feature, midpoint) candidate in
    feature-major order with running sums, keeping the first maximum."""
    x = np.asarray(features, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    n, d = x.shape
    if n > 200:
        raise ValidationError(f"oracle is brute force; n = {n} > 200")
    best = None
    best_gain = 0.0
    for fidx in range(d):
        order = np.argsort(x[:, fidx], kind="stable")
        xs = x[order, fidx]
        gs = g[order]
        hs = h[order]
        gt = 0.0
        ht = 0.0
        for v, u in zip(gs, hs):
            gt += v
            ht += u
        gl = 0.0
        hl = 0.0
        for pos in range(n - 1):
            gl += gs[pos]
            hl += hs[pos]
            if xs[pos + 1] <= xs[pos]:
                continue
            gr = gt - gl
            hr = ht - hl
            if min_child_weight > 0 and (hl < min_child_weight or hr < min_child_weight):
                continue
            gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - gt * gt / (ht + l2))
            if gain > best_gain:
                best_gain = gain
                best = (fidx, float((xs[pos] + xs[pos + 1]) / 2.0), float(gain))
    return best


def _grow_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray,
               rows: np.ndarray, cols: np.ndarray, params: GbtParams) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    lam = params.l2_leaf_regularization
    lr = params.learning_rate

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(node: int, idx: np.ndarray, depth: int) -> None:
        g_sum = float(g[idx].sum())
        h_sum = float(h[idx].sum())
        split = None
        if depth < params.max_depth and len(idx) >= 2:
            split = _best_split(x[np.ix_(idx, cols)], g[idx], h[idx],
                                lam, params.min_child_weight)
        if split is None:
            value[node] = _leaf_weight(g_sum, h_sum, lam, lr)
            return
        f_local, thr, _ = split
        f = int(cols[f_local])
        go_left = x[idx, f] < thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        build(left[node], idx[go_left], depth + 1)
        build(right[node], idx[~go_left], depth + 1)

    root = new_node()
    build(root, rows, 0)
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def _subsample(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    take = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=take, replace=False))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z - z.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


class GbtModel:
    """Fitted ensemble. `kind` is "binary" (one tree per round) or
    "multiclass" (one tree per class per round)."""

    def __init__(self, kind: str, n_classes: int, n_features: int,
                 base_score: np.ndarray, params: GbtParams):
        self.kind = kind
        self.n_classes = n_classes
        self.n_features = n_features
        self.base_score = np.asarray(base_score, dtype=np.float64)
        self.params = params
        self.trees: list[Tree] = []
        self.tree_class: list[int] = []
        self.train_logloss: list[float] = []

    def _margins(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "binary":
            out = np.full(x.shape[0], float(self.base_score))
            for tree in self.trees:
                out += tree.predict(x)
            return out
        out = np.tile(self.base_score, (x.shape[0], 1))
        for tree, k in zip(self.trees, self.tree_class):
            out[:, k] += tree.predict(x)
        return out

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(
                f"expected {self.n_features} features, got shape {np.asarray(features).shape}"
            )
        if self.kind == "binary":
            p = _sigmoid(self._margins(x))
            probs = np.column_stack([1.0 - p, p])
        else:
            probs = _softmax_rows(self._margins(x))
        return probs[0] if single else probs

    def predict(self, features: np.ndarray) -> np.ndarray:
        probs = self.predict_proba(features)
        return np.argmax(probs, axis=-1)


def fit(features: np.ndarray, labels: np.ndarray, params: GbtParams,
        objective: str = "auto") -> GbtModel:
    """Boost `params.rounds` rounds on integer class labels 0..K-1.

    `objective` is "auto" (binary logistic when K == 2, softmax otherwise),
    "binary", or "multiclass" (softmax even for K == 2).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2:
        raise ShapeError(f"features must be (N, D), got {x.shape}")
    n, d = x.shape
    if d == 0:
        raise ValidationError("zero-width feature matrix")
    if n < 2:
        raise ValidationError(f"need at least 2 rows, got {n}")
    if y.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {y.shape}")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValidationError("labels must be nonnegative integers")
    k = int(y.max()) + 1
    present = np.bincount(y, minlength=k)
    if k < 2:
        raise ValidationError("single-class input: need at least two classes")
    if (present == 0).any():
        missing = int(np.argmin(present))
        raise ValidationError(f"class {missing} absent from training labels")
    if objective not in ("auto", "binary", "multiclass"):
        raise ValidationError(f"unknown objective {objective!r}")
    if objective == "binary" and k != 2:
        raise ValidationError(f"binary objective needs 2 classes, got {k}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(params.seed)))
    priors = present / n

    if k == 2 and objective != "multiclass":
        base = np.asarray(np.log(priors[1] / priors[0]))
        model = GbtModel("binary", 2, d, base, params)
        margin = np.full(n, float(base))
        yf = y.astype(np.float64)
        for _ in range(params.rounds):
            p = _sigmoid(margin)
            grad = p - yf
            hess = p * (1.0 - p)
            rows = _subsample(rng, n, params.row_subsample)
            cols = _subsample(rng, d, params.column_subsample_per_tree)
            tree = _grow_tree(x, grad, hess, rows, cols, params)
            model.trees.append(tree)
            model.tree_class.append(0)
            margin += tree.predict(x)
            pc = np.clip(_sigmoid(margin), _EPS, 1.0 - _EPS)
            model.train_logloss.append(
                float(-(yf * np.log(pc) + (1.0 - yf) * np.log(1.0 - pc)).mean())
            )
        return model

    base = np.log(priors)
    model = GbtModel("multiclass", k, d, base, params)
    margins = np.tile(base, (n, 1))
    onehot = np.eye(k)[y]
    for _ in range(params.rounds):
        probs = _softmax_rows(margins)
        rows = _subsample(rng, n, params.row_subsample)
        for cls in range(k):
            grad = probs[:, cls] - onehot[:, cls]
            # doubled diagonal hessian: makes K=2 match binary logistic at lam=0
            hess = 2.0 * probs[:, cls] * (1.0 - probs[:, cls])
            cols = _subsample(rng, d, params.column_subsample_per_tree)
            tree = _grow_tree(x, grad, hess, rows, cols, params)
            model.trees.append(tree)
            model.tree_class.append(cls)
            margins[:, cls] += tree.predict(x)
        pc = np.clip(_softmax_rows(margins)[np.arange(n), y], _EPS, 1.0)
        model.train_logloss.append(float(-np.log(pc).mean()))
    return model


def predict_proba(model: GbtModel, features: np.ndarray) -> np.ndarray:
    return model.predict_proba(features)
