"""Random forest over categorical label columns.

Each internal node tests ``row[column] == value``; rows that match go left.
Trees are stored as flat arrays so prediction can walk many rows at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, InsufficientSamples
from .local import MatchingRecord

DEFAULT_TREES = 150
DEFAULT_MAX_DEPTH = 16


class Tree(NamedTuple):
    feature: np.ndarray   # -1 at leaves
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray     # leaf label, 0 at internal nodes
    depth: int

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            hit = X[rows, np.where(internal, f, 0)] == self.value[node]
            node = np.where(internal, np.where(hit, self.left[node], self.right[node]), node)
        return self.label[node]


@dataclass
class ForestModel:
    trees: list[Tree]
    n_columns: int
    classes: np.ndarray
    max_depth: int | None
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, H) -> np.ndarray:
        """Per-tree predictions, shape ``(n_trees, rows)``."""
        X = np.atleast_2d(np.asarray(H, dtype=np.int64))
        if X.shape[1] != self.n_columns:
            raise DimensionMismatch(f"row length {X.shape[1]} != trained width {self.n_columns}")
        return np.vstack([t.apply(X) for t in self.trees])

    def predict(self, H) -> tuple[np.ndarray, np.ndarray]:
        """Majority vote; ties go to the smallest label; score is the vote share."""
        votes = self.votes(H)
        counts = np.stack([(votes == c).sum(axis=0) for c in self.classes])
        pick = np.argmax(counts, axis=0)
        return self.classes[pick], counts[pick, np.arange(votes.shape[1])] / votes.shape[0]


def _gini_best_split(Xn: np.ndarray, yn: np.ndarray, columns, n_classes: int, n_values: int):
    """Best (column, value) predicate by Gini decrease, or None if nothing helps.

    All candidate columns are counted with a single bincount over
    (column, value, class) cells.
    """
    columns = np.asarray(columns)
    n = yn.shape[0]
    total = np.bincount(yn, minlength=n_classes).astype(np.float64)
    parent = 1.0 - np.sum((total / n) ** 2)
    width = n_values * n_classes
    cells = Xn[:, columns] * n_classes + yn[:, None] + np.arange(columns.shape[0]) * width
    table = np.bincount(cells.ravel(), minlength=columns.shape[0] * width)
    table = table.reshape(columns.shape[0], n_values, n_classes).astype(np.float64)
    n_left = table.sum(axis=2)
    valid = (n_left > 0) & (n_left < n)
    if not valid.any():
        return None
    n_right = n - n_left
    rest = total - table
    with np.errstate(invalid="ignore", divide="ignore"):
        g_left = 1.0 - np.sum(table ** 2, axis=2) / n_left ** 2
        g_right = 1.0 - np.sum(rest ** 2, axis=2) / n_right ** 2
        gain = parent - (n_left * g_left + n_right * g_right) / n
    gain = np.where(valid, gain, -np.inf)
    k = int(np.argmax(gain))  # first maximum in (column order, value) order
    c, v = divmod(k, n_values)
    if gain[c, v] <= 1e-12:
        return None
    return int(columns[c]), int(v)


def _grow(X, y, classes, rng, max_depth, n_candidates) -> Tree:
    n_classes = classes.shape[0]
    n_values = int(X.max()) + 1
    feature, value, left, right, label = [], [], [], [], []
    deepest = 0

    def leaf(node, yn):
        counts = np.bincount(yn, minlength=n_classes)
        label[node] = int(classes[int(np.argmax(counts))])

    def new_node():
        for arr, fill in ((feature, -1), (value, 0), (left, -1), (right, -1), (label, 0)):
            arr.append(fill)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    S = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        deepest = max(deepest, depth)
        yn = y[idx]
        if (idx.shape[0] < 2 or np.all(yn == yn[0])
                or (max_depth is not None and depth >= max_depth)):
            leaf(node, yn)
            continue
        order = rng.permutation(S)
        Xn = X[idx]
        split = _gini_best_split(Xn, yn, order[:n_candidates], n_classes, n_values)
        if split is None and n_candidates < S:
            split = _gini_best_split(Xn, yn, order[n_candidates:], n_classes, n_values)
        if split is None:
            leaf(node, yn)
            continue
        s, v = split
        hit = Xn[:, s] == v
        feature[node], value[node] = s, v
        lo, hi = new_node(), new_node()
        left[node], right[node] = lo, hi
        stack.append((hi, idx[~hit], depth + 1))
        stack.append((lo, idx[hit], depth + 1))

    return Tree(np.array(feature, dtype=np.int64), np.array(value, dtype=np.int64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(label, dtype=np.int64), deepest)


def train_forest(H, truth, n_trees: int = DEFAULT_TREES, max_depth: int | None = DEFAULT_MAX_DEPTH,
                 seed: int = 0) -> ForestModel:
    """Bagged trees on the label matrix ``H`` (rows = samples, columns = related patches).

    At each node ``ceil(sqrt(S))`` columns are drawn and every (column == label)
    predicate on them is scored by Gini decrease. If none of the drawn columns
    gives a positive decrease the remaining columns are tried before the node
    becomes a leaf.
    """
    X = np.atleast_2d(np.asarray(H, dtype=np.int64))
    y = np.asarray(truth, dtype=np.int64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise InsufficientSamples(f"forest needs at least 2 samples, got {X.shape[0]}")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    classes, y_codes = np.unique(y, return_inverse=True)
    S = X.shape[1]
    n_candidates = max(1, math.ceil(math.sqrt(S)))
    M = X.shape[0]
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, M, size=M)
        trees.append(_grow(X[boot], y_codes[boot], classes, rng, max_depth, n_candidates))
    return ForestModel(trees, S, classes, max_depth, seed)


def predict_forest(f: ForestModel, H_row) -> MatchingRecord:
    row = np.asarray(H_row, dtype=np.int64).reshape(1, -1)
    labels, scores = f.predict(row)
    return MatchingRecord(int(labels[0]), float(scores[0]))
