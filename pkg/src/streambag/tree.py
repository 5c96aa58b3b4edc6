"""Incremental Hoeffding tree classifier with an adaptive-size variant.

The tree grows by routing each weighted instance to a leaf, accumulating
per-class statistics there, and attempting a split once enough weight has
arrived since the last attempt. A split is taken when the information-gain
margin between the two best candidates clears the Hoeffding confidence
radius, or when that radius has shrunk below the tie threshold.

All decisions (candidate ordering, tie-breaking, vote computation) are
deterministic so that identical training sequences produce byte-identical
serialized models.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

from .data import Schema

MAJORITY_CLASS = "majority_class"
NAIVE_BAYES_ADAPTIVE = "naive_bayes_adaptive"

_LOG2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def hoeffding_bound(r: float, delta: float, n: float) -> float:
    """Confidence radius sqrt(r^2 ln(1/delta) / 2n) for n observations.

    Monotone non-increasing in n and linear in r.
    """
    if r <= 0:
        raise ValueError("range r must be positive")
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    if n <= 0:
        raise ValueError("n must be positive")
    return math.sqrt(r * r * math.log(1.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class HTConfig:
    """Hoeffding tree hyperparameters."""

    grace_period: int = 200
    split_confidence: float = 1e-7
    tie_threshold: float = 0.05
    leaf_predictor: str = NAIVE_BAYES_ADAPTIVE
    numeric_bins: int = 10

    def __post_init__(self):
        if self.grace_period < 1:
            raise ValueError("grace_period must be positive")
        if not 0 < self.split_confidence < 1:
            raise ValueError("split_confidence must be in (0, 1)")
        if self.tie_threshold < 0:
            raise ValueError("tie_threshold must be non-negative")
        if self.leaf_predictor not in (MAJORITY_CLASS, NAIVE_BAYES_ADAPTIVE):
            raise ValueError(f"unknown leaf predictor {self.leaf_predictor!r}")
        if self.numeric_bins < 1:
            raise ValueError("numeric_bins must be positive")


class NominalObserver:
    """Per-class value counts for one nominal feature."""

    __slots__ = ("counts", "class_totals")

    def __init__(self, n_classes: int, n_values: int):
        self.counts = [[0.0] * n_values for _ in range(n_classes)]
        self.class_totals = [0.0] * n_classes

    def add(self, value: float, cls: int, weight: float) -> None:
        self.counts[cls][int(value)] += weight
        self.class_totals[cls] += weight

    def mul_likelihood(self, scores: list[float], value: float) -> None:
        v = int(value)
        n_values = len(self.counts[0])
        for c, row in enumerate(self.counts):
            if scores[c] > 0.0:
                # Laplace-smoothed conditional probability.
                scores[c] *= (row[v] + 1.0) / (self.class_totals[c] + n_values)


class GaussianObserver:
    """Per-class Gaussian estimate (weight/mean/m2) plus the observed range."""

    __slots__ = ("weights", "means", "m2s", "vmin", "vmax")

    def __init__(self, n_classes: int):
        self.weights = [0.0] * n_classes
        self.means = [0.0] * n_classes
        self.m2s = [0.0] * n_classes
        self.vmin = math.inf
        self.vmax = -math.inf

    def add(self, value: float, cls: int, weight: float) -> None:
        if value < self.vmin:
            self.vmin = value
        if value > self.vmax:
            self.vmax = value
        w = self.weights[cls] + weight
        delta = value - self.means[cls]
        mean = self.means[cls] + delta * weight / w
        self.weights[cls] = w
        self.means[cls] = mean
        self.m2s[cls] += weight * delta * (value - mean)

    def variance(self, cls: int) -> float:
        w = self.weights[cls]
        if w <= 1.0:
            return 0.0
        return max(self.m2s[cls] / (w - 1.0), 0.0)

    def mul_likelihood(self, scores: list[float], value: float) -> None:
        for c in range(len(scores)):
            if scores[c] <= 0.0:
                continue
            w = self.weights[c]
            if w <= 0.0:
                scores[c] = 0.0
                continue
            var = self.variance(c)
            if var > 1e-18:
                sd = math.sqrt(var)
                z = (value - self.means[c]) / sd
                scores[c] *= math.exp(-0.5 * z * z) / (sd * _SQRT2PI)
            elif value != self.means[c]:
                scores[c] = 0.0

    def left_weight(self, cls: int, threshold: float) -> float:
        """Estimated class weight at or below the threshold."""
        w = self.weights[cls]
        if w <= 0.0:
            return 0.0
        var = self.variance(cls)
        if var <= 1e-18:
            return w if self.means[cls] <= threshold else 0.0
        z = (threshold - self.means[cls]) / (math.sqrt(var) * _SQRT2)
        return w * 0.5 * (1.0 + math.erf(z))


class LeafNode:
    __slots__ = ("counts", "observers", "mc_correct", "nb_correct",
                 "last_attempt_weight", "allowed")

    def __init__(self, counts: list[float], observers: list, allowed):
        self.counts = counts
        self.observers = observers
        self.mc_correct = 0.0
        self.nb_correct = 0.0
        self.last_attempt_weight = 0.0
        self.allowed = allowed  # feature positions this leaf may split on, or None


class SplitNode:
    __slots__ = ("feature", "threshold", "children")

    def __init__(self, feature: int, threshold: float | None, children: list):
        self.feature = feature
        self.threshold = threshold  # None for a branch-per-value nominal split
        self.children = children


def _argmax(values: Sequence[float]) -> int:
    best, best_i = values[0], 0
    for i in range(1, len(values)):
        if values[i] > best:
            best, best_i = values[i], i
    return best_i


def _entropy(counts: Sequence[float], total: float) -> float:
    if total <= 0.0:
        return 0.0
    h = 0.0
    for c in counts:
        if c > 0.0:
            p = c / total
            h -= p * math.log(p)
    return h / _LOG2


class HoeffdingTree:
    """Single-writer incremental decision tree over a fixed feature layout.

    feature_kinds holds one entry per feature position: 0 for numeric,
    otherwise the nominal value count. When max_split_nodes is set, the tree
    resets to a fresh root leaf as soon as a split pushes the split-node
    count past the budget (the adaptive-size variant).

    leaf_feature_picker, when given, is called at every leaf creation and
    returns the feature positions that leaf is allowed to split on.
    """

    __slots__ = ("config", "n_classes", "feature_kinds", "root", "split_count",
                 "max_split_nodes", "leaf_feature_picker", "_nba")

    def __init__(self, feature_kinds: tuple[int, ...], n_classes: int,
                 config: HTConfig | None = None,
                 max_split_nodes: int | None = None,
                 leaf_feature_picker: Callable[[], tuple[int, ...]] | None = None):
        if max_split_nodes is not None and max_split_nodes < 1:
            raise ValueError("max_split_nodes must be >= 1")
        self.config = config or HTConfig()
        self.n_classes = n_classes
        self.feature_kinds = feature_kinds
        self.max_split_nodes = max_split_nodes
        self.leaf_feature_picker = leaf_feature_picker
        self.split_count = 0
        self.root = self._new_leaf([0.0] * n_classes)
        self._nba = self.config.leaf_predictor == NAIVE_BAYES_ADAPTIVE

    @classmethod
    def for_schema(cls, schema: Schema, **kwargs) -> "HoeffdingTree":
        kinds = tuple(
            len(schema.attributes[i].values) if schema.attributes[i].is_nominal else 0
            for i in schema.feature_indices
        )
        return cls(kinds, schema.num_classes, **kwargs)

    # -- construction ------------------------------------------------------

    def _new_leaf(self, counts: list[float]) -> LeafNode:
        allowed = None
        if self.leaf_feature_picker is not None:
            allowed = tuple(self.leaf_feature_picker())
        positions = range(len(self.feature_kinds)) if allowed is None else allowed
        observers: list = [None] * len(self.feature_kinds)
        for p in positions:
            k = self.feature_kinds[p]
            observers[p] = NominalObserver(self.n_classes, k) if k else GaussianObserver(self.n_classes)
        return LeafNode(counts, observers, allowed)

    def reset(self) -> None:
        self.split_count = 0
        self.root = self._new_leaf([0.0] * self.n_classes)

    # -- prediction ----------------------------------------------------------

    def _route(self, values: Sequence[float]) -> LeafNode:
        node = self.root
        while type(node) is SplitNode:
            t = node.threshold
            if t is None:
                node = node.children[int(values[node.feature])]
            else:
                node = node.children[0 if values[node.feature] <= t else 1]
        return node

    def _nb_scores(self, leaf: LeafNode, values: Sequence[float]) -> list[float] | None:
        counts = leaf.counts
        total = sum(counts)
        if total <= 0.0:
            return None
        scores = [c / total for c in counts]
        for p, obs in enumerate(leaf.observers):
            if obs is not None:
                obs.mul_likelihood(scores, values[p])
        return scores

    def votes(self, values: Sequence[float]) -> list[float]:
        """Class vote vector for a feature-value sequence; never mutates."""
        leaf = self._route(values)
        counts = leaf.counts
        if self._nba and leaf.nb_correct > leaf.mc_correct:
            scores = self._nb_scores(leaf, values)
            if scores is not None:
                z = sum(scores)
                if z > 0.0:
                    total = sum(counts)
                    return [s / z * total for s in scores]
        return list(counts)

    def predict(self, values: Sequence[float]) -> int:
        return _argmax(self.votes(values))

    # -- training ------------------------------------------------------------

    def train(self, values: Sequence[float], cls: int, weight: float) -> bool:
        """Route, record and maybe split; returns whether the leaf's current
        prediction for this instance was correct before any statistics were
        updated (the test-then-train error signal). A zero weight leaves the
        tree unchanged.
        """
        node = self.root
        parent = None
        child_idx = 0
        while type(node) is SplitNode:
            t = node.threshold
            idx = int(values[node.feature]) if t is None else (0 if values[node.feature] <= t else 1)
            parent, child_idx, node = node, idx, node.children[idx]

        counts = node.counts
        mc_pred = _argmax(counts)
        if self._nba:
            scores = self._nb_scores(node, values)
            nb_pred = mc_pred if scores is None else _argmax(scores)
            chosen = nb_pred if node.nb_correct > node.mc_correct else mc_pred
            if weight > 0.0:
                if mc_pred == cls:
                    node.mc_correct += weight
                if nb_pred == cls:
                    node.nb_correct += weight
        else:
            chosen = mc_pred
        correct = chosen == cls

        if weight <= 0.0:
            return correct

        counts[cls] += weight
        for p, obs in enumerate(node.observers):
            if obs is not None:
                obs.add(values[p], cls, weight)

        total = sum(counts)
        if total - node.last_attempt_weight >= self.config.grace_period:
            self._attempt_split(node, parent, child_idx, total)
        return correct

    def _attempt_split(self, leaf: LeafNode, parent: SplitNode | None,
                       child_idx: int, total: float) -> None:
        leaf.last_attempt_weight = total
        counts = leaf.counts
        observed = sum(1 for c in counts if c > 0.0)
        if observed < 2:
            return

        pre_entropy = _entropy(counts, total)
        best_gain = 0.0
        second_gain = 0.0
        best: tuple[int, float | None, list[list[float]]] | None = None

        positions = range(len(self.feature_kinds)) if leaf.allowed is None else leaf.allowed
        for p in positions:
            obs = leaf.observers[p]
            if obs is None:
                continue
            if self.feature_kinds[p]:
                cand = self._nominal_candidate(obs, pre_entropy, total)
            else:
                cand = self._numeric_candidate(obs, pre_entropy, total)
            if cand is None:
                continue
            gain, threshold, dists = cand
            if gain > best_gain:
                second_gain = best_gain
                best_gain = gain
                best = (p, threshold, dists)
            elif gain > second_gain:
                second_gain = gain
        if best is None:
            return

        eps = hoeffding_bound(
            math.log2(self.n_classes), self.config.split_confidence, total
        )
        if best_gain - second_gain > eps or eps < self.config.tie_threshold:
            feature, threshold, dists = best
            children = [self._new_leaf(d) for d in dists]
            split = SplitNode(feature, threshold, children)
            if parent is None:
                self.root = split
            else:
                parent.children[child_idx] = split
            self.split_count += 1
            if self.max_split_nodes is not None and self.split_count > self.max_split_nodes:
                self.reset()

    def _nominal_candidate(self, obs: NominalObserver, pre_entropy: float,
                           total: float):
        n_values = len(obs.counts[0])
        dists = [[row[v] for row in obs.counts] for v in range(n_values)]
        post = 0.0
        for d in dists:
            t = sum(d)
            if t > 0.0:
                post += t / total * _entropy(d, t)
        return pre_entropy - post, None, dists

    def _numeric_candidate(self, obs: GaussianObserver, pre_entropy: float,
                           total: float):
        vmin, vmax = obs.vmin, obs.vmax
        if not vmin < vmax:
            return None
        bins = self.config.numeric_bins
        step = (vmax - vmin) / (bins + 1)
        n_classes = self.n_classes
        best = None
        for j in range(1, bins + 1):
            t = vmin + step * j
            left = [obs.left_weight(c, t) for c in range(n_classes)]
            right = [obs.weights[c] - left[c] for c in range(n_classes)]
            lt, rt = sum(left), sum(right)
            post = 0.0
            if lt > 0.0:
                post += lt / total * _entropy(left, lt)
            if rt > 0.0:
                post += rt / total * _entropy(right, rt)
            gain = pre_entropy - post
            if best is None or gain > best[0]:
                best = (gain, t, [left, right])
        return best

    # -- introspection and serialization --------------------------------------

    def leaf_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if type(node) is SplitNode:
                stack.extend(node.children)
            else:
                count += 1
        return count

    def to_bytes(self) -> bytes:
        """Deterministic depth-first binary encoding of the full model state."""
        out = [struct.pack("<I", self.split_count)]
        self._encode_node(self.root, out)
        return b"".join(out)

    def _encode_node(self, node, out: list[bytes]) -> None:
        if type(node) is SplitNode:
            if node.threshold is None:
                out.append(struct.pack("<cII", b"S", node.feature, len(node.children)))
            else:
                out.append(struct.pack("<cId", b"T", node.feature, node.threshold))
            for child in node.children:
                self._encode_node(child, out)
            return
        allowed = node.allowed
        if allowed is None:
            out.append(struct.pack("<cI", b"L", 0xFFFFFFFF))
        else:
            out.append(struct.pack(f"<cI{len(allowed)}I", b"L", len(allowed), *allowed))
        out.append(struct.pack(
            f"<3d{len(node.counts)}d",
            node.mc_correct, node.nb_correct, node.last_attempt_weight, *node.counts,
        ))
        for obs in node.observers:
            if obs is None:
                out.append(b"-")
            elif type(obs) is NominalObserver:
                flat = [c for row in obs.counts for c in row]
                out.append(struct.pack(f"<cI{len(flat)}d", b"N", len(flat), *flat))
            else:
                stats = []
                for c in range(self.n_classes):
                    stats.extend((obs.weights[c], obs.means[c], obs.m2s[c]))
                out.append(struct.pack(f"<c{len(stats)}d2d", b"G", *stats, obs.vmin, obs.vmax))
