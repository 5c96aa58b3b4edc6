"""Six online bagging ensembles behind one train/predict interface.

Every learner owns its own deterministic RNG stream, so the order in which
learners are trained for a given instance never matters: sequential,
per-instance parallel and mini-batch executors consume identical randomness
per learner and converge to byte-identical models for the detector-free
algorithms.

Algorithms:
  ozabag       weight each instance per learner with Poisson(1)
  ozabag_asht  ozabag over adaptive-size trees with a doubling node budget
  obadwin      ozabag + per-learner error window; one global replacement of
               the worst learner when any window signals change
  lbag         Poisson(6) resampling; each learner resets itself on change
  arf          Poisson(6), per-leaf random feature subsets, warning starts a
               background tree, drift promotes it
  srp          Poisson(6), one random feature patch per learner, warn/drift
               handling as arf with a fresh patch on replacement
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass, field

from .adwin import Adwin
from .data import Instance, Schema
from .tree import HoeffdingTree, HTConfig

OZABAG = "ozabag"
OZABAG_ASHT = "ozabag_asht"
OBADWIN = "obadwin"
LBAG = "lbag"
ARF = "arf"
SRP = "srp"

ALGORITHMS = (OZABAG, OZABAG_ASHT, OBADWIN, LBAG, ARF, SRP)

_LAMBDA = {OZABAG: 1.0, OZABAG_ASHT: 1.0, OBADWIN: 1.0, LBAG: 6.0, ARF: 6.0, SRP: 6.0}

_ASHT_CAP_EXP = 10  # size ladder tops out at 2^10 split nodes


def mix_seed(base_seed: int, index: int) -> int:
    """Derive a well-separated 64-bit seed for learner `index` (splitmix64)."""
    z = (base_seed + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def poisson_weight(rng: random.Random, lam: float) -> int:
    """Poisson draw by CDF inversion from a single uniform variate."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    u = rng.random()
    p = math.exp(-lam)
    cum = p
    k = 0
    while u > cum:
        k += 1
        p *= lam / k
        if p <= 0.0:  # tail exhausted by float underflow
            break
        cum += p
    return k


def argmax_lowest(values) -> int:
    best, best_i = values[0], 0
    for i in range(1, len(values)):
        if values[i] > best:
            best, best_i = values[i], i
    return best_i


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble hyperparameters; the Poisson lambda is fixed per algorithm."""

    algorithm: str
    size: int
    base_seed: int = 1
    subspace_size: int | None = None  # arf/srp; default round(sqrt(F)) + 1
    delta_error: float = 0.002        # obadwin replacement detector
    delta_warn: float = 0.01          # arf/srp warning detector
    delta_drift: float = 0.001        # lbag/arf/srp drift detector
    ht: HTConfig = field(default_factory=HTConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.size < 1:
            raise ValueError("ensemble size must be >= 1")

    @property
    def lam(self) -> float:
        return _LAMBDA[self.algorithm]


class SubspacePicker:
    """Draws a sorted random feature subset per leaf from a learner's RNG."""

    __slots__ = ("rng", "n_features", "width")

    def __init__(self, rng: random.Random, n_features: int, width: int):
        self.rng = rng
        self.n_features = n_features
        self.width = width

    def __call__(self) -> tuple[int, ...]:
        return tuple(sorted(self.rng.sample(range(self.n_features), self.width)))


class LearnerUnit:
    """One independently ownable learner: tree, RNG stream, detectors and an
    optional background tree. Exactly one thread may call train_one at a time;
    units are transferable between threads/processes at batch boundaries.
    """

    __slots__ = ("index", "algorithm", "lam", "config", "feature_kinds",
                 "n_classes", "n_features", "rng", "tree", "subspace",
                 "background", "bg_subspace", "warn", "drift", "resets")

    constructed = 0  # class-level counter; lets tests assert task reuse

    def __init__(self, index: int, config: EnsembleConfig,
                 feature_kinds: tuple[int, ...], n_classes: int):
        LearnerUnit.constructed += 1
        self.index = index
        self.algorithm = config.algorithm
        self.lam = config.lam
        self.config = config
        self.feature_kinds = feature_kinds
        self.n_classes = n_classes
        self.n_features = len(feature_kinds)
        self.rng = random.Random(mix_seed(config.base_seed, index))
        self.subspace = None
        self.background = None
        self.bg_subspace = None
        self.warn = None
        self.drift = None
        self.resets = 0
        self._init_model()

    # -- model construction ----------------------------------------------------

    def _subspace_width(self) -> int:
        k = self.config.subspace_size
        if k is None:
            k = int(round(math.sqrt(self.n_features))) + 1
        return max(1, min(k, self.n_features))

    def _draw_subspace(self) -> tuple[int, ...]:
        return tuple(sorted(self.rng.sample(range(self.n_features), self._subspace_width())))

    def _fresh_tree(self, subspace: tuple[int, ...] | None = None) -> HoeffdingTree:
        algo = self.algorithm
        if algo == SRP:
            kinds = tuple(self.feature_kinds[j] for j in subspace)
            return HoeffdingTree(kinds, self.n_classes, self.config.ht)
        if algo == ARF:
            picker = SubspacePicker(self.rng, self.n_features, self._subspace_width())
            return HoeffdingTree(self.feature_kinds, self.n_classes, self.config.ht,
                                 leaf_feature_picker=picker)
        if algo == OZABAG_ASHT:
            budget = 1 << min(self.index + 1, _ASHT_CAP_EXP)
            return HoeffdingTree(self.feature_kinds, self.n_classes, self.config.ht,
                                 max_split_nodes=budget)
        return HoeffdingTree(self.feature_kinds, self.n_classes, self.config.ht)

    def _fresh_detectors(self) -> None:
        algo = self.algorithm
        if algo == OBADWIN:
            self.drift = Adwin(self.config.delta_error)
        elif algo == LBAG:
            self.drift = Adwin(self.config.delta_drift)
        elif algo in (ARF, SRP):
            self.warn = Adwin(self.config.delta_warn)
            self.drift = Adwin(self.config.delta_drift)

    def _init_model(self) -> None:
        if self.algorithm == SRP:
            self.subspace = self._draw_subspace()
        self.tree = self._fresh_tree(self.subspace)
        self.background = None
        self.bg_subspace = None
        self._fresh_detectors()

    def reset(self) -> None:
        """Replace the model with a fresh one; the RNG stream continues."""
        self._init_model()
        self.resets += 1

    # -- prediction --------------------------------------------------------------

    def classify(self, instance: Instance) -> list[float]:
        values = instance.values
        if self.subspace is not None:
            values = tuple(values[j] for j in self.subspace)
        return self.tree.votes(values)

    # -- training ----------------------------------------------------------------

    def train_one(self, instance: Instance) -> tuple[bool, bool, float]:
        """Process one instance; returns (reset_happened, change_fired, error_estimate).

        change_fired/error_estimate only matter for the globally coordinated
        algorithm (obadwin); self-resetting algorithms apply their resets here.
        """
        k = poisson_weight(self.rng, self.lam)
        algo = self.algorithm
        values = instance.values
        cls = instance.class_index

        if algo == OZABAG or algo == OZABAG_ASHT:
            if k > 0:
                self.tree.train(values, cls, k)
            return (False, False, 0.0)

        if self.subspace is not None:
            values = tuple(instance.values[j] for j in self.subspace)
        # A zero weight still yields the pre-update correctness flag without
        # touching any statistics; the detectors see every instance.
        correct = self.tree.train(values, cls, k)
        err = 0.0 if correct else 1.0

        if self.background is not None and k > 0:
            bg_values = instance.values
            if self.bg_subspace is not None:
                bg_values = tuple(bg_values[j] for j in self.bg_subspace)
            self.background.train(bg_values, cls, k)

        if algo == OBADWIN:
            fired = self.drift.add(err)
            return (False, fired, self.drift.estimate_or())

        if algo == LBAG:
            if self.drift.add(err):
                self.reset()
                return (True, False, 0.0)
            return (False, False, 0.0)

        # arf / srp: warning starts a background model, drift promotes it.
        if self.warn.add(err) and self.background is None:
            if algo == SRP:
                self.bg_subspace = self._draw_subspace()
                self.background = self._fresh_tree(self.bg_subspace)
            else:
                self.background = self._fresh_tree()
            self.warn = Adwin(self.config.delta_warn)
        if self.drift.add(err):
            if self.background is not None:
                self.tree = self.background
                if algo == SRP:
                    self.subspace = self.bg_subspace
            else:
                if algo == SRP:
                    self.subspace = self._draw_subspace()
                self.tree = self._fresh_tree(self.subspace)
            self.background = None
            self.bg_subspace = None
            self._fresh_detectors()
            self.resets += 1
            return (True, False, 0.0)
        return (False, False, 0.0)

    # -- serialization -------------------------------------------------------------

    def _encode_rng(self) -> bytes:
        version, state, _ = self.rng.getstate()
        return struct.pack(f"<I{len(state)}I", version, *state)

    def encode(self) -> bytes:
        """Deterministic binary snapshot of all model-relevant unit state."""
        out = [struct.pack("<I", self.index)]
        for space in (self.subspace, self.bg_subspace):
            if space is None:
                out.append(struct.pack("<I", 0xFFFFFFFF))
            else:
                out.append(struct.pack(f"<I{len(space)}I", len(space), *space))
        out.append(self.tree.to_bytes())
        if self.background is None:
            out.append(b"\x00")
        else:
            out.append(b"\x01")
            out.append(self.background.to_bytes())
        for det in (self.warn, self.drift):
            out.append(b"\x00" if det is None else b"\x01" + det.to_bytes())
        out.append(self._encode_rng())
        return b"".join(out)


def aggregate_votes(per_unit_votes: list[list[float]], n_classes: int) -> tuple[list[float], int]:
    """Sum each learner's vote vector normalized to 1; ties go to the lowest class."""
    combined = [0.0] * n_classes
    for votes in per_unit_votes:
        s = sum(votes)
        if s > 0.0:
            for j in range(n_classes):
                combined[j] += votes[j] / s
    return combined, argmax_lowest(combined)


def decide_global_reset(fired: list[bool], estimates: list[float]) -> int | None:
    """Pick the learner to replace after a global change signal: the one with
    the highest windowed error estimate (lowest index on ties)."""
    if not any(fired):
        return None
    best = 0
    for i in range(1, len(estimates)):
        if estimates[i] > estimates[best]:
            best = i
    return best


class Ensemble:
    """m learner units plus the serial aggregation/replacement logic."""

    def __init__(self, config: EnsembleConfig, schema: Schema):
        self.config = config
        self.schema = schema
        self.n_classes = schema.num_classes
        kinds = tuple(
            len(schema.attributes[i].values) if schema.attributes[i].is_nominal else 0
            for i in schema.feature_indices
        )
        self.feature_kinds = kinds
        self.units = [LearnerUnit(i, config, kinds, self.n_classes)
                      for i in range(config.size)]

    @property
    def size(self) -> int:
        return len(self.units)

    def predict(self, instance: Instance) -> tuple[list[float], int]:
        return aggregate_votes([u.classify(instance) for u in self.units], self.n_classes)

    def train(self, instance: Instance) -> list[int]:
        """Train every learner on one instance (serial reference path).

        Returns the indices of learners that were replaced while processing it.
        """
        reset_indices: list[int] = []
        fired: list[bool] = []
        estimates: list[float] = []
        for unit in self.units:
            did_reset, unit_fired, estimate = unit.train_one(instance)
            if did_reset:
                reset_indices.append(unit.index)
            fired.append(unit_fired)
            estimates.append(estimate)
        target = decide_global_reset(fired, estimates)
        if target is not None:
            self.units[target].reset()
            reset_indices.append(target)
        return reset_indices

    def reset_learner(self, index: int) -> None:
        if not 0 <= index < len(self.units):
            raise IndexError(f"learner index {index} out of range")
        self.units[index].reset()

    def digest(self) -> str:
        h = hashlib.sha256()
        for unit in self.units:
            h.update(unit.encode())
        return h.hexdigest()
