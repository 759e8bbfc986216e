"""Mixed feature spaces, datasets and axis-aligned boxes.

Points are stored as plain tuples with one entry per feature: a float for
continuous features, an int for integer features and a category index for
categorical features.  Numerical code works on ``float64`` arrays of shape
``(n, D)`` holding the same values, see :meth:`FeatureSpace.to_array`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

MAX_CATEGORIES = 64


class DomainError(ValueError):
    """A point or box does not belong to the feature space."""


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float
    name: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"continuous feature needs finite lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Integer:
    lo: int
    hi: int
    name: str = ""

    def __post_init__(self):
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise ValueError("integer feature bounds must be integers")
        if not self.lo < self.hi:
            raise ValueError(f"integer feature needs lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Categorical:
    n_categories: int
    name: str = ""
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_categories < 2:
            raise ValueError("categorical feature needs at least 2 categories")
        if self.n_categories > MAX_CATEGORIES:
            raise ValueError(f"at most {MAX_CATEGORIES} categories are supported")
        if self.labels is not None and len(self.labels) != self.n_categories:
            raise ValueError("number of labels does not match n_categories")

    @property
    def full_mask(self) -> int:
        return (1 << self.n_categories) - 1

    def label(self, index: int) -> str:
        return self.labels[index] if self.labels is not None else str(index)

    def index(self, label: str) -> int:
        if self.labels is None:
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown category {label!r} for feature {self.name!r}") from None


FeatureSpec = Union[Continuous, Integer, Categorical]
Point = tuple


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def mask_members(mask: int) -> list[int]:
    """Category indices set in ``mask``, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class Box:
    """Axis-aligned subdomain.

    ``bounds[f]`` is a ``(lo, hi)`` pair for numeric features (closed
    interval; ints for integer features) and an int bitmask of the allowed
    categories for categorical features.
    """

    bounds: tuple

    def __len__(self):
        return len(self.bounds)

    def with_bound(self, feature: int, bound) -> "Box":
        b = list(self.bounds)
        b[feature] = bound
        return Box(tuple(b))

    def is_subset(self, other: "Box") -> bool:
        for mine, theirs in zip(self.bounds, other.bounds):
            if isinstance(mine, tuple):
                if mine[0] < theirs[0] or mine[1] > theirs[1]:
                    return False
            elif mine & ~theirs:
                return False
        return True


@dataclass(frozen=True)
class FeatureSpace:
    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if len(self.features) < 1:
            raise ValueError("feature space needs at least one feature")

    @property
    def D(self) -> int:
        return len(self.features)

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i):
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name or f"x{i}" for i, f in enumerate(self.features)]

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([isinstance(f, Categorical) for f in self.features])

    def full_box(self) -> Box:
        bounds = []
        for f in self.features:
            if isinstance(f, Categorical):
                bounds.append(f.full_mask)
            elif isinstance(f, Integer):
                bounds.append((int(f.lo), int(f.hi)))
            else:
                bounds.append((float(f.lo), float(f.hi)))
        return Box(tuple(bounds))

    def validate_point(self, x) -> Point:
        """Return ``x`` as a typed tuple, raising :class:`DomainError` if it is outside the space."""
        if len(x) != self.D:
            raise DomainError(f"point has {len(x)} coordinates, space has {self.D}")
        out = []
        for value, f in zip(x, self.features):
            if isinstance(value, float) and math.isnan(value):
                raise DomainError("NaN coordinate")
            if isinstance(f, Continuous):
                v = float(value)
                if not f.lo <= v <= f.hi:
                    raise DomainError(f"{v} outside [{f.lo}, {f.hi}]")
            else:
                v = int(round(float(value)))
                if v != float(value):
                    raise DomainError(f"{value} is not an integer")
                lo, hi = (f.lo, f.hi) if isinstance(f, Integer) else (0, f.n_categories - 1)
                if not lo <= v <= hi:
                    raise DomainError(f"{v} outside [{lo}, {hi}]")
            out.append(v)
        return tuple(out)

    def to_array(self, points) -> np.ndarray:
        if isinstance(points, np.ndarray):
            X = np.asarray(points, dtype=np.float64)
            if X.ndim == 1:
                X = X[None, :]
            if X.shape[1] != self.D:
                raise DomainError(f"expected {self.D} columns, got {X.shape[1]}")
            return X
        points = list(points)
        if not points:
            return np.zeros((0, self.D))
        return np.array([self.validate_point(p) for p in points], dtype=np.float64)

    def to_points(self, X: np.ndarray) -> list[Point]:
        out = []
        for row in np.atleast_2d(X):
            out.append(tuple(float(v) if isinstance(f, Continuous) else int(v)
                             for v, f in zip(row, self.features)))
        return out

    def contains_array(self, X: np.ndarray) -> np.ndarray:
        return box_contains_array(self.full_box(), X)

    def to_dict(self) -> dict:
        feats = []
        for name, f in zip(self.names, self.features):
            if isinstance(f, Continuous):
                feats.append({"name": name, "type": "continuous", "lo": f.lo, "hi": f.hi})
            elif isinstance(f, Integer):
                feats.append({"name": name, "type": "integer", "lo": int(f.lo), "hi": int(f.hi)})
            else:
                d = {"name": name, "type": "categorical", "n_categories": f.n_categories}
                if f.labels is not None:
                    d["categories"] = list(f.labels)
                feats.append(d)
        return {"features": feats}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpace":
        if set(d) != {"features"}:
            raise ValueError(f"feature space document must have exactly the key 'features', got {sorted(d)}")
        feats = []
        for i, fd in enumerate(d["features"]):
            kind = fd.get("type")
            name = fd.get("name", f"x{i}")
            allowed = {"continuous": {"name", "type", "lo", "hi"},
                       "integer": {"name", "type", "lo", "hi"},
                       "categorical": {"name", "type", "n_categories", "categories"}}
            if kind not in allowed:
                raise ValueError(f"feature {name!r}: unknown type {kind!r}")
            unknown = set(fd) - allowed[kind]
            if unknown:
                raise ValueError(f"feature {name!r}: unknown keys {sorted(unknown)}")
            if kind == "continuous":
                feats.append(Continuous(float(fd["lo"]), float(fd["hi"]), name))
            elif kind == "integer":
                feats.append(Integer(int(fd["lo"]), int(fd["hi"]), name))
            else:
                labels = fd.get("categories")
                n = fd.get("n_categories", len(labels) if labels else None)
                if n is None:
                    raise ValueError(f"feature {name!r}: categorical needs n_categories or categories")
                feats.append(Categorical(int(n), name, tuple(str(s) for s in labels) if labels else None))
        return cls(tuple(feats))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "FeatureSpace":
        return cls.from_dict(json.loads(text))


def box_contains(box: Box, x) -> bool:
    if len(x) != len(box.bounds):
        raise DomainError(f"point has {len(x)} coordinates, box has {len(box.bounds)}")
    for value, b in zip(x, box.bounds):
        if isinstance(b, tuple):
            if not b[0] <= value <= b[1]:
                return False
        else:
            c = int(value)
            if c < 0 or not (b >> c) & 1:
                return False
    return True


def box_contains_array(box: Box, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    if X.shape[1] != len(box.bounds):
        raise DomainError(f"points have {X.shape[1]} coordinates, box has {len(box.bounds)}")
    ok = np.ones(len(X), dtype=bool)
    for f, b in enumerate(box.bounds):
        col = X[:, f]
        if isinstance(b, tuple):
            ok &= (col >= b[0]) & (col <= b[1])
        else:
            idx = col.astype(np.int64)
            inrange = (idx >= 0) & (idx < MAX_CATEGORIES)
            bits = np.zeros(len(X), dtype=bool)
            bits[inrange] = (np.uint64(b) >> idx[inrange].astype(np.uint64)) & np.uint64(1) == 1
            ok &= bits
    return ok


def sample_uniform(space: FeatureSpace, n: int, rng: np.random.Generator) -> list[Point]:
    """Draw ``n`` points uniformly from ``space``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return space.to_points(sample_uniform_array(space, n, rng))


def sample_uniform_array(space: FeatureSpace, n: int, rng: np.random.Generator,
                         box: Box | None = None) -> np.ndarray:
    box = box or space.full_box()
    X = np.empty((n, space.D))
    for j, (f, b) in enumerate(zip(space.features, box.bounds)):
        if isinstance(f, Continuous):
            X[:, j] = rng.uniform(b[0], b[1], size=n)
        elif isinstance(f, Integer):
            X[:, j] = rng.integers(b[0], b[1] + 1, size=n)
        else:
            X[:, j] = rng.choice(mask_members(b), size=n)
    return X


@dataclass(frozen=True)
class Dataset:
    """Observations with standardized outputs.

    ``y = (y_raw - y_mean) / y_std`` with the population standard deviation.
    A constant output vector gets ``y_std = 1`` and ``y = 0``.
    """

    X: np.ndarray
    y_raw: np.ndarray
    y_mean: float
    y_std: float
    y: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.y_raw)

    def to_raw(self, y_standardized):
        return np.asarray(y_standardized) * self.y_std + self.y_mean


def standardize(X, y_raw: Sequence[float], space: FeatureSpace | None = None) -> Dataset:
    y_raw = np.asarray(y_raw, dtype=np.float64).ravel()
    if len(y_raw) < 1:
        raise ValueError("standardize needs at least one observation")
    if not np.all(np.isfinite(y_raw)):
        raise ValueError("outputs must be finite")
    X = space.to_array(X) if space is not None else np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) != len(y_raw):
        raise ValueError(f"{len(X)} points but {len(y_raw)} outputs")
    mean = float(np.mean(y_raw))
    std = float(np.std(y_raw))
    if not std > 0.0 or std < 1e-300:
        return Dataset(X, y_raw, mean, 1.0, np.zeros_like(y_raw))
    return Dataset(X, y_raw, mean, std, (y_raw - mean) / std)


def empty_dataset(space: FeatureSpace) -> Dataset:
    """Zero-observation dataset; the likelihood is then constant."""
    return Dataset(np.zeros((0, space.D)), np.zeros(0), 0.0, 1.0, np.zeros(0))
