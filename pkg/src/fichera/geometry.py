"""Domains, membership tests, symmetry orbits and the corner partition cells.

The two unbounded regions studied here have half-width 1:

* corner  ``{x : |min_j x_j| < 1}``  (n half-slabs meeting at a corner)
* cross   ``{x : min_j |x_j| < 1}``  (union of the n slabs ``|x_j| < 1``)

A third kind, ``box``, is an axis-aligned bounded fixture with a separable
spectrum; it exists to test the discretization and the eigensolver.

Boundary points (equality in a defining inequality) are outside: this matches
the Dirichlet condition, where nodes on the boundary carry the value 0.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Kind(str, Enum):
    CORNER = "corner"
    CROSS = "cross"
    BOX = "box"


class Variant(str, Enum):
    PI = "pi"
    PI_TILDE = "pi_tilde"


@dataclass(frozen=True)
class DomainSpec:
    """Immutable description of a (possibly truncated) domain.

    ``R`` is the sup-norm truncation radius. It is not part of membership;
    see :func:`in_truncated`. For boxes ``R`` defaults to infinity.
    """

    kind: Kind
    n: int
    R: float = math.inf
    extents: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is Kind.BOX:
            if self.extents is None:
                raise ValueError("box domains need explicit extents")
            ext = tuple((float(lo), float(hi)) for lo, hi in self.extents)
            if len(ext) != self.n:
                raise ValueError(f"box has {len(ext)} extents but n={self.n}")
            for lo, hi in ext:
                if not lo < hi:
                    raise ValueError(f"empty box interval ({lo}, {hi})")
            object.__setattr__(self, "extents", ext)
        else:
            if self.extents is not None:
                raise ValueError("extents are only meaningful for box domains")
            if not 2 <= self.n <= 4:
                raise ValueError(f"{kind.value} domains support 2 <= n <= 4, got n={self.n}")
            if not self.R >= 4:
                raise ValueError(f"truncation radius must be >= 4 for {kind.value}, got R={self.R}")
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if not self.R > 0:
            raise ValueError("truncation radius must be positive")

    @classmethod
    def corner(cls, n: int, R: float = 8.0) -> DomainSpec:
        return cls(Kind.CORNER, n, float(R))

    @classmethod
    def cross(cls, n: int, R: float = 8.0) -> DomainSpec:
        return cls(Kind.CROSS, n, float(R))

    @classmethod
    def box(cls, extents, R: float = math.inf) -> DomainSpec:
        extents = tuple(tuple(e) for e in extents)
        return cls(Kind.BOX, len(extents), float(R), extents)

    def with_R(self, R: float) -> DomainSpec:
        return DomainSpec(self.kind, self.n, float(R), self.extents)

    def lower(self) -> DomainSpec:
        """The same kind of domain one dimension down (its continuum threshold).

        For n = 2 this is the interval (-1, 1), returned as a box.
        """
        if self.kind is Kind.BOX:
            raise ValueError("box domains have no lower-dimensional threshold domain")
        if self.n == 2:
            return DomainSpec.box([(-1.0, 1.0)])
        return DomainSpec(self.kind, self.n - 1, self.R)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "n": self.n, "R": None if math.isinf(self.R) else self.R}
        if self.kind is Kind.BOX:
            d["extents"] = [list(e) for e in self.extents]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DomainSpec:
        kind = Kind(d["kind"])
        R = d.get("R")
        R = math.inf if R is None else float(R)
        if kind is Kind.BOX:
            ext = d["extents"]
            return cls(kind, int(d.get("n", len(ext))), R, tuple(tuple(e) for e in ext))
        return cls(kind, int(d["n"]), R)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> DomainSpec:
        return cls.from_dict(json.loads(text))


def _as_points(d: DomainSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d.n,):
        raise ValueError(f"point dimension {x.shape[-1:]} does not match domain dimension {d.n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


def contains(d: DomainSpec, x):
    """Membership in the untruncated domain.

    Accepts a single point of shape ``(n,)`` or a batch ``(..., n)`` and
    returns a bool or a bool array accordingly.
    """
    x = _as_points(d, x)
    if d.kind is Kind.CORNER:
        inside = np.abs(x.min(axis=-1)) < 1.0
    elif d.kind is Kind.CROSS:
        inside = np.abs(x).min(axis=-1) < 1.0
    else:
        lo = np.array([e[0] for e in d.extents])
        hi = np.array([e[1] for e in d.extents])
        inside = np.all((x > lo) & (x < hi), axis=-1)
    return inside.item() if inside.ndim == 0 else inside


def in_truncated(d: DomainSpec, x):
    """Membership in the domain intersected with the open box ``||x||_inf < R``."""
    x = _as_points(d, x)
    inside = np.logical_and(contains(d, x), np.abs(x).max(axis=-1) < d.R)
    return inside.item() if np.ndim(inside) == 0 else inside


def symmetry_group(d: DomainSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Group elements as ``(perm, signs)`` acting by ``(g x)_j = signs[j] * x[perm[j]]``.

    Corner: the permutations of the coordinates. Cross: permutations combined
    with all sign flips. Box: only the identity (fixtures carry no assumed
    symmetry).
    """
    if d.kind is Kind.BOX:
        return [(tuple(range(d.n)), (1,) * d.n)]
    perms = list(itertools.permutations(range(d.n)))
    if d.kind is Kind.CORNER:
        return [(p, (1,) * d.n) for p in perms]
    signs = list(itertools.product((1, -1), repeat=d.n))
    return [(p, s) for p in perms for s in signs]


def apply_group_element(g, x: np.ndarray) -> np.ndarray:
    perm, signs = g
    x = np.asarray(x)
    return x[..., list(perm)] * np.asarray(signs, dtype=x.dtype)


def symmetry_orbit(d: DomainSpec, x) -> list[tuple[float, ...]]:
    """Distinct images of ``x`` under the symmetry group of ``d``, in a fixed order."""
    x = _as_points(d, x)
    if x.ndim != 1:
        raise ValueError("symmetry_orbit takes a single point")
    if not contains(d, x):
        raise ValueError(f"point {tuple(x)} is not inside the {d.kind.value} domain")
    seen = {}
    for g in symmetry_group(d):
        y = tuple(float(v) for v in apply_group_element(g, x))
        # -0.0 and 0.0 are the same point
        y = tuple(v + 0.0 for v in y)
        seen.setdefault(y, None)
    return list(seen)


@dataclass(frozen=True)
class PartitionCell:
    """One of the corner partition cells, ``k`` a 0-based coordinate index.

    ``PI``:       ``{x in corner : max_{j != k} x_j < x_k}``
    ``PI_TILDE``: ``{x in corner : min_{j != k} x_j > x_k}``
    """

    k: int
    variant: Variant = Variant.PI

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.k < 0:
            raise ValueError("cell index must be non-negative")


def cell_membership(x, cell: PartitionCell):
    """Strict membership in a partition cell; ties on an interface give False."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if not 0 <= cell.k < n:
        raise ValueError(f"cell index {cell.k} out of range for dimension {n}")
    others = np.delete(x, cell.k, axis=-1)
    xk = x[..., cell.k]
    if cell.variant is Variant.PI:
        inside = others.max(axis=-1) < xk
    else:
        inside = others.min(axis=-1) > xk
    inside = np.logical_and(inside, np.abs(x.min(axis=-1)) < 1.0)
    return inside.item() if np.ndim(inside) == 0 else inside


def on_interface(x, j: int, k: int, atol: float = 0.0):
    """Predicate for the interface between cells j and k: ``x_j = x_k`` with both maximal."""
    x = np.asarray(x, dtype=float)
    xj, xk = x[..., j], x[..., k]
    rest = np.delete(x, [j, k], axis=-1)
    top = np.maximum(xj, xk)
    ok = np.abs(xj - xk) <= atol
    if rest.shape[-1]:
        ok = ok & (rest.max(axis=-1) <= top)
    ok = ok & (np.abs(x.min(axis=-1)) < 1.0)
    return ok.item() if np.ndim(ok) == 0 else ok
