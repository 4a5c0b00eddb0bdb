"""Enumeration of the auxiliary-operator index space and neighbour tables.

Every auxiliary density operator (ADO) is labelled by a vector of
non-negative integers, one entry per exponential term across all baths.
Position 0 of the enumeration is always the all-zeros vector, which labels
the physical reduced density matrix.  Raising and lowering neighbours
(vector +- unit vector in one field) are precomputed as flat offsets so the
propagation loop never hashes.

Truncation closure: a raising neighbour outside the retained set contributes
zero to the equations of motion (its ADO is treated as identically zero);
residual fast bath dynamics beyond the retained exponentials is carried by
each bath's Markovian delta term instead.  The rule is uniform over the
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TruncationPolicy",
    "HierarchyIndexSet",
    "HierarchyError",
    "enumerate_indices",
]

# neighbour-table sentinel for "outside the truncated set"
OUTSIDE = -1


class HierarchyError(ValueError):
    """Raised for invalid truncation policies or oversized index sets."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Retention predicate for index vectors.

    ``mode="total_depth"`` keeps vectors with sum(n) <= depth.
    ``mode="per_bath"`` caps the level sum within each bath's field group
    (``caps``, one entry per bath) with an optional cap on the total level.
    """

    mode: str = "total_depth"
    depth: int = 2
    caps: tuple[int, ...] | None = None
    global_cap: int | None = None

    def __post_init__(self):
        if self.mode not in ("total_depth", "per_bath"):
            raise HierarchyError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "total_depth":
            if self.depth < 0:
                raise HierarchyError(f"depth must be >= 0, got {self.depth}")
        else:
            if self.caps is None:
                raise HierarchyError("per_bath truncation requires caps")
            if any(c < 0 for c in self.caps):
                raise HierarchyError(f"per-bath caps must be >= 0, got {self.caps}")
            if self.global_cap is not None and self.global_cap < 0:
                raise HierarchyError(f"global cap must be >= 0, got {self.global_cap}")

    def describe(self) -> str:
        if self.mode == "total_depth":
            return f"total_depth({self.depth})"
        cap = f", global<={self.global_cap}" if self.global_cap is not None else ""
        return f"per_bath(caps={list(self.caps)}{cap})"


@dataclass(frozen=True)
class HierarchyIndexSet:
    """Enumerated index vectors with O(1) raising/lowering lookups.

    Attributes
    ----------
    n_fields : int
        Total number of exponential terms across all baths.
    indices : ndarray, shape (size, n_fields), int64
        Index vectors in graded lexicographic order (level first, then
        lexicographic), so position 0 is the zero vector.
    up : ndarray, shape (size, n_fields), int64
        Position of vector + e_f, or OUTSIDE.
    down : ndarray, shape (size, n_fields), int64
        Position of vector - e_f, or OUTSIDE (always OUTSIDE when n_f = 0).
    """

    n_fields: int
    indices: np.ndarray
    up: np.ndarray
    down: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def position(self, vector) -> int:
        """Position of an index vector, or raise KeyError."""
        key = tuple(int(v) for v in vector)
        try:
            return self._lookup[key]
        except AttributeError:
            lookup = {tuple(row): i for i, row in enumerate(self.indices.tolist())}
            object.__setattr__(self, "_lookup", lookup)
            return self._lookup[key]

    def levels(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def memory_estimate_bytes(self, dim: int) -> int:
        """Bytes for one complex ADO stack of this size at system dimension dim."""
        return int(self.size) * dim * dim * 16


def _enumerate_total_depth(n_fields: int, depth: int) -> list[tuple[int, ...]]:
    # graded lexicographic: levels ascending, lexicographic within a level
    out = []

    def rec(prefix, remaining, fields_left):
        if fields_left == 1:
            out.append(tuple(prefix) + (remaining,))
            return
        for v in range(remaining + 1):
            prefix.append(v)
            rec(prefix, remaining - v, fields_left - 1)
            prefix.pop()

    for level in range(depth + 1):
        rec([], level, n_fields)
    return out


def _enumerate_per_bath(
    n_fields: int,
    bath_of_field: np.ndarray,
    caps: tuple[int, ...],
    global_cap: int | None,
) -> list[tuple[int, ...]]:
    limit = sum(caps) if global_cap is None else min(sum(caps), global_cap)
    out = []

    def rec(prefix, level_left, bath_budget):
        pos = len(prefix)
        if pos == n_fields:
            if level_left == 0:
                out.append(tuple(prefix))
            return
        bath = bath_of_field[pos]
        # remaining fields bound how much of level_left can still be placed
        for v in range(min(level_left, bath_budget[bath]) + 1):
            prefix.append(v)
            bath_budget[bath] -= v
            rec(prefix, level_left - v, bath_budget)
            bath_budget[bath] += v
            prefix.pop()

    for level in range(limit + 1):
        rec([], level, list(caps))
    return out


def enumerate_indices(
    n_fields: int,
    policy: TruncationPolicy,
    bath_of_field=None,
    max_size: int = 5_000_000,
) -> HierarchyIndexSet:
    """Enumerate all retained index vectors and build neighbour tables.

    ``bath_of_field`` maps each field position to its bath (required for
    per-bath truncation).  Enumeration order is graded lexicographic and is
    deterministic for identical inputs.

    Raises
    ------
    HierarchyError
        If the retained set would exceed ``max_size`` vectors.
    """
    if n_fields < 1:
        raise HierarchyError(f"n_fields must be >= 1, got {n_fields}")

    if policy.mode == "total_depth":
        import math

        projected = math.comb(n_fields + policy.depth, policy.depth)
        if projected > max_size:
            raise HierarchyError(
                f"hierarchy would hold {projected} ADOs (> budget {max_size}); "
                "reduce the depth or raise max_size"
            )
        vectors = _enumerate_total_depth(n_fields, policy.depth)
    else:
        if bath_of_field is None:
            raise HierarchyError("per_bath truncation needs bath_of_field")
        bath_of_field = np.asarray(bath_of_field, dtype=np.int64)
        if bath_of_field.shape != (n_fields,):
            raise HierarchyError(
                f"bath_of_field has shape {bath_of_field.shape}, expected ({n_fields},)"
            )
        n_baths = int(bath_of_field.max()) + 1
        if len(policy.caps) != n_baths:
            raise HierarchyError(
                f"{len(policy.caps)} caps given for {n_baths} baths"
            )
        vectors = _enumerate_per_bath(n_fields, bath_of_field, policy.caps, policy.global_cap)
        if len(vectors) > max_size:
            raise HierarchyError(
                f"hierarchy holds {len(vectors)} ADOs (> budget {max_size})"
            )

    indices = np.array(vectors, dtype=np.int64).reshape(len(vectors), n_fields)
    lookup = {v: i for i, v in enumerate(vectors)}
    size = len(vectors)
    up = np.full((size, n_fields), OUTSIDE, dtype=np.int64)
    down = np.full((size, n_fields), OUTSIDE, dtype=np.int64)
    for i, vec in enumerate(vectors):
        lst = list(vec)
        for f in range(n_fields):
            lst[f] += 1
            up[i, f] = lookup.get(tuple(lst), OUTSIDE)
            lst[f] -= 2
            if lst[f] >= 0:
                down[i, f] = lookup.get(tuple(lst), OUTSIDE)
            lst[f] += 1
    return HierarchyIndexSet(n_fields=n_fields, indices=indices, up=up, down=down)
