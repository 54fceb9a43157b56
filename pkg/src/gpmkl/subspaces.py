"""Partitions of voxel volumes into feature bags and relevance scoring.

A volume of shape ``(nx, ny, nz)`` is flattened x-fastest (row-major in x,
then y, then z), so voxel ``(x, y, z)`` maps to index ``x + nx*(y + ny*z)``.
Every layout produced here is a partition of ``{0, .., D-1}``: bags are
disjoint, non-empty and jointly exhaustive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VolumeDims",
    "SubspaceLayout",
    "RelevanceReport",
    "single_layout",
    "slice_layout",
    "cube_layout",
    "extract_subvector",
    "relevance_scores",
]


@dataclass(frozen=True)
class VolumeDims:
    """Voxel counts per axis of a 3D volume."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self) -> None:
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def d(self) -> int:
        return self.nx * self.ny * self.nz


@dataclass(frozen=True)
class SubspaceLayout:
    """An ordered partition of feature indices into bags.

    ``kind_tag`` records how the layout was built: ``"single"``,
    ``"slices"`` or ``"cube:<edge>"``.
    """

    bags: tuple[np.ndarray, ...]
    kind_tag: str
    n_features: int = field(default=0)

    def __post_init__(self) -> None:
        if not self.bags:
            raise ValueError("layout needs at least one bag")
        seen = np.zeros(self.n_features, dtype=bool)
        for i, bag in enumerate(self.bags):
            if bag.size == 0:
                raise ValueError(f"bag {i} is empty")
            if bag.min() < 0 or bag.max() >= self.n_features:
                raise ValueError(f"bag {i} has out-of-range indices")
            if seen[bag].any():
                raise ValueError(f"bag {i} overlaps an earlier bag")
            seen[bag] = True
        if not seen.all():
            raise ValueError("bags do not cover all feature indices")

    @property
    def n_bags(self) -> int:
        return len(self.bags)


def single_layout(n_features: int) -> SubspaceLayout:
    """One bag holding every feature (plain single-kernel mode)."""
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    return SubspaceLayout(
        bags=(np.arange(n_features),), kind_tag="single", n_features=n_features
    )


def slice_layout(dims: VolumeDims) -> SubspaceLayout:
    """One bag per axial (z) slice; bag z holds the nx*ny voxels of slice z."""
    per = dims.nx * dims.ny
    bags = tuple(np.arange(z * per, (z + 1) * per) for z in range(dims.nz))
    return SubspaceLayout(bags=bags, kind_tag="slices", n_features=dims.d)


def cube_layout(dims: VolumeDims, edge: int) -> SubspaceLayout:
    """Non-overlapping cubes of the given edge; boundary cubes are truncated.

    Cubes are ordered x-fastest over the cube grid, matching the voxel
    flattening convention, and indices within each bag are ascending.
    """
    if not isinstance(edge, (int, np.integer)) or edge < 1:
        raise ValueError(f"edge must be a positive integer, got {edge!r}")
    ncx = -(-dims.nx // edge)
    ncy = -(-dims.ny // edge)
    ncz = -(-dims.nz // edge)
    x = np.arange(dims.nx)
    y = np.arange(dims.ny)
    z = np.arange(dims.nz)
    # cube id per voxel, laid out on the flattened x-fastest grid
    cube_of_x = x // edge
    cube_of_y = y // edge
    cube_of_z = z // edge
    cube_id = (
        cube_of_x[:, None, None]
        + ncx * (cube_of_y[None, :, None] + ncy * cube_of_z[None, None, :])
    )
    flat_ids = np.transpose(cube_id, (2, 1, 0)).ravel()  # index = x + nx*(y+ny*z)
    order = np.argsort(flat_ids, kind="stable")
    counts = np.bincount(flat_ids, minlength=ncx * ncy * ncz)
    splits = np.cumsum(counts)[:-1]
    bags = tuple(np.ascontiguousarray(b) for b in np.split(order, splits))
    return SubspaceLayout(bags=bags, kind_tag=f"cube:{edge}", n_features=dims.d)


def extract_subvector(x: np.ndarray, layout: SubspaceLayout, s: int) -> np.ndarray:
    """Values of ``x`` on bag ``s``, in the bag's stored (ascending) order."""
    x = np.asarray(x)
    if x.shape[-1] != layout.n_features:
        raise ValueError(
            f"feature length {x.shape[-1]} does not match layout ({layout.n_features})"
        )
    if not 0 <= s < layout.n_bags:
        raise IndexError(f"bag index {s} out of range for {layout.n_bags} bags")
    return x[..., layout.bags[s]]


@dataclass(frozen=True)
class RelevanceReport:
    """Accumulated per-bag relevance over cross-validation folds.

    Each fold's weight vector is normalized by its own maximum, so every
    normalized weight lies in [0, 1] and the accumulated scores lie in
    [0, n_folds].  ``ranking`` orders bags by descending score with ties
    broken by ascending bag index.
    """

    scores: np.ndarray
    ranking: np.ndarray
    n_folds: int


def relevance_scores(per_fold_weights: np.ndarray) -> RelevanceReport:
    """Accumulate max-normalized mixing weights across folds."""
    w = np.asarray(per_fold_weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("per_fold_weights must be a (n_folds, n_bags) matrix")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    maxima = w.max(axis=1)
    if (maxima == 0).any():
        bad = int(np.nonzero(maxima == 0)[0][0])
        raise ValueError(f"fold {bad} has an all-zero weight vector")
    scores = (w / maxima[:, None]).sum(axis=0)
    ranking = np.lexsort((np.arange(scores.size), -scores))
    return RelevanceReport(scores=scores, ranking=ranking, n_folds=w.shape[0])
