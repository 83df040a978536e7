"""Hierarchical latent factor space: structure, tying, and state vectors.

A window of a_L sub-windows carries one latent vector per level per tying
group: level l ties a_l consecutive sub-windows, so it holds a_L / a_l
vectors of dimension d_l. The full latent state of a window is stored as one
flat float64 vector in level-major order (all level-1 vectors, then level-2,
...), so a Langevin update is a single vector operation. Sub-window j is
generated from the state vector obtained by concatenating, level by level,
the latent vector with index floor(j / a_l).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

_RECORD_MAGIC = b"LADZ"


@dataclass(frozen=True)
class HierarchySpec:
    """Hierarchy structure: tying factors, per-level dims, sub-window length."""

    a: tuple[int, ...]
    d: tuple[int, ...]
    sub_window_len: int

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(int(v) for v in self.a))
        object.__setattr__(self, "d", tuple(int(v) for v in self.d))
        if len(self.a) != len(self.d) or len(self.a) < 1:
            raise ValidationError(f"a and d must be equal-length and non-empty, got a={self.a} d={self.d}")
        if self.a[0] < 1:
            raise ValidationError(f"a[0] must be >= 1, got {self.a[0]}")
        if any(hi < lo for lo, hi in zip(self.a, self.a[1:])):
            raise ValidationError(f"a must be non-decreasing, got {self.a}")
        top = self.a[-1]
        for l, a_l in enumerate(self.a):
            if top % a_l != 0:
                raise ValidationError(f"a[{l}]={a_l} does not divide a[-1]={top}")
        if any(d_l < 1 for d_l in self.d):
            raise ValidationError(f"latent dims must be >= 1, got {self.d}")
        if self.sub_window_len < 1:
            raise ValidationError(f"sub_window_len must be >= 1, got {self.sub_window_len}")

    @property
    def n_levels(self) -> int:
        return len(self.a)

    @property
    def n_sub_windows(self) -> int:
        return self.a[-1]

    @property
    def window_len(self) -> int:
        return self.a[-1] * self.sub_window_len


@dataclass(frozen=True)
class LatentLayout:
    """Memory layout of a window's flat latent vector."""

    counts: tuple[int, ...]   # latent vectors on each level: a_L / a_l
    dims: tuple[int, ...]
    offsets: tuple[int, ...]  # start of each level block in the flat vector
    total_dim: int            # sum over levels of counts[l] * dims[l]
    state_dim: int            # sum of dims: length of one sub-window state vector


def latent_layout(spec: HierarchySpec) -> LatentLayout:
    counts = tuple(spec.a[-1] // a_l for a_l in spec.a)
    offsets = []
    off = 0
    for cnt, dim in zip(counts, spec.d):
        offsets.append(off)
        off += cnt * dim
    return LatentLayout(counts, spec.d, tuple(offsets), off, sum(spec.d))


def _check_latent(z, layout: LatentLayout) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (layout.total_dim,):
        raise ShapeError(f"latent state has shape {tuple(z.shape)}, expected ({layout.total_dim},)")
    return z


def level_view(z, spec: HierarchySpec, level: int) -> np.ndarray:
    """Level `level` (0-based) of a flat latent state as a (count, dim) view."""
    layout = latent_layout(spec)
    z = _check_latent(z, layout)
    cnt, dim, off = layout.counts[level], layout.dims[level], layout.offsets[level]
    return z[off : off + cnt * dim].reshape(cnt, dim)


def state_vector(z, j: int, spec: HierarchySpec) -> np.ndarray:
    """State vector of sub-window j: per-level latents at index floor(j / a_l)."""
    if not 0 <= j < spec.n_sub_windows:
        raise IndexError(f"sub-window index {j} out of range [0, {spec.n_sub_windows})")
    parts = [level_view(z, spec, l)[j // spec.a[l]] for l in range(spec.n_levels)]
    return np.concatenate(parts)


def state_matrix(z, spec: HierarchySpec) -> np.ndarray:
    """State vectors of all sub-windows stacked into an (a_L, state_dim) matrix."""
    blocks = []
    for l, a_l in enumerate(spec.a):
        blocks.append(np.repeat(level_view(z, spec, l), a_l, axis=0))
    return np.concatenate(blocks, axis=1)


def scatter_states(grad_states, spec: HierarchySpec) -> np.ndarray:
    """Adjoint of state_matrix: per-sub-window state gradients folded back
    onto the flat latent vector, summing over tied sub-windows."""
    layout = latent_layout(spec)
    grad_states = np.asarray(grad_states, dtype=np.float64)
    if grad_states.shape != (spec.n_sub_windows, layout.state_dim):
        raise ShapeError(f"grad_states has shape {tuple(grad_states.shape)}, expected "
                         f"({spec.n_sub_windows}, {layout.state_dim})")
    out = np.empty(layout.total_dim)
    col = 0
    for l, (a_l, dim) in enumerate(zip(spec.a, spec.d)):
        block = grad_states[:, col : col + dim].reshape(layout.counts[l], a_l, dim)
        off = layout.offsets[l]
        out[off : off + layout.counts[l] * dim] = block.sum(axis=1).ravel()
        col += dim
    return out


def init_latents(spec: HierarchySpec, n_windows: int, rng) -> list[np.ndarray]:
    """Draw one latent state per window from the standard normal prior."""
    if n_windows < 0:
        raise ValidationError(f"n_windows must be >= 0, got {n_windows}")
    rng = np.random.default_rng(rng)
    total = latent_layout(spec).total_dim
    return [rng.standard_normal(total) for _ in range(n_windows)]


def latent_to_bytes(z, spec: HierarchySpec) -> bytes:
    """Flat binary record: magic, level (count, dim) table, float64 payload."""
    layout = latent_layout(spec)
    z = _check_latent(z, layout)
    head = [_RECORD_MAGIC, struct.pack("<I", spec.n_levels)]
    for cnt, dim in zip(layout.counts, layout.dims):
        head.append(struct.pack("<II", cnt, dim))
    return b"".join(head) + z.astype("<f8").tobytes()


def latent_from_bytes(buf: bytes) -> tuple[np.ndarray, tuple[int, ...], tuple[int, ...]]:
    """Inverse of latent_to_bytes: (flat state, per-level counts, per-level dims)."""
    if buf[:4] != _RECORD_MAGIC:
        raise ValidationError("not a latent state record (bad magic)")
    (n_levels,) = struct.unpack_from("<I", buf, 4)
    counts, dims = [], []
    pos = 8
    for _ in range(n_levels):
        cnt, dim = struct.unpack_from("<II", buf, pos)
        counts.append(cnt)
        dims.append(dim)
        pos += 8
    total = sum(c * d for c, d in zip(counts, dims))
    z = np.frombuffer(buf, dtype="<f8", count=total, offset=pos).astype(np.float64)
    return z, tuple(counts), tuple(dims)
