"""Configuration-space geometry of the Newtonian N-body problem.

Positions are stored as ``(N, d)`` arrays. Velocities share that shape, and so
do covectors (gradients); the dual mass norm of a covector ``p`` is
``sum_i |p_i|^2 / m_i``.

Besides the ``Configuration``-level operations there are array-level helpers
(``*_array``) that broadcast over leading axes; the path solvers use those on
whole stacks of configurations at once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.linalg

COLLISION_RTOL = 1e-12
ORTHOGONALITY_TOL = 1e-12


class CollisionError(Exception):
    """Raised when a quantity is requested at a configuration with a collision."""


@dataclass(frozen=True)
class Masses:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(-1)
        if m.size < 2:
            raise ValueError("need at least two bodies")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError(f"masses must be positive and finite, got {m.tolist()}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def total(self) -> float:
        return float(self.m.sum())

    @property
    def n(self) -> int:
        return self.m.size

    def __eq__(self, other):
        return isinstance(other, Masses) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())


@dataclass(frozen=True)
class Configuration:
    """N points of R^d together with their masses."""

    r: np.ndarray
    masses: Masses

    def __post_init__(self):
        masses = self.masses if isinstance(self.masses, Masses) else Masses(self.masses)
        r = np.array(self.r, dtype=float)
        if r.ndim != 2:
            raise ValueError(f"positions must be an (N, d) array, got shape {r.shape}")
        if r.shape[0] != masses.n:
            raise ValueError(f"{r.shape[0]} positions for {masses.n} masses")
        if r.shape[1] < 2:
            raise ValueError("spatial dimension must be at least 2")
        if not np.all(np.isfinite(r)):
            raise ValueError("positions must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "masses", masses)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def d(self) -> int:
        return self.r.shape[1]

    @property
    def m(self) -> np.ndarray:
        return self.masses.m

    def with_positions(self, r) -> "Configuration":
        return Configuration(r, self.masses)

    def is_collision_free(self) -> bool:
        return min_pair_distance(self.r) > COLLISION_RTOL * _length_scale(self.r)

    def to_dict(self) -> dict:
        return {"d": self.d, "masses": self.m.tolist(), "positions": self.r.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Configuration":
        try:
            d = int(doc["d"])
            masses = doc["masses"]
            positions = np.asarray(doc["positions"], dtype=float)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed configuration document: {exc}") from exc
        if positions.ndim != 2 or positions.shape[1] != d:
            raise ValueError(f"positions do not match declared dimension d={d}")
        return cls(positions, Masses(masses))


def load_configuration(path) -> Configuration:
    return Configuration.from_dict(json.loads(Path(path).read_text()))


def save_configuration(x: Configuration, path, **extra) -> None:
    doc = x.to_dict()
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))


def _length_scale(r: np.ndarray) -> float:
    return float(np.max(np.abs(r), initial=0.0))


def _check_shapes(a: np.ndarray, b: np.ndarray, m: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[-2] != m.size:
        raise ValueError(f"{a.shape[-2]} bodies for {m.size} masses")


def _masses_of(x, masses) -> np.ndarray:
    if masses is not None:
        return masses.m if isinstance(masses, Masses) else np.asarray(masses, dtype=float)
    if isinstance(x, Configuration):
        return x.m
    raise ValueError("masses are required when passing raw arrays")


def _positions(x) -> np.ndarray:
    return x.r if isinstance(x, Configuration) else np.asarray(x, dtype=float)


# --- mass metric -----------------------------------------------------------


def mass_inner(x, y, masses=None) -> float:
    """Mass inner product ``sum_i m_i <x_i, y_i>``."""
    m = _masses_of(x if isinstance(x, Configuration) else y, masses)
    a, b = _positions(x), _positions(y)
    _check_shapes(a, b, m)
    return float(np.einsum("i,ij,ij->", m, a, b))


def mass_norm(v, masses=None) -> float:
    return math.sqrt(max(mass_inner(v, v, masses), 0.0))


def dual_norm(p, masses) -> float:
    """Dual mass norm of a covector, ``sqrt(sum_i |p_i|^2 / m_i)``."""
    m = _masses_of(None, masses)
    p = np.asarray(p, dtype=float)
    return math.sqrt(float(np.einsum("i,ij,ij->", 1.0 / m, p, p)))


def moment_of_inertia(x: Configuration) -> float:
    return mass_inner(x, x)


def center_of_mass(x: Configuration) -> np.ndarray:
    return center_of_mass_array(x.r, x.m)


def center_of_mass_array(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.einsum("i,...ij->...j", m, r) / m.sum()


def mean_center(x: Configuration) -> tuple[Configuration, np.ndarray]:
    """Return ``x`` translated to zero center of mass, and the removed offset."""
    g = center_of_mass(x)
    return x.with_positions(x.r - g), g


# --- potential -------------------------------------------------------------


def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array(list(combinations(range(n), 2)), dtype=int)
    return idx[:, 0], idx[:, 1]


def min_pair_distance(r: np.ndarray) -> np.ndarray:
    """Smallest mutual distance; broadcasts over leading axes."""
    i, j = _pairs(r.shape[-2])
    return np.linalg.norm(r[..., i, :] - r[..., j, :], axis=-1).min(axis=-1)


def _pair_data(r: np.ndarray, m: np.ndarray):
    i, j = _pairs(r.shape[-2])
    diff = r[..., i, :] - r[..., j, :]
    dist = np.linalg.norm(diff, axis=-1)
    scale = np.max(np.abs(r), axis=(-2, -1))
    if np.any(dist <= COLLISION_RTOL * np.expand_dims(scale, -1)):
        raise CollisionError("collision: potential is infinite")
    return i, j, diff, dist, m[i] * m[j]


def potential_array(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``U = sum_{i<j} m_i m_j / r_ij`` for an ``(..., N, d)`` stack."""
    _, _, _, dist, mm = _pair_data(r, m)
    return (mm / dist).sum(axis=-1)


def potential_gradient_array(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    i, j, diff, dist, mm = _pair_data(r, m)
    f = (mm / dist**3)[..., None] * diff  # d/dr_i of m_i m_j / r_ij is -f
    g = np.zeros_like(r)
    for p, (a, b) in enumerate(zip(i, j)):
        g[..., a, :] -= f[..., p, :]
        g[..., b, :] += f[..., p, :]
    return g


def potential_hessian_array(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Hessian of U as an ``(..., N*d, N*d)`` stack."""
    n, d = r.shape[-2:]
    i, j, diff, dist, mm = _pair_data(r, m)
    eye = np.eye(d)
    u = diff / dist[..., None]
    # block of m_i m_j / |r_i - r_j| with respect to r_i twice
    blocks = (mm / dist**3)[..., None, None] * (
        3.0 * u[..., :, None] * u[..., None, :] - eye
    )
    h = np.zeros(r.shape[:-2] + (n * d, n * d))
    for p, (a, b) in enumerate(zip(i, j)):
        sa, sb = slice(a * d, (a + 1) * d), slice(b * d, (b + 1) * d)
        h[..., sa, sa] += blocks[..., p, :, :]
        h[..., sb, sb] += blocks[..., p, :, :]
        h[..., sa, sb] -= blocks[..., p, :, :]
        h[..., sb, sa] -= blocks[..., p, :, :]
    return h


def potential(x: Configuration) -> float:
    return float(potential_array(x.r, x.m))


def potential_gradient(x: Configuration) -> np.ndarray:
    """Euclidean gradient of U, a covector shaped like the positions."""
    return potential_gradient_array(x.r, x.m)


# --- rotations and angular momentum ---------------------------------------


def angular_momentum(x: Configuration, v) -> np.ndarray:
    """Skew ``d x d`` matrix ``C[k, l] = sum_j m_j (r_j^k v_j^l - r_j^l v_j^k)``."""
    v = np.asarray(v, dtype=float)
    _check_shapes(x.r, v, x.m)
    a = np.einsum("j,jk,jl->kl", x.m, x.r, v)
    return a - a.T


def angular_momentum_array(r: np.ndarray, v: np.ndarray, m: np.ndarray) -> np.ndarray:
    a = np.einsum("j,...jk,...jl->...kl", m, r, v)
    return a - np.swapaxes(a, -1, -2)


def angular_momentum_scalar(c: np.ndarray) -> float:
    """Planar view ``r ^ v = Im(v conj(r))`` of a 2x2 angular momentum."""
    if c.shape != (2, 2):
        raise ValueError("scalar view requires d = 2")
    return float(c[0, 1])


def angular_momentum_vector(c: np.ndarray) -> np.ndarray:
    """Spatial view (the usual cross product sum) of a 3x3 angular momentum."""
    if c.shape != (3, 3):
        raise ValueError("vector view requires d = 3")
    return np.array([c[1, 2], c[2, 0], c[0, 1]])


def angular_momentum_norm(c: np.ndarray) -> float:
    """Norm of the bivector (each independent component counted once)."""
    return float(np.linalg.norm(c) / math.sqrt(2.0))


def _planar_generator(d: int, k: int, l: int) -> np.ndarray:
    g = np.zeros((d, d))
    g[l, k] = 1.0
    g[k, l] = -1.0
    return g


def so_basis(d: int) -> list[np.ndarray]:
    """Standard basis of so(d).

    For d = 3 the order is rotations about x, y, z, so that the momentum map
    components line up with ``angular_momentum_vector``; otherwise the planes
    (k, l), k < l, in lexicographic order.
    """
    if d == 3:
        return [_planar_generator(3, 1, 2), _planar_generator(3, 2, 0), _planar_generator(3, 0, 1)]
    return [_planar_generator(d, k, l) for k, l in combinations(range(d), 2)]


def axis_generator(d: int, k: int = 0, l: int = 1) -> np.ndarray:
    """Generator of rotations in the (k, l) coordinate plane."""
    return _planar_generator(d, k, l)


@dataclass(frozen=True)
class GroupGenerators:
    """Skew generators spanning the Lie algebra of a connected subgroup of SO(d)."""

    generators: tuple

    def __post_init__(self):
        gens = tuple(np.array(g, dtype=float) for g in self.generators)
        if not gens:
            raise ValueError("at least one generator is required")
        d = gens[0].shape[0]
        for g in gens:
            if g.shape != (d, d):
                raise ValueError("generators must be square matrices of equal size")
            if np.max(np.abs(g + g.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(g))):
                raise ValueError("generators must be skew-symmetric")
            g.setflags(write=False)
        flat = np.array([g.ravel() for g in gens])
        if np.linalg.matrix_rank(flat, tol=1e-10) < len(gens):
            raise ValueError("generators must be linearly independent")
        object.__setattr__(self, "generators", gens)

    @property
    def d(self) -> int:
        return self.generators[0].shape[0]

    def __len__(self):
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)

    @classmethod
    def full(cls, d: int) -> "GroupGenerators":
        return cls(tuple(so_basis(d)))

    @classmethod
    def planar(cls, d: int, k: int = 0, l: int = 1) -> "GroupGenerators":
        return cls((axis_generator(d, k, l),))

    def to_list(self) -> list:
        return [g.tolist() for g in self.generators]


def rotation_tangent_basis(x: Configuration, gens: GroupGenerators, rtol: float = 1e-10):
    """Infinitesimal generator fields ``xi_k x`` and their numerical rank."""
    fields = np.stack([x.r @ g.T for g in gens])
    gram = _gram(fields, x.m)
    return fields, _numerical_rank(gram, rtol)


def _gram(fields: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.einsum("j,ajk,bjk->ab", m, fields, fields)


def _numerical_rank(gram: np.ndarray, rtol: float) -> int:
    w = np.linalg.eigvalsh(gram)
    top = w.max(initial=0.0)
    if top <= 0.0:
        return 0
    return int(np.sum(w > rtol * top))


def momentum_map(x: Configuration, v, gens: GroupGenerators) -> np.ndarray:
    """Components ``v . (xi_k x)`` of the equivariant momentum map."""
    v = np.asarray(v, dtype=float)
    _check_shapes(x.r, v, x.m)
    fields = np.stack([x.r @ g.T for g in gens])
    return np.einsum("j,jk,ajk->a", x.m, v, fields)


def momentum_map_array(r: np.ndarray, v: np.ndarray, m: np.ndarray, gens) -> np.ndarray:
    """Momentum map over stacks: returns ``(..., k)``."""
    fields = np.stack([r @ g.T for g in gens], axis=-3)
    return np.einsum("j,...jk,...ajk->...a", m, v, fields)


def saari_decompose(x: Configuration, v, gens: GroupGenerators, rtol: float = 1e-10):
    """Split ``v`` into a part tangent to the group orbit and a horizontal part.

    The tangent part is the mass-metric projection of ``v`` onto the span of the
    generator fields; the Gram matrix is inverted on its numerical range, so
    configurations with continuous isotropy are handled.
    """
    v = np.asarray(v, dtype=float)
    _check_shapes(x.r, v, x.m)
    fields = np.stack([x.r @ g.T for g in gens])
    gram = _gram(fields, x.m)
    rhs = np.einsum("j,jk,ajk->a", x.m, v, fields)
    w, q = np.linalg.eigh(gram)
    keep = w > rtol * max(w.max(initial=0.0), 0.0)
    coef = q[:, keep] @ ((q[:, keep].T @ rhs) / w[keep]) if keep.any() else np.zeros(len(gens))
    v_vert = np.einsum("a,ajk->jk", coef, fields)
    return v_vert, v - v_vert


def exp_skew(omega) -> np.ndarray:
    """Matrix exponential of a skew-symmetric matrix."""
    w = np.asarray(omega, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(w + w.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(w))):
        raise ValueError("matrix is not skew-symmetric")
    d = w.shape[0]
    if d == 2:
        t = w[1, 0]
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s], [s, c]])
    if d == 3:
        k = np.array([w[2, 1], w[0, 2], w[1, 0]])
        theta = float(np.linalg.norm(k))
        if theta < 1e-300:
            return np.eye(3)
        kx = w / theta
        return np.eye(3) + math.sin(theta) * kx + (1.0 - math.cos(theta)) * (kx @ kx)
    return scipy.linalg.expm(w)


def check_rotation(theta, tol: float = ORTHOGONALITY_TOL) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError("rotation must be a square matrix")
    err = np.max(np.abs(theta.T @ theta - np.eye(theta.shape[0])))
    if err > tol:
        raise ValueError(f"matrix is not orthogonal (max deviation {err:.3g})")
    if np.linalg.det(theta) < 0:
        raise ValueError("matrix is orthogonal but not a rotation (det = -1)")
    return theta


def rotate(x: Configuration, theta) -> Configuration:
    """Diagonal action ``(r_1, ..., r_N) -> (theta r_1, ..., theta r_N)``."""
    theta = check_rotation(theta)
    if theta.shape[0] != x.d:
        raise ValueError(f"rotation of size {theta.shape[0]} for d={x.d}")
    return x.with_positions(x.r @ theta.T)


def planar_rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def config_scale(x: Configuration) -> float:
    """RMS radius ``sqrt(I / M)``, the natural length scale of ``x``."""
    return math.sqrt(moment_of_inertia(x) / x.masses.total)
