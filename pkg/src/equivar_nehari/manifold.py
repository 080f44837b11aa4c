"""Centrally symmetric triangulated surfaces, metrics and perturbation tensors.

Every mesh carries a vertex permutation ``pairing`` with
``x[pairing[v]] == -x[v]`` bit for bit, and a matching triangle permutation.
Triangles are stored so that ``triangles[tri_pairing[t]] == pairing[triangles[t]]``
entry by entry; each element frame is built from its first edge, so the frame
of the image triangle is exactly the negated frame.  A tensor that is
invariant under the involution therefore has identical frame components on
paired triangles.
"""
from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import BallOverlapError, MeshError

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


# ---------------------------------------------------------------------------
# manifold identifiers


@dataclass(frozen=True)
class ManifoldSpec:
    """Tag for the surface a mesh approximates."""

    kind: str  # sphere | ellipsoid | torus | file
    params: tuple = ()

    def __str__(self) -> str:
        if self.kind == "sphere":
            return "sphere"
        if self.kind == "file":
            return f"file:{self.params[0]}"
        return f"{self.kind}({','.join(f'{v:g}' for v in self.params)})"

    @property
    def euler_characteristic(self) -> int | None:
        return {"sphere": 2, "ellipsoid": 2, "torus": 0}.get(self.kind)

    @property
    def injectivity_estimate(self) -> float:
        """Lower estimate of the injectivity radius of the smooth surface."""
        if self.kind == "sphere":
            return math.pi
        if self.kind == "ellipsoid":
            a = sorted(self.params)
            k_max = a[2] ** 2 / (a[0] ** 2 * a[1] ** 2)
            return math.pi / math.sqrt(k_max)
        if self.kind == "torus":
            big, small = self.params
            return math.pi * min(small, big - small)
        return math.inf


_ID_RE = re.compile(r"^\s*(sphere|ellipsoid|torus)\s*(?:\(([^)]*)\))?\s*$")


def parse_manifold_id(text) -> ManifoldSpec:
    """Parse ``sphere``, ``ellipsoid(a,b,c)``, ``torus(R,r)`` or ``file:<path>``."""
    if isinstance(text, ManifoldSpec):
        return text
    text = str(text).strip()
    if text.startswith("file:"):
        return ManifoldSpec("file", (text[5:],))
    m = _ID_RE.match(text)
    if not m:
        raise MeshError(f"unknown manifold id {text!r}")
    kind, args = m.group(1), m.group(2)
    values = []
    for item in (args or "").split(","):
        item = item.strip()
        if item:
            values.append(float(item.split("=")[-1]))
    if kind == "sphere":
        if values not in ([], [1.0]):
            raise MeshError("only the unit sphere is built in; use ellipsoid(r,r,r)")
        return ManifoldSpec("sphere")
    if kind == "ellipsoid":
        if len(values) != 3 or min(values) <= 0:
            raise MeshError("ellipsoid needs three positive semi-axes")
        return ManifoldSpec("ellipsoid", tuple(values))
    if len(values) == 0:
        values = [2.0, 0.7]
    if len(values) != 2 or not 0 < values[1] < values[0]:
        raise MeshError("torus needs radii R > r > 0")
    return ManifoldSpec("torus", tuple(values))


# ---------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class SymmetricMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    pairing: np.ndarray
    tri_pairing: np.ndarray
    manifold: ManifoldSpec = field(default_factory=lambda: ManifoldSpec("file", ("",)))

    @classmethod
    def build(cls, vertices, triangles, pairing, manifold="file:") -> "SymmetricMesh":
        """Assemble a mesh and canonicalise triangle order under ``pairing``.

        Only combinatorial consistency is enforced here; use
        :func:`check_involution` for the geometric check.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        pairing = np.asarray(pairing, dtype=np.int64)
        nv = vertices.shape[0]
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be an (V, 3) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (T, 3) array")
        if triangles.min() < 0 or triangles.max() >= nv:
            raise MeshError("triangle index out of range")
        if pairing.shape != (nv,) or not np.array_equal(np.sort(pairing), np.arange(nv)):
            raise MeshError("pairing must be a permutation of the vertices")
        lookup = {tuple(sorted(t)): i for i, t in enumerate(triangles.tolist())}
        if len(lookup) != len(triangles):
            raise MeshError("duplicate triangles")
        tri_pairing = -np.ones(len(triangles), dtype=np.int64)
        for i, t in enumerate(triangles.tolist()):
            if tri_pairing[i] >= 0:
                continue
            image = [int(pairing[v]) for v in t]
            j = lookup.get(tuple(sorted(image)))
            if j is None:
                raise MeshError(f"triangle {i} has no image under the pairing")
            tri_pairing[i], tri_pairing[j] = j, i
            if j != i:
                triangles[j] = image
        return cls(vertices, triangles, pairing, tri_pairing,
                   parse_manifold_id(manifold))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    # -- geometry -----------------------------------------------------------

    @cached_property
    def frames(self) -> np.ndarray:
        """Per-triangle orthonormal tangent frame, shape (T, 3, 2)."""
        x = self.vertices[self.triangles]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        e1 = d1 / np.linalg.norm(d1, axis=1)[:, None]
        nrm = np.cross(d1, d2)
        norms = np.linalg.norm(nrm, axis=1)
        if np.any(norms == 0):
            raise MeshError("degenerate (zero-area) triangle")
        nrm = nrm / norms[:, None]
        e2 = np.cross(nrm, e1)
        return np.stack([e1, e2], axis=2)

    @cached_property
    def local_coords(self) -> np.ndarray:
        """Vertex coordinates in the element frame, shape (T, 3, 2); vertex 0 at the origin."""
        x = self.vertices[self.triangles]
        rel = x - x[:, :1]
        return np.einsum("tkd,tdi->tki", rel, self.frames)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        n = self.n_vertices
        a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    @cached_property
    def triangle_neighbors(self) -> list[np.ndarray]:
        """Triangles sharing an edge with each triangle."""
        t = self.triangles
        owner: dict[tuple[int, int], list[int]] = {}
        for i, tri in enumerate(t.tolist()):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                owner.setdefault((min(a, b), max(a, b)), []).append(i)
        nbrs: list[list[int]] = [[] for _ in range(len(t))]
        for tris in owner.values():
            for i in tris:
                nbrs[i].extend(j for j in tris if j != i)
        return [np.array(sorted(set(n)), dtype=np.int64) for n in nbrs]

    @cached_property
    def vertex_triangles(self) -> list[np.ndarray]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for i, tri in enumerate(self.triangles.tolist()):
            for v in tri:
                out[v].append(i)
        return [np.array(o, dtype=np.int64) for o in out]

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        fn = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        # orientation of stored triangles is not coherent; align with position
        sign = np.sign(np.einsum("ti,ti->t", fn, self.centroids))
        sign[sign == 0] = 1.0
        fn = fn * sign[:, None]
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.triangles[:, k], fn)
        return vn / np.linalg.norm(vn, axis=1)[:, None]

    @cached_property
    def spacing(self) -> float:
        """Mean edge length."""
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    def is_closed_manifold(self) -> bool:
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    # -- equivariant reduction ----------------------------------------------

    @cached_property
    def representatives(self) -> np.ndarray:
        """One vertex per pair ``{v, pairing[v]}`` (the smaller index)."""
        v = np.arange(self.n_vertices)
        return v[v < self.pairing]

    @cached_property
    def lift(self) -> sparse.csr_matrix:
        """Signed lifting ``w -> u`` with ``u[rep] = w``, ``u[pairing[rep]] = -w``."""
        reps = self.representatives
        k = np.arange(len(reps))
        rows = np.concatenate([reps, self.pairing[reps]])
        cols = np.concatenate([k, k])
        vals = np.concatenate([np.ones(len(reps)), -np.ones(len(reps))])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_vertices, len(reps)))

    @cached_property
    def signed_involution(self) -> sparse.csr_matrix:
        """The matrix ``S`` with ``(S u)[v] = -u[pairing[v]]``."""
        n = self.n_vertices
        return sparse.csr_matrix((-np.ones(n), (np.arange(n), self.pairing)), shape=(n, n))

    def to_reduced(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.representatives]

    def from_reduced(self, w: np.ndarray) -> np.ndarray:
        u = np.empty(self.n_vertices)
        u[self.representatives] = w
        u[self.pairing[self.representatives]] = -w
        return u


# ---------------------------------------------------------------------------
# built-in meshes


def _icosahedron():
    verts = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            verts.append((0.0, s1, s2 * GOLDEN))
            verts.append((s1, s2 * GOLDEN, 0.0))
            verts.append((s2 * GOLDEN, 0.0, s1))
    v = np.array(verts)
    v /= np.linalg.norm(v, axis=1)[:, None]
    d = np.linalg.norm(v[:, None] - v[None], axis=2)
    edge = d[d > 1e-9].min()
    tris = []
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if max(d[i, j], d[j, k], d[i, k]) < edge * 1.001:
                    tris.append((i, j, k))
    return v, np.array(tris)


def _subdivide(v, t):
    mid: dict[tuple[int, int], int] = {}
    verts = list(v)
    out = []

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in mid:
            m = (verts[key[0]] + verts[key[1]]) / 2.0
            verts.append(m / np.linalg.norm(m))
            mid[key] = len(verts) - 1
        return mid[key]

    for a, b, c in t.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(verts), np.array(out)


def _antipodal_pairing(v):
    tree = cKDTree(v)
    dist, idx = tree.query(-v)
    if np.any(dist > 1e-9):
        raise MeshError("vertex set is not centrally symmetric")
    return idx.astype(np.int64)


def icosphere(refinement: int):
    v, t = _icosahedron()
    for _ in range(refinement):
        v, t = _subdivide(v, t)
    # snap the antipodal half onto exact negatives
    pairing = _antipodal_pairing(v)
    reps = np.arange(len(v))[np.arange(len(v)) < pairing]
    v[pairing[reps]] = -v[reps]
    return v, t, pairing


def torus_grid(big: float, small: float, refinement: int):
    n_phi = 4 * 2**refinement
    n_theta = 3 * n_phi
    idx = lambda i, j: (i % n_theta) * n_phi + (j % n_phi)  # noqa: E731
    v = np.zeros((n_theta * n_phi, 3))
    pairing = np.zeros(n_theta * n_phi, dtype=np.int64)
    half = n_theta // 2
    for i in range(half):
        th = 2 * math.pi * i / n_theta
        for j in range(n_phi):
            ph = 2 * math.pi * j / n_phi
            p = np.array([(big + small * math.cos(ph)) * math.cos(th),
                          (big + small * math.cos(ph)) * math.sin(th),
                          small * math.sin(ph)])
            a, b = idx(i, j), idx(i + half, -j)
            v[a], v[b] = p, -p
            pairing[a], pairing[b] = b, a
    tris = []
    for i in range(n_theta):
        for j in range(n_phi):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if i < half:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return v, np.array(tris), pairing


def build_builtin(manifold_id, refinement: int) -> SymmetricMesh:
    """Centrally symmetric mesh of a built-in surface.

    ``sphere`` and ``ellipsoid(a,b,c)`` come from icosahedral subdivision
    (``10 * 4**refinement + 2`` vertices); ``torus(R,r)`` is a structured
    ``(theta, phi)`` grid of ``12 * 2**k`` by ``4 * 2**k`` vertices.
    """
    mf = parse_manifold_id(manifold_id)
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    if mf.kind == "sphere":
        v, t, pairing = icosphere(refinement)
    elif mf.kind == "ellipsoid":
        v, t, pairing = icosphere(refinement)
        v = v * np.asarray(mf.params)[None, :]
    elif mf.kind == "torus":
        v, t, pairing = torus_grid(*mf.params, refinement)
    else:
        raise MeshError(f"{mf} is not a built-in manifold")
    return SymmetricMesh.build(v, t, pairing, mf)


# ---------------------------------------------------------------------------
# involution check


@dataclass
class InvolutionReport:
    passed: bool
    position_violations: np.ndarray
    fixed_vertices: np.ndarray
    non_involutive: np.ndarray
    triangle_violations: np.ndarray
    messages: list[str]

    @property
    def n_violations(self) -> int:
        return int(len(self.position_violations) + len(self.fixed_vertices)
                   + len(self.non_involutive) + len(self.triangle_violations))


def check_involution(mesh: SymmetricMesh) -> InvolutionReport:
    """Verify ``x[pairing[v]] == -x[v]`` exactly, ``pairing`` involutive and fixed-point free."""
    s = mesh.pairing
    v = np.arange(mesh.n_vertices)
    pos = np.nonzero(np.any(mesh.vertices[s] != -mesh.vertices, axis=1))[0]
    fixed = v[s == v]
    non_inv = v[s[s] != v]
    tri = np.nonzero(np.any(mesh.triangles[mesh.tri_pairing] != s[mesh.triangles], axis=1))[0]
    messages = []
    if len(pos):
        messages.append(f"{len(pos)} vertices violate x[pairing[v]] = -x[v]")
    if len(fixed):
        messages.append(f"fixed vertices present ({len(fixed)})")
    if len(non_inv):
        messages.append(f"pairing is not an involution at {len(non_inv)} vertices")
    if len(tri):
        messages.append(f"{len(tri)} triangles are not mapped onto triangles")
    return InvolutionReport(not messages, pos, fixed, non_inv, tri, messages)


# ---------------------------------------------------------------------------
# tensor fields


@dataclass(frozen=True, eq=False)
class TensorField:
    """Per-triangle symmetric 2x2 tensor in the element frames."""

    per_element: np.ndarray
    kind: str = "perturbation"
    k_proxy_norm: float = 0.0

    def __post_init__(self):
        if self.kind not in ("metric", "perturbation"):
            raise MeshError(f"unknown tensor kind {self.kind!r}")
        a = self.per_element
        if a.ndim != 3 or a.shape[1:] != (2, 2):
            raise MeshError("per_element must have shape (T, 2, 2)")
        if self.kind == "metric":
            det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
            if np.any(a[:, 0, 0] <= 0) or np.any(det <= 0):
                raise MeshError("metric tensor is not positive definite on every element")

    def __add__(self, other: "TensorField") -> "TensorField":
        kind = "metric" if "metric" in (self.kind, other.kind) else "perturbation"
        return TensorField(self.per_element + other.per_element, kind)

    def scaled(self, factor: float) -> "TensorField":
        return TensorField(factor * self.per_element, "perturbation",
                           abs(factor) * self.k_proxy_norm)

    def is_symmetric_under(self, mesh: SymmetricMesh, atol: float = 1e-12) -> bool:
        diff = self.per_element - self.per_element[mesh.tri_pairing]
        return bool(np.max(np.abs(diff), initial=0.0) <= atol)

    def is_identity(self) -> bool:
        return bool(np.all(self.per_element == np.eye(2)[None]))


def induced_metric(mesh: SymmetricMesh) -> TensorField:
    """First fundamental form of the piecewise-flat surface in the element frames."""
    y = mesh.local_coords
    d = y[:, 1:] - y[:, :1]
    area2 = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
    if np.any(np.abs(area2) == 0):
        raise MeshError("degenerate (zero-area) triangle")
    frames = mesh.frames
    g = np.einsum("tdi,tdj->tij", frames, frames)
    return TensorField(g, "metric")


def k_proxy_norm(mesh: SymmetricMesh, values: np.ndarray) -> float:
    """Discrete C^1 proxy: sup over elements of entry size plus neighbour slopes.

    Neighbour slopes compare the tensors lifted to ambient 3x3 form, so the
    proxy does not depend on the choice of element frames.
    """
    if not np.any(values):
        return 0.0
    lifted = np.einsum("tai,tij,tbj->tab", mesh.frames, values, mesh.frames)
    c = mesh.centroids
    best = 0.0
    frob = np.linalg.norm(values.reshape(len(values), -1), axis=1)
    for t, nbrs in enumerate(mesh.triangle_neighbors):
        slope = 0.0
        if len(nbrs):
            diff = np.linalg.norm((lifted[nbrs] - lifted[t]).reshape(len(nbrs), -1), axis=1)
            slope = float(np.max(diff / np.linalg.norm(c[nbrs] - c[t], axis=1)))
        best = max(best, float(frob[t]) + slope)
    return best


def _bump(d, radius):
    out = np.zeros_like(d)
    inside = d < radius
    s = (d[inside] / radius) ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s))
    return out


def _tangent_basis(normal):
    normal = normal / np.linalg.norm(normal)
    axis = np.eye(3)[int(np.argmin(np.abs(normal)))]
    t1 = axis - axis.dot(normal) * normal
    t1 /= np.linalg.norm(t1)
    return np.column_stack([t1, np.cross(normal, t1)])


_PATTERNS = {
    "h11": np.array([[1.0, 0.0], [0.0, 0.0]]),
    "h22": np.array([[0.0, 0.0], [0.0, 1.0]]),
    "h12": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "h11-h22": np.array([[1.0, 0.0], [0.0, -1.0]]),
    "identity": np.eye(2),
}


@dataclass(frozen=True)
class Conformal:
    """``h = alpha * g`` with ``alpha = alpha0 + sum of symmetric bump pairs``.

    ``bumps`` holds ``(centre, radius, amplitude)`` triples; centres are
    ambient points (or vertex indices) and each bump is mirrored through the
    origin.
    """

    alpha0: float = 0.0
    bumps: tuple = ()


@dataclass(frozen=True)
class BumpPair:
    """Smooth bump on ``B(q, R)`` and its mirror, with a fixed component pattern.

    ``pattern`` names entries in an orthonormal tangent basis at ``q``
    (``h11``, ``h22``, ``h12``, ``h11-h22``, ``identity``) or is a 2x2 array.
    """

    center: object
    radius: float
    pattern: object = "h12"
    amplitude: float = 1.0


@dataclass(frozen=True)
class Ellipsoidal:
    """Pull-back of the ambient map ``x -> diag(axes) x`` minus the base metric."""

    axes: tuple = (1.0, 1.05, 1.1)

    @classmethod
    def from_amplitude(cls, amplitude: float, direction: Sequence[float] = (0.0, 1.0, 2.0)):
        return cls(tuple(1.0 + amplitude * float(d) for d in direction))


def _center_point(mesh, center):
    if isinstance(center, (int, np.integer)):
        return mesh.vertices[int(center)].copy()
    return np.asarray(center, dtype=float)


def make_perturbation(mesh: SymmetricMesh, recipe, g: TensorField | None = None) -> TensorField:
    """Symmetric perturbation tensor built from a recipe."""
    if g is None:
        g = induced_metric(mesh)
    c = mesh.centroids
    if isinstance(recipe, Conformal):
        alpha = np.full(mesh.n_triangles, float(recipe.alpha0))
        for center, radius, amp in recipe.bumps:
            q = _center_point(mesh, center)
            _check_radius(q, radius)
            alpha += amp * (_bump(np.linalg.norm(c - q, axis=1), radius)
                            + _bump(np.linalg.norm(c + q, axis=1), radius))
        values = alpha[:, None, None] * g.per_element
    elif isinstance(recipe, BumpPair):
        q = _center_point(mesh, recipe.center)
        _check_radius(q, recipe.radius)
        pattern = _PATTERNS[recipe.pattern] if isinstance(recipe.pattern, str) \
            else np.asarray(recipe.pattern, dtype=float)
        basis = _tangent_basis(_normal_at(mesh, q))
        ambient = basis @ pattern @ basis.T
        weight = recipe.amplitude * (_bump(np.linalg.norm(c - q, axis=1), recipe.radius)
                                     + _bump(np.linalg.norm(c + q, axis=1), recipe.radius))
        values = weight[:, None, None] * np.einsum("tai,ab,tbj->tij", mesh.frames, ambient, mesh.frames)
    elif isinstance(recipe, Ellipsoidal):
        d2 = np.diag(np.asarray(recipe.axes, dtype=float) ** 2)
        values = np.einsum("tai,ab,tbj->tij", mesh.frames, d2, mesh.frames) - g.per_element
    else:
        raise MeshError(f"unknown perturbation recipe {recipe!r}")
    values = 0.5 * (values + np.swapaxes(values, 1, 2))
    return TensorField(values, "perturbation", k_proxy_norm(mesh, values))


def _check_radius(q, radius):
    # |q - tau q| / 2 = |q| for tau = -Id
    if radius > np.linalg.norm(q):
        raise BallOverlapError(
            f"bump radius {radius:g} exceeds half the distance {np.linalg.norm(q):g} to the mirror centre")


def _normal_at(mesh, q):
    v = int(np.argmin(np.linalg.norm(mesh.vertices - q, axis=1)))
    return mesh.vertex_normals[v]


def symmetrize_tensor(mesh: SymmetricMesh, raw: TensorField) -> TensorField:
    """Average of a tensor field and its pull-back under the involution."""
    values = 0.5 * (raw.per_element + raw.per_element[mesh.tri_pairing])
    if raw.kind == "metric":
        return TensorField(values, "metric")
    return TensorField(values, raw.kind, k_proxy_norm(mesh, values))


def random_symmetric_tensor(mesh: SymmetricMesh, rng: np.random.Generator, scale: float = 1.0) -> TensorField:
    a = rng.standard_normal((mesh.n_triangles, 2, 2))
    a = 0.5 * scale * (a + np.swapaxes(a, 1, 2))
    return symmetrize_tensor(mesh, TensorField(a))


# ---------------------------------------------------------------------------
# geodesic distances and normal coordinates


def _element_euclidean_coords(mesh: SymmetricMesh, g: TensorField) -> np.ndarray:
    """Vertex coordinates per element in which the metric ``g`` is Euclidean."""
    chol = np.linalg.cholesky(g.per_element)  # G = C C^T
    return np.einsum("tki,tij->tkj", mesh.local_coords, chol)


def _segment_update(a, b, c, ta, tb):
    """Arrival time at ``c`` from the front linearly interpolated along ``ab``."""
    d = b - a
    dn = math.hypot(d[0], d[1])
    best = min(ta + math.hypot(c[0] - a[0], c[1] - a[1]),
               tb + math.hypot(c[0] - b[0], c[1] - b[1]))
    alpha = (tb - ta) / dn
    if abs(alpha) >= 1.0:
        return best
    u = c - a
    x = (u[0] * d[0] + u[1] * d[1]) / dn
    y = abs(u[0] * d[1] - u[1] * d[0]) / dn
    t = alpha * y / math.sqrt(1.0 - alpha * alpha)
    s = (x - t) / dn
    if 0.0 < s < 1.0:
        p = a + s * d
        best = min(best, ta + s * (tb - ta) + math.hypot(c[0] - p[0], c[1] - p[1]))
    return best


def fast_marching(mesh: SymmetricMesh, g: TensorField, source: int, radius: float = math.inf) -> np.ndarray:
    """Discrete geodesic distance from ``source`` on ``(mesh, g)``.

    Dijkstra-ordered front propagation with a triangle update that minimises
    over the opposite edge under linear interpolation of arrival times; this
    stays monotone on obtuse elements.  Vertices farther than ``radius`` keep
    ``inf``.
    """
    z = _element_euclidean_coords(mesh, g)
    tris = mesh.triangles
    vt = mesh.vertex_triangles
    n = mesh.n_vertices
    dist = np.full(n, math.inf)
    done = np.zeros(n, dtype=bool)
    dist[source] = 0.0
    heap = [(0.0, int(source))]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d > dist[v]:
            continue
        if d > radius:
            break
        done[v] = True
        for t in vt[v]:
            tri = tris[t]
            k = int(np.nonzero(tri == v)[0][0])
            for m in (1, 2):
                w = int(tri[(k + m) % 3])
                if done[w]:
                    continue
                o = int(tri[(k + 3 - m) % 3])
                zw = z[t, (k + m) % 3]
                zv = z[t, k]
                if done[o]:
                    cand = _segment_update(zv, z[t, (k + 3 - m) % 3], zw, dist[v], dist[o])
                else:
                    cand = dist[v] + math.hypot(zw[0] - zv[0], zw[1] - zv[1])
                if cand < dist[w]:
                    dist[w] = cand
                    heapq.heappush(heap, (cand, w))
    dist[~done] = math.inf
    return dist


@dataclass
class Chart:
    """Polar normal coordinates around ``center`` for vertices within ``radius``."""

    center: int
    radius: float
    vertices: np.ndarray
    distances: np.ndarray
    angles: np.ndarray
    exact: bool


def _uses_closed_form(mesh: SymmetricMesh, g: TensorField | None) -> bool:
    return mesh.manifold.kind == "sphere" and (g is None or g.is_identity())


def geodesic_distances(mesh: SymmetricMesh, g: TensorField | None, source: int,
                       radius: float = math.inf) -> np.ndarray:
    """Great-circle distances on the unperturbed unit sphere, fast marching otherwise."""
    if _uses_closed_form(mesh, g):
        x = mesh.vertices
        q = x[source]
        cosang = np.clip(x @ q / (np.linalg.norm(x, axis=1) * np.linalg.norm(q)), -1.0, 1.0)
        d = np.arccos(cosang)
        d[d > radius] = math.inf
        return d
    return fast_marching(mesh, g if g is not None else induced_metric(mesh), source, radius)


def antipodal_distance(mesh: SymmetricMesh, g: TensorField | None, q: int) -> float:
    """Geodesic distance from ``q`` to its mirror vertex."""
    if _uses_closed_form(mesh, g):
        return math.pi
    return float(fast_marching(mesh, g if g is not None else induced_metric(mesh), q)[mesh.pairing[q]])


def normal_coordinates(mesh: SymmetricMesh, g: TensorField | None, q: int, R: float,
                       mirror_distance: float | None = None) -> Chart:
    """Polar normal coordinates ``(distance, angle)`` on the geodesic ball ``B(q, R)``.

    Raises :class:`BallOverlapError` when ``R`` reaches half the distance to
    the mirror vertex or the injectivity estimate of the surface.
    """
    if mirror_distance is None:
        mirror_distance = antipodal_distance(mesh, g, q)
    if R >= 0.5 * mirror_distance:
        raise BallOverlapError(
            f"R={R:g} would make B(q,R) meet B(tau q,R) (half distance {0.5 * mirror_distance:g})")
    if R >= mesh.manifold.injectivity_estimate:
        raise BallOverlapError(f"R={R:g} exceeds the injectivity estimate")
    d = geodesic_distances(mesh, g, q, R)
    inside = np.nonzero(d <= R)[0]
    rel = mesh.vertices[inside] - mesh.vertices[q]
    basis = _tangent_basis(mesh.vertex_normals[q])
    coords = rel @ basis
    angles = np.arctan2(coords[:, 1], coords[:, 0])
    angles[inside == q] = 0.0
    return Chart(int(q), float(R), inside, d[inside], angles, _uses_closed_form(mesh, g))


# ---------------------------------------------------------------------------
# file formats


def save_mesh(mesh: SymmetricMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in tri) for tri in mesh.triangles]
    lines.append("PAIRING")
    lines += [str(int(s)) for s in mesh.pairing]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, manifold=None) -> SymmetricMesh:
    tokens = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    tokens = [t for t in tokens if t]
    if tokens and tokens[0].upper().startswith("OFF"):
        tokens = tokens[1:]
    nv, nt = (int(x) for x in tokens[0].split()[:2])
    verts = np.array([[float(x) for x in ln.split()[:3]] for ln in tokens[1:1 + nv]])
    tris = []
    for ln in tokens[1 + nv:1 + nv + nt]:
        parts = [int(x) for x in ln.split()]
        tris.append(parts[1:4] if len(parts) == 4 else parts[:3])
    rest = tokens[1 + nv + nt:]
    if not rest or rest[0].upper() != "PAIRING":
        raise MeshError("mesh file lacks a PAIRING section")
    pairing = np.array([int(x) for ln in rest[1:] for x in ln.split()])
    return SymmetricMesh.build(verts, tris, pairing, manifold or f"file:{path}")


TENSOR_HEADER = "# frame=edge01: e1 along (v1 - v0), e2 = n x e1, n = (v1-v0) x (v2-v0)"


def save_tensor(field: TensorField, path) -> None:
    a = field.per_element
    lines = [TENSOR_HEADER, f"# kind={field.kind}"]
    lines += [f"{t} {a[t, 0, 0]:.17g} {a[t, 0, 1]:.17g} {a[t, 1, 1]:.17g}" for t in range(len(a))]
    Path(path).write_text("\n".join(lines) + "\n")


def load_tensor(path, mesh: SymmetricMesh | None = None) -> TensorField:
    kind = "perturbation"
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if "kind=" in line:
                kind = line.split("kind=")[1].strip()
            continue
        if line.strip():
            rows.append([float(x) for x in line.split()])
    rows.sort(key=lambda r: r[0])
    a = np.array(rows)
    values = np.empty((len(a), 2, 2))
    values[:, 0, 0], values[:, 0, 1], values[:, 1, 0], values[:, 1, 1] = a[:, 1], a[:, 2], a[:, 2], a[:, 3]
    norm = k_proxy_norm(mesh, values) if (mesh is not None and kind == "perturbation") else 0.0
    return TensorField(values, kind, norm)
