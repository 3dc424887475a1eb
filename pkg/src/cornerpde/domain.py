"""Planar corner domains, distance weights, and structured triangulations.

The workbench runs on three domain families: circular sectors of opening
angle ``theta`` (including the slit case ``theta = 2*pi``), the L-shape
``(-1,1)^2`` minus the closed quadrant ``[0,1) x (-1,0]``, and the unit
square as the smooth control case.  Each domain carries a singular set
(a subset of its vertices) and the capped distance weight

    rho(x) = min(1, dist(x, singular set)),

which enters the weighted norms.  Meshes are generated structurally --
lattice meshes with a fixed diagonal split for square/L-shape, polar
lattices for sectors -- so that refinement by doubling nests node sets
exactly and hierarchical operations stay cheap and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

#: Hard cap on mesh size; generators refuse to build anything larger.
NODE_BUDGET = 2_000_000

_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolygonalDomain:
    """A planar corner domain with a marked singular vertex set.

    Parameters
    ----------
    kind : str
        One of ``"sector"``, ``"lshape"``, ``"square"``.
    vertices : ndarray, shape (nv, 2)
        Corner coordinates.  For sectors the boundary is the arc plus the
        two straight radii; for the slit (``theta = 2*pi``) the two radii
        coincide.
    interior_angles : ndarray, shape (nv,)
        Interior angle at each vertex, in radians.
    singular_vertices : tuple of int
        Indices into ``vertices`` forming the singular set.
    radius_or_extent : float
        Sector radius, or the bounding extent for polygonal domains.
    theta : float or None
        Opening angle for sectors, ``None`` otherwise.
    """

    kind: str
    vertices: np.ndarray
    interior_angles: np.ndarray
    singular_vertices: tuple
    radius_or_extent: float
    theta: float | None = None

    def __post_init__(self):
        if len(self.singular_vertices) == 0 and len(self.vertices) > 0:
            raise ValidationError("singular set must be non-empty for a domain with vertices")
        angles = np.asarray(self.interior_angles, dtype=float)
        if np.any(angles <= 0.0) or np.any(angles > _TWO_PI + 1e-12):
            raise ValidationError("every interior angle must satisfy 0 < theta <= 2*pi")
        self.vertices.setflags(write=False)
        self.interior_angles.setflags(write=False)

    @property
    def convex(self) -> bool:
        return bool(np.all(self.interior_angles <= math.pi + 1e-12))

    @property
    def singular_points(self) -> np.ndarray:
        """Coordinates of the singular vertices, shape (ns, 2)."""
        return self.vertices[list(self.singular_vertices)]

    @property
    def max_interior_angle(self) -> float:
        return float(np.max(self.interior_angles))

    @property
    def area(self) -> float:
        if self.kind == "sector":
            return 0.5 * self.theta * self.radius_or_extent ** 2
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def contains(self, points) -> np.ndarray:
        """Vectorized closure membership test (tolerance 1e-12)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tol = 1e-12
        x, y = pts[:, 0], pts[:, 1]
        if self.kind == "square":
            return (x >= -tol) & (x <= 1 + tol) & (y >= -tol) & (y <= 1 + tol)
        if self.kind == "lshape":
            inside = (np.abs(x) <= 1 + tol) & (np.abs(y) <= 1 + tol)
            removed = (x > tol) & (y < -tol)
            return inside & ~removed
        r = np.hypot(x, y)
        ok = r <= self.radius_or_extent + tol
        if self.theta < _TWO_PI - 1e-12:
            phi = np.arctan2(y, x)
            ok &= np.abs(phi) <= self.theta / 2 + 1e-9
        return ok


def make_sector(theta: float, radius: float) -> PolygonalDomain:
    """Circular sector ``{0 < r < radius, |phi| < theta/2}``.

    The origin is the unique singular vertex.  ``theta = 2*pi`` yields the
    slit disc (both radii lie on the negative x-axis).

    Parameters
    ----------
    theta : float
        Opening angle in radians, ``0 < theta <= 2*pi``.
    radius : float
        Sector radius, positive.
    """
    if not (0.0 < theta <= _TWO_PI + 1e-15):
        raise ValidationError(f"sector opening angle must lie in (0, 2*pi], got {theta}")
    if not radius > 0.0:
        raise ValidationError(f"sector radius must be positive, got {radius}")
    theta = min(float(theta), _TWO_PI)
    a0, a1 = -theta / 2.0, theta / 2.0
    verts = np.array([
        [0.0, 0.0],
        [radius * math.cos(a0), radius * math.sin(a0)],
        [radius * math.cos(a1), radius * math.sin(a1)],
    ])
    angles = np.array([theta, math.pi / 2.0, math.pi / 2.0])
    return PolygonalDomain(
        kind="sector",
        vertices=verts,
        interior_angles=angles,
        singular_vertices=(0,),
        radius_or_extent=float(radius),
        theta=theta,
    )


def make_l_shape() -> PolygonalDomain:
    """The L-shape ``(-1,1)^2 \\ [0,1) x (-1,0]``.

    Six vertices, all singular; the re-entrant angle ``3*pi/2`` sits at the
    origin.
    """
    verts = np.array([
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [-1.0, 1.0],
        [-1.0, -1.0],
        [0.0, -1.0],
    ])
    half_pi = math.pi / 2.0
    angles = np.array([3.0 * math.pi / 2.0, half_pi, half_pi, half_pi, half_pi, half_pi])
    return PolygonalDomain(
        kind="lshape",
        vertices=verts,
        interior_angles=angles,
        singular_vertices=(0, 1, 2, 3, 4, 5),
        radius_or_extent=1.0,
        theta=None,
    )


def make_square() -> PolygonalDomain:
    """Unit square ``(0,1)^2`` (the smooth control domain); all four corners
    are in the singular set by default, but every interior angle is convex."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    angles = np.full(4, math.pi / 2.0)
    return PolygonalDomain(
        kind="square",
        vertices=verts,
        interior_angles=angles,
        singular_vertices=(0, 1, 2, 3),
        radius_or_extent=1.0,
        theta=None,
    )


def rho(domain: PolygonalDomain, x) -> float | np.ndarray:
    """Capped distance to the singular set: ``min(1, dist(x, S))``.

    Accepts a single point ``(2,)`` or an array ``(n, 2)``; points must lie
    in the closure of the domain.
    """
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not bool(np.all(domain.contains(pts))):
        raise ValidationError("rho evaluated outside the closure of the domain")
    sing = domain.singular_points
    d = np.min(np.linalg.norm(pts[:, None, :] - sing[None, :, :], axis=2), axis=1)
    d = np.minimum(1.0, d)
    return float(d[0]) if scalar else d


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """The weight ``rho(x) = min(cap, dist(x, singular set))`` with cap 1.

    Callable on points or arrays of points.
    """

    domain: PolygonalDomain
    cap: float = 1.0

    def __post_init__(self):
        if self.cap != 1.0:
            raise ValidationError("the weight cap is fixed at 1")

    def __call__(self, x):
        return rho(self.domain, x)


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Mesh:
    """Conforming triangulation with nodes, triangles and boundary flags.

    Structured metadata (`structure`, `n`, `lattice`) records how the mesh
    was generated; refinement by doubling ``n`` nests the node set, which
    the prolongation and hierarchical-surplus machinery relies on.

    Attributes
    ----------
    nodes : ndarray (n_nodes, 2)
    triangles : ndarray (n_tris, 3)
        Vertex index triples, positively oriented.
    boundary : ndarray (n_nodes,) of bool
        True exactly on boundary (Dirichlet) nodes.
    grading : tuple (mu, center) or None
        Grading exponent and the vertex it concentrates toward.
    structure : str
        ``"lattice"`` (square, L-shape) or ``"polar"`` (sector).
    n : int
        Refinement level parameter (cells per unit / radial layers).
    lattice : ndarray (n_nodes, 2) of int
        Integer generation coordinates (lattice: (i, j) at denominator n;
        polar: (ring, angular index)).
    arc_pairs : ndarray (k, 3) of int or None
        For sector meshes, rows (triangle index, node a, node b) flagging
        boundary-arc chords; quadrature adds the curved sliver beyond each.
    """

    domain: PolygonalDomain
    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    structure: str
    n: int
    lattice: np.ndarray
    grading: tuple | None = None
    arc_pairs: np.ndarray | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary, self.lattice):
            arr.setflags(write=False)
        if self.arc_pairs is not None:
            self.arc_pairs.setflags(write=False)
        if not self._index:
            self._index = {tuple(c): i for i, c in enumerate(self.lattice.tolist())}

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary

    def singular_node_indices(self) -> np.ndarray:
        """Mesh node indices coinciding with singular domain vertices."""
        sing = self.domain.singular_points
        out = []
        for s in sing:
            d = np.linalg.norm(self.nodes - s[None, :], axis=1)
            j = int(np.argmin(d))
            if d[j] < 1e-12:
                out.append(j)
        return np.array(sorted(set(out)), dtype=int)


def _orient(nodes: np.ndarray, tris: list) -> np.ndarray:
    """Return triangles as an int array with positive signed area."""
    t = np.array(tris, dtype=int)
    p = nodes[t]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = area2 < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def _lattice_cells(domain: PolygonalDomain, n: int):
    """Integer lattice nodes and cells for square/L-shape at resolution n."""
    if domain.kind == "square":
        coords = [(i, j) for j in range(n + 1) for i in range(n + 1)]
        cells = [(i, j) for j in range(n) for i in range(n)]

        def on_boundary(i, j):
            return i == 0 or j == 0 or i == n or j == n
    else:  # lshape
        coords = [
            (i, j)
            for j in range(-n, n + 1)
            for i in range(-n, n + 1)
            if not (i >= 1 and j <= -1)
        ]
        cells = [
            (i, j)
            for j in range(-n, n)
            for i in range(-n, n)
            if not (i >= 0 and j <= -1)
        ]

        def on_boundary(i, j):
            outer = abs(i) == n or abs(j) == n
            slit = (j == 0 and i >= 0) or (i == 0 and j <= 0)
            return outer or slit

    return coords, cells, on_boundary


def _build_lattice_mesh(domain: PolygonalDomain, n: int, mu: float | None) -> Mesh:
    coords, cells, on_boundary = _lattice_cells(domain, n)
    if len(coords) > NODE_BUDGET:
        raise ValidationError(
            f"requested mesh would have {len(coords)} nodes (budget {NODE_BUDGET})")
    index = {c: k for k, c in enumerate(coords)}
    pos = np.array(coords, dtype=float) / float(n)

    if mu is not None and mu < 1.0 and domain.kind == "lshape":
        # Pull nodes toward the re-entrant corner: a point at max-norm
        # radius t moves to radius t**(1/mu) along its ray from the origin.
        t = np.max(np.abs(pos), axis=1)
        scale = np.ones_like(t)
        mask = (t > 0.0) & (t < 1.0)
        scale[mask] = t[mask] ** (1.0 / mu - 1.0)
        pos = pos * scale[:, None]

    tris = []
    for (i, j) in cells:
        a = index[(i, j)]
        b = index[(i + 1, j)]
        c = index[(i + 1, j + 1)]
        d = index[(i, j + 1)]
        tris.append((a, b, c))  # below the cell's NE diagonal
        tris.append((a, c, d))  # above it
    triangles = _orient(pos, tris)
    boundary = np.array([on_boundary(i, j) for (i, j) in coords], dtype=bool)
    grading = None
    if mu is not None and mu < 1.0:
        grading = (float(mu), (0.0, 0.0))
    return Mesh(
        domain=domain,
        nodes=pos,
        triangles=triangles,
        boundary=boundary,
        structure="lattice",
        n=n,
        lattice=np.array(coords, dtype=int),
        grading=grading,
        _index=index,
    )


def _sector_wedges(theta: float) -> int:
    return max(2, round(theta))


def _build_polar_mesh(domain: PolygonalDomain, n: int, mu: float | None) -> Mesh:
    theta, radius = domain.theta, domain.radius_or_extent
    n_w = _sector_wedges(theta)
    n_nodes = 1 + sum(n_w * i + 1 for i in range(1, n + 1))
    if n_nodes > NODE_BUDGET:
        raise ValidationError(
            f"requested mesh would have {n_nodes} nodes (budget {NODE_BUDGET})")

    radii = np.empty(n + 1)
    for i in range(n + 1):
        frac = i / n
        radii[i] = radius * (frac ** (1.0 / mu) if mu is not None else frac)

    coords, positions = [], []
    index = {}
    for i in range(n + 1):
        n_ang = n_w * i if i > 0 else 0
        for k in range(n_ang + 1):
            if i == 0 and k > 0:
                break
            phi = -theta / 2.0 + (theta * k / n_ang if n_ang else 0.0)
            index[(i, k)] = len(coords)
            coords.append((i, k))
            positions.append((radii[i] * math.cos(phi), radii[i] * math.sin(phi)))
    pos = np.array(positions)

    tris = []
    arc_rows = []
    for i in range(n):
        inner_count = n_w * i  # arcs on ring i
        outer_count = n_w * (i + 1)
        if i == 0:
            for q in range(outer_count):
                tris.append((index[(0, 0)], index[(1, q)], index[(1, q + 1)]))
                if n == 1:
                    arc_rows.append((len(tris) - 1, index[(1, q)], index[(1, q + 1)]))
            continue
        for w in range(n_w):
            inner = [index[(i, w * i + j)] for j in range(i + 1)]
            outer = [index[(i + 1, w * (i + 1) + j)] for j in range(i + 2)]
            for j in range(i + 1):
                tris.append((outer[j], outer[j + 1], inner[j]))
                if i + 1 == n:
                    arc_rows.append((len(tris) - 1, outer[j], outer[j + 1]))
            for j in range(i):
                tris.append((inner[j], outer[j + 1], inner[j + 1]))
    triangles = _orient(pos, tris)

    boundary = np.zeros(len(coords), dtype=bool)
    for (i, k), idx in index.items():
        if i == 0 or i == n or k == 0 or (i > 0 and k == n_w * i):
            boundary[idx] = True

    grading = None
    if mu is not None and mu < 1.0:
        grading = (float(mu), (0.0, 0.0))
    return Mesh(
        domain=domain,
        nodes=pos,
        triangles=triangles,
        boundary=boundary,
        structure="polar",
        n=n,
        lattice=np.array(coords, dtype=int),
        grading=grading,
        arc_pairs=np.array(arc_rows, dtype=int) if arc_rows else None,
        _index=index,
    )


def mesh_uniform(domain: PolygonalDomain, h: float) -> Mesh:
    """Uniform conforming triangulation with target edge length ``h``.

    Square and L-shape use an ``n x n``-per-unit lattice with every cell cut
    along its NE diagonal (2 triangles per cell); sectors use a polar
    lattice whose ring ``i`` carries ``i`` nodes per base wedge, keeping the
    radial and tangential spacings comparable.  Repeated calls with the
    same arguments reproduce the identical mesh, and halving ``h`` (for
    ``1/h`` integer) nests the node set.

    Parameters
    ----------
    domain : PolygonalDomain
    h : float
        Target edge length; the lattice resolution is ``round(extent/h)``.
    """
    if not h > 0:
        raise ValidationError(f"mesh size h must be positive, got {h}")
    n = max(1, round(domain.radius_or_extent / h))
    if domain.kind == "sector":
        return _build_polar_mesh(domain, n, mu=None)
    return _build_lattice_mesh(domain, n, mu=None)


def mesh_graded(domain: PolygonalDomain, n_layers: int, mu: float) -> Mesh:
    """Graded triangulation with radial breakpoints ``r_i = (i/n)^(1/mu)``.

    The grading concentrates layers toward the re-entrant singular vertex
    (the origin for sectors and the L-shape); ``mu = 1`` reproduces the
    uniform layering.

    Parameters
    ----------
    n_layers : int
        Number of radial layers, at least 2.
    mu : float
        Grading exponent in ``(0, 1]``.
    """
    if n_layers < 2:
        raise ValidationError(f"n_layers must be >= 2, got {n_layers}")
    if not (0.0 < mu <= 1.0):
        raise ValidationError(f"grading exponent mu must lie in (0, 1], got {mu}")
    if domain.kind == "sector":
        return _build_polar_mesh(domain, n_layers, mu=mu)
    if domain.kind == "lshape":
        return _build_lattice_mesh(domain, n_layers, mu=mu)
    raise ValidationError("graded meshes are built toward a re-entrant corner "
                          "(sector or L-shape); the square has none")


def refine(mesh: Mesh) -> Mesh:
    """The same generator at doubled resolution; node sets nest exactly."""
    mu = mesh.grading[0] if mesh.grading else None
    if mesh.structure == "polar":
        return _build_polar_mesh(mesh.domain, 2 * mesh.n, mu)
    return _build_lattice_mesh(mesh.domain, 2 * mesh.n, mu)


def grading_breakpoints(mesh: Mesh) -> np.ndarray:
    """Radial layer breakpoints of a (possibly graded) structured mesh."""
    n = mesh.n
    mu = mesh.grading[0] if mesh.grading else 1.0
    r = (np.arange(n + 1) / n) ** (1.0 / mu)
    return r * mesh.domain.radius_or_extent


def nominal_spacing(mesh: Mesh) -> float:
    """Representative mesh size: lattice spacing 1/n, radial step R/n."""
    if mesh.structure == "lattice":
        return 1.0 / mesh.n
    return mesh.domain.radius_or_extent / mesh.n


def prolong(coarse: Mesh, fine: Mesh, values: np.ndarray) -> np.ndarray:
    """Prolong nodal values from a lattice mesh to its doubled refinement.

    Fine nodes are either coarse nodes (copied), midpoints of coarse lattice
    edges, or cell centers, which lie on the coarse NE diagonal; both kinds
    average their two lattice parents.  On uniform lattice meshes this is
    exactly P1 interpolation.  On graded meshes the grading map bends coarse
    edges, so lattice averaging is *not* the coarse P1 function sampled on
    the fine mesh; the mismatch is large enough to corrupt convergence-rate
    measurements.  Use :func:`p1_evaluate` for geometric evaluation there.

    Sector (polar) meshes are not supported; their refinement pattern does
    not place fine nodes on coarse edges.
    """
    if coarse.structure != "lattice" or fine.structure != "lattice":
        raise ValidationError("prolong supports lattice (square/L-shape) meshes only")
    if fine.n != 2 * coarse.n or fine.domain.kind != coarse.domain.kind:
        raise ValidationError("fine mesh must be the doubled refinement of the coarse mesh")
    values = np.asarray(values, dtype=float)
    if values.shape[0] != coarse.n_nodes:
        raise ValidationError("value vector does not match the coarse mesh")
    out = np.empty(fine.n_nodes, dtype=values.dtype)
    cidx = coarse._index
    for f, (i, j) in enumerate(fine.lattice.tolist()):
        ei, ej = i % 2, j % 2
        if ei == 0 and ej == 0:
            out[f] = values[cidx[(i // 2, j // 2)]]
        elif ei == 1 and ej == 0:
            out[f] = 0.5 * (values[cidx[((i - 1) // 2, j // 2)]]
                            + values[cidx[((i + 1) // 2, j // 2)]])
        elif ei == 0 and ej == 1:
            out[f] = 0.5 * (values[cidx[(i // 2, (j - 1) // 2)]]
                            + values[cidx[(i // 2, (j + 1) // 2)]])
        else:
            out[f] = 0.5 * (values[cidx[((i - 1) // 2, (j - 1) // 2)]]
                            + values[cidx[((i + 1) // 2, (j + 1) // 2)]])
    return out


def prolong_to(coarse: Mesh, fine: Mesh, values: np.ndarray) -> np.ndarray:
    """Prolong across one or more doublings (``fine.n = 2**k * coarse.n``)."""
    if fine.n == coarse.n:
        return np.asarray(values, dtype=float).copy()
    steps = []
    m = coarse
    while m.n < fine.n:
        m2 = refine(m) if 2 * m.n < fine.n else fine
        steps.append((m, m2))
        m = m2
    if m.n != fine.n:
        raise ValidationError("fine resolution is not a power-of-two multiple of coarse")
    v = values
    for a, b in steps:
        v = prolong(a, b, v)
    return v


def _lattice_node_grid(mesh: Mesh) -> tuple[np.ndarray, int]:
    """Dense (i, j) -> node id grid for a lattice mesh; -1 marks absent."""
    n = mesh.n
    lo = 0 if mesh.domain.kind == "square" else -n
    size = n - lo + 1
    grid = np.full((size, size), -1, dtype=np.int64)
    lat = mesh.lattice
    grid[lat[:, 0] - lo, lat[:, 1] - lo] = np.arange(mesh.n_nodes)
    return grid, lo


def _bary(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points p in triangles (a, b, c), row-wise.

    Degenerate triangles (placeholders for absent cells) yield -inf rows.
    """
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    bad = det == 0.0
    det = np.where(bad, 1.0, det)
    w1 = ((p[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1])) / det
    w2 = ((b[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1]) - (p[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
    out = np.stack([1.0 - w1 - w2, w1, w2], axis=1)
    out[bad] = -np.inf
    return out


def p1_evaluate(field, points: np.ndarray) -> np.ndarray:
    """Evaluate a P1 nodal field at arbitrary points of its lattice mesh.

    Parameters
    ----------
    field : FieldSnapshot
        Field on a uniform or graded lattice mesh (square or L-shape).
    points : ndarray (m, 2)
        Evaluation points inside the closed domain.

    Returns
    -------
    ndarray (m,)
        Physically interpolated values.  The containing cell is found by
        inverting the node-placement map; interpolation uses barycentric
        coordinates of the straight mapped triangles, so graded meshes are
        evaluated exactly as the P1 functions they carry.
    """
    mesh = field.mesh
    if mesh.structure != "lattice":
        raise ValidationError("p1_evaluate supports lattice meshes (square, L-shape)")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError("points must have shape (m, 2)")
    n = mesh.n
    grid, lo = _lattice_node_grid(mesh)

    lat = pts
    if mesh.grading is not None:
        mu = mesh.grading[0]
        t = np.max(np.abs(pts), axis=1)
        scale = np.ones_like(t)
        mask = t > 0.0
        scale[mask] = np.minimum(t[mask], 1.0) ** (mu - 1.0)
        lat = pts * scale[:, None]
    cont = lat * n  # continuous lattice coordinates, cells are unit squares

    i0 = np.clip(np.floor(cont[:, 0]).astype(np.int64), lo, n - 1)
    j0 = np.clip(np.floor(cont[:, 1]).astype(np.int64), lo, n - 1)
    if mesh.domain.kind == "lshape":
        # Points on the slit edge x = 0, y < 0 belong to the cells left of it.
        snap = (i0 == 0) & (j0 <= -1) & (np.abs(cont[:, 0]) < 1e-9)
        i0[snap] = -1

    def corner_ids(ii, jj):
        inside = (ii >= lo) & (ii < n) & (jj >= lo) & (jj < n)
        ids = np.full((ii.shape[0], 4), -1, dtype=np.int64)
        iv, jv = ii[inside] - lo, jj[inside] - lo
        ids[inside, 0] = grid[iv, jv]
        ids[inside, 1] = grid[iv + 1, jv]
        ids[inside, 2] = grid[iv + 1, jv + 1]
        ids[inside, 3] = grid[iv, jv + 1]
        return ids

    def eval_cells(ii, jj, p):
        """Best (min-barycentric, weights, node triple) over the 2 cell triangles."""
        ids = corner_ids(ii, jj)
        ok = np.all(ids >= 0, axis=1)
        safe = np.where(ok[:, None], ids, 0)
        quad = mesh.nodes[safe]  # (m, 4, 2) corners a, b, c, d
        best_score = np.full(p.shape[0], -np.inf)
        best_w = np.zeros((p.shape[0], 3))
        best_nodes = np.zeros((p.shape[0], 3), dtype=np.int64)
        for tri in ((0, 1, 2), (0, 2, 3)):  # below / above the NE diagonal
            w = _bary(p, quad[:, tri[0]], quad[:, tri[1]], quad[:, tri[2]])
            score = np.where(ok, w.min(axis=1), -np.inf)
            better = score > best_score
            best_score = np.where(better, score, best_score)
            best_w[better] = w[better]
            best_nodes[better] = safe[better][:, tri]
        return best_score, best_w, best_nodes

    score, wts, nodes_ = eval_cells(i0, j0, pts)
    missed = score < -1e-9
    if np.any(missed):
        # Graded cells are curvilinear in lattice coordinates, so points near
        # cell borders can land one cell over; scan the 3x3 neighbourhood.
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                idx = np.flatnonzero(missed)
                if idx.size == 0:
                    break
                s2, w2, n2 = eval_cells(i0[idx] + di, j0[idx] + dj, pts[idx])
                better = s2 > score[idx]
                upd = idx[better]
                score[upd], wts[upd], nodes_[upd] = s2[better], w2[better], n2[better]
                missed = score < -1e-9
        if np.any(score < -1e-6):
            k = int(np.argmin(score))
            raise ValidationError(
                f"point ({pts[k, 0]:g}, {pts[k, 1]:g}) lies outside the mesh")
    wts = np.clip(wts, 0.0, None)
    wts /= wts.sum(axis=1, keepdims=True)
    return np.einsum("ij,ij->i", wts, field.values[nodes_])


# ---------------------------------------------------------------------------
# snapshots and export
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FieldSnapshot:
    """A scalar P1 field: mesh plus one nodal coefficient per node."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValidationError(
                f"field has {self.values.shape} values for {self.mesh.n_nodes} nodes")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_mesh_csv(mesh: Mesh, path, values: np.ndarray | None = None) -> None:
    """ASCII mesh listing: node rows then triangle rows.

    Node rows are ``node,<id>,<x>,<y>,<boundary flag>[,<value>]``; triangle
    rows are ``tri,<id>,<n0>,<n1>,<n2>``.  Floats carry 17 significant
    digits so identical meshes produce identical bytes.
    """
    lines = []
    for i in range(mesh.n_nodes):
        row = f"node,{i},{_fmt(mesh.nodes[i, 0])},{_fmt(mesh.nodes[i, 1])},{int(mesh.boundary[i])}"
        if values is not None:
            row += f",{_fmt(values[i])}"
        lines.append(row)
    for t in range(mesh.n_triangles):
        a, b, c = mesh.triangles[t]
        lines.append(f"tri,{t},{a},{b},{c}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_mesh_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None]:
    """Inverse of :func:`write_mesh_csv`: (nodes, triangles, boundary, values)."""
    nodes, tris, flags, vals = [], [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if parts[0] == "node":
                nodes.append((float(parts[2]), float(parts[3])))
                flags.append(bool(int(parts[4])))
                if len(parts) > 5:
                    vals.append(float(parts[5]))
            elif parts[0] == "tri":
                tris.append((int(parts[2]), int(parts[3]), int(parts[4])))
            else:
                raise ValidationError(f"unrecognized mesh CSV row kind: {parts[0]!r}")
    values = np.array(vals) if vals else None
    if values is not None and len(values) != len(nodes):
        raise ValidationError("mesh CSV mixes rows with and without values")
    return (np.array(nodes), np.array(tris, dtype=int), np.array(flags, dtype=bool), values)


def write_vtk(mesh: Mesh, path, values: np.ndarray | None = None,
              name: str = "u") -> None:
    """Legacy ASCII VTK export for quick visualization."""
    with open(path, "w", newline="\n") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write("cornerpde mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_nodes} double\n")
        for i in range(mesh.n_nodes):
            f.write(f"{_fmt(mesh.nodes[i, 0])} {_fmt(mesh.nodes[i, 1])} 0\n")
        nt = mesh.n_triangles
        f.write(f"CELLS {nt} {4 * nt}\n")
        for t in range(nt):
            a, b, c = mesh.triangles[t]
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("\n".join(["5"] * nt) + "\n")
        if values is not None:
            f.write(f"POINT_DATA {mesh.n_nodes}\n")
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values:
                f.write(_fmt(v) + "\n")
