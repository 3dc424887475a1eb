"""Element quadrature: Dunavant rules, singular-vertex subdivision, arc slivers.

Weighted corner norms integrate functions of the capped distance rho, which
is smooth except at singular vertices.  Three tools keep the quadrature
sharp there without any adaptivity machinery:

* a degree-4 symmetric 6-point triangle rule for the bulk,
* geometric (dyadic) radial subdivision of elements that touch a singular
  vertex, so negative weight powers are resolved down to scale 2**-depth,
* tensor Gauss rules in polar coordinates for the slivers between boundary
  chords and the true circular arc of sector domains -- straight-edged
  triangles alone lose O(h^2) of area, which is fatal for 1e-6 checks.
"""

from __future__ import annotations

import math

import numpy as np

# Dunavant's 6-point rule, exact for polynomials of degree 4.  Weights sum
# to one and multiply the triangle area.
_D4_A = 0.445948490915965
_D4_B = 0.091576213509771
_D4_WA = 0.223381589678011
_D4_WB = 0.109951743655322
DUNAVANT4_BARY = np.array([
    [1.0 - 2.0 * _D4_A, _D4_A, _D4_A],
    [_D4_A, 1.0 - 2.0 * _D4_A, _D4_A],
    [_D4_A, _D4_A, 1.0 - 2.0 * _D4_A],
    [1.0 - 2.0 * _D4_B, _D4_B, _D4_B],
    [_D4_B, 1.0 - 2.0 * _D4_B, _D4_B],
    [_D4_B, _D4_B, 1.0 - 2.0 * _D4_B],
])
DUNAVANT4_W = np.array([_D4_WA, _D4_WA, _D4_WA, _D4_WB, _D4_WB, _D4_WB])

_GAUSS_N = 4
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GAUSS_N)


def triangle_area(verts: np.ndarray) -> float:
    return 0.5 * abs(
        (verts[1, 0] - verts[0, 0]) * (verts[2, 1] - verts[0, 1])
        - (verts[2, 0] - verts[0, 0]) * (verts[1, 1] - verts[0, 1])
    )


def triangle_rule(verts: np.ndarray):
    """Quadrature points and weights on one triangle.

    Returns ``(pts, w)`` with ``pts`` of shape (6, 2) and weights summing to
    the triangle area.
    """
    pts = DUNAVANT4_BARY @ verts
    w = DUNAVANT4_W * triangle_area(verts)
    return pts, w


def triangle_rule_batch(all_verts: np.ndarray):
    """Vectorized rule over a stack of triangles, shape (T, 3, 2).

    Returns ``(pts, w)`` of shapes (T, 6, 2) and (T, 6).
    """
    pts = np.einsum("qv,tvx->tqx", DUNAVANT4_BARY, all_verts)
    a = 0.5 * np.abs(
        (all_verts[:, 1, 0] - all_verts[:, 0, 0]) * (all_verts[:, 2, 1] - all_verts[:, 0, 1])
        - (all_verts[:, 2, 0] - all_verts[:, 0, 0]) * (all_verts[:, 1, 1] - all_verts[:, 0, 1])
    )
    w = a[:, None] * DUNAVANT4_W[None, :]
    return pts, w


def split4(verts: np.ndarray) -> list:
    """Red refinement into four similar children via edge midpoints."""
    m01 = 0.5 * (verts[0] + verts[1])
    m12 = 0.5 * (verts[1] + verts[2])
    m20 = 0.5 * (verts[2] + verts[0])
    return [
        np.array([verts[0], m01, m20]),
        np.array([m01, verts[1], m12]),
        np.array([m20, m12, verts[2]]),
        np.array([m01, m12, m20]),
    ]


def geometric_pieces(verts: np.ndarray, corner: int, depth: int) -> list:
    """Dyadic radial decomposition of a triangle toward one of its vertices.

    Layer ``l`` is the annular strip between scales ``2**-(l+1)`` and
    ``2**-l`` (two triangles each); the innermost core triangle at scale
    ``2**-depth`` is kept as a single piece.
    """
    v = verts[corner]
    p = verts[(corner + 1) % 3]
    q = verts[(corner + 2) % 3]
    pieces = []
    for level in range(depth):
        s_out = 2.0 ** (-level)
        s_in = 2.0 ** (-level - 1)
        p_out, q_out = v + s_out * (p - v), v + s_out * (q - v)
        p_in, q_in = v + s_in * (p - v), v + s_in * (q - v)
        pieces.append(np.array([p_in, p_out, q_out]))
        pieces.append(np.array([p_in, q_out, q_in]))
    s = 2.0 ** (-depth)
    pieces.append(np.array([v, v + s * (p - v), v + s * (q - v)]))
    return pieces


def singular_pieces(verts: np.ndarray, singular_mask, depth: int) -> list:
    """Decompose a triangle according to which vertices are singular.

    One singular vertex: geometric layers toward it.  Two or three (coarse
    L-shape elements): one red split first, after which every child touches
    at most one singular vertex.
    """
    count = int(np.sum(singular_mask))
    if count == 0:
        return [verts]
    if count == 1:
        corner = int(np.argmax(singular_mask))
        return geometric_pieces(verts, corner, depth)
    pieces = []
    for child in split4(verts):
        mask = [
            any(np.allclose(child[i], verts[j]) and singular_mask[j] for j in range(3))
            for i in range(3)
        ]
        pieces.extend(singular_pieces(child, np.array(mask), depth))
    return pieces


def sliver_rule(radius: float, phi_a: float, phi_b: float):
    """Tensor Gauss rule on the sliver between a boundary chord and the arc.

    The chord joins the two arc points at angles ``phi_a < phi_b`` on the
    circle of the given radius; in polar coordinates the sliver is
    ``{phi in (phi_a, phi_b), r_chord(phi) < r < radius}`` with
    ``r_chord(phi) = radius*cos(dphi/2)/cos(phi - phi_mid)``.  Returns
    ``(pts, w)`` with weights carrying the polar Jacobian.
    """
    dphi = phi_b - phi_a
    mid = 0.5 * (phi_a + phi_b)
    c = radius * math.cos(0.5 * dphi)
    phi = mid + 0.5 * dphi * _GL_X
    wphi = 0.5 * dphi * _GL_W
    r_lo = c / np.cos(phi - mid)
    half = 0.5 * (radius - r_lo)
    centers = 0.5 * (radius + r_lo)
    r = centers[:, None] + half[:, None] * _GL_X[None, :]
    wr = half[:, None] * _GL_W[None, :]
    w = (wphi[:, None] * wr * r).ravel()
    pts = np.stack([(r * np.cos(phi[:, None])).ravel(),
                    (r * np.sin(phi[:, None])).ravel()], axis=1)
    return pts, w


def p1_gradient(verts: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Constant gradient of the P1 function with the given nodal values."""
    mat = np.array([
        [verts[1, 0] - verts[0, 0], verts[1, 1] - verts[0, 1]],
        [verts[2, 0] - verts[0, 0], verts[2, 1] - verts[0, 1]],
    ])
    rhs = np.array([vals[1] - vals[0], vals[2] - vals[0]])
    return np.linalg.solve(mat, rhs)


def p1_affine(verts: np.ndarray, vals: np.ndarray):
    """Return ``(grad, const)`` so the element field is grad.x + const.

    Valid on the whole plane, which is what lets boundary elements extend
    affinely across their chord into the arc sliver.
    """
    g = p1_gradient(verts, vals)
    c = vals[0] - g @ verts[0]
    return g, c
