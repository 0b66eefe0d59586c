"""Commuting moment-preserving interpolants on tetrahedra.

The three operators (scalar, tangential, normal) map onto constrained
subspaces of P_{p+3}, N_{p+3} and R_{p+3} whose members have selected
edge and face moments zeroed out.  Each interpolant is defined by a
square moment system; the module also provides the numerical
certificates used by the tests: residuals of the defining moments,
closure of the commuting diagram, and operator-norm sweeps over
dilated and sheared element shapes.

Everything is built directly from the four vertex coordinates, so one
code path serves the reference tetrahedron and the shape-family
sweeps.  Polynomial spans use centered, diameter-scaled coordinates to
keep Gram conditioning independent of the element size.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh, lu_factor, lu_solve, svd

from .polynomials import Poly, family_generator_groups, scalar_monomials, space_dimension
from .quadrature import simplex_rule

TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

REFERENCE_TET = np.array([[0.0, 0.0, 0.0],
                          [1.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0],
                          [0.0, 0.0, 1.0]])

# shapes used by the bound sweep: a mild shear and a flattened element
# with aspect ratio around ten
SHAPE_FAMILY = {
    "reference": REFERENCE_TET,
    "sheared": np.array([[0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0],
                         [0.6, 1.0, 0.0],
                         [0.5, 0.4, 1.0]]),
    "aspect10": np.array([[0.0, 0.0, 0.0],
                          [1.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0],
                          [0.3, 0.3, 0.1]]),
}

_RANK_TOL = 1e-9

_FAMILY = {"grad": "h1", "curl": "hcurl", "div": "hdiv"}


def _legendre01(k, s):
    """Shifted Legendre value P_k(2s-1) on the unit interval."""
    t = 2.0 * np.asarray(s) - 1.0
    if k == 0:
        return np.ones_like(t)
    pm, pc = np.ones_like(t), t
    for j in range(1, k):
        pm, pc = pc, ((2 * j + 1) * t * pc - j * pm) / (j + 1)
    return pc


class TetQuadrature:
    """Volume, face and edge rules on a tetrahedron given by vertices.

    Points are physical; local() maps them to centered coordinates
    scaled by the diameter, in which all polynomial spans are built.
    """

    def __init__(self, vertices, order):
        v = np.asarray(vertices, dtype=float)
        if v.shape != (4, 3):
            raise ValueError("need 4 tetrahedron vertices in 3D")
        self.vertices = v
        self.order = order
        self.centroid = v.mean(axis=0)
        self.h = max(np.linalg.norm(v[a] - v[b]) for a, b in TET_EDGES)
        J = (v[1:] - v[0]).T
        detJ = np.linalg.det(J)
        if abs(detJ) < 1e-14:
            raise ValueError("degenerate tetrahedron")
        vrule = simplex_rule(3, order)
        self.vol_points = v[0] + vrule.points @ J.T
        self.vol_weights = vrule.weights * abs(detJ)
        frule = simplex_rule(2, order)
        self.face_params = frule.points
        self.face_points = []
        self.face_weights = []
        self.face_normals = []
        for fi, (a, b, c) in enumerate(TET_FACES):
            e1, e2 = v[b] - v[a], v[c] - v[a]
            cr = np.cross(e1, e2)
            pts = v[a] + np.outer(frule.points[:, 0], e1) \
                + np.outer(frule.points[:, 1], e2)
            self.face_points.append(pts)
            self.face_weights.append(frule.weights * np.linalg.norm(cr))
            n = cr / np.linalg.norm(cr)
            if np.dot(n, v[a] - v[fi]) < 0:
                n = -n
            self.face_normals.append(n)
        erule = simplex_rule(1, order)
        self.edge_params = erule.points[:, 0]
        self.edge_points = []
        self.edge_weights = []
        self.edge_tangents = []
        for a, b in TET_EDGES:
            d = v[b] - v[a]
            self.edge_points.append(v[a] + np.outer(self.edge_params, d))
            self.edge_weights.append(erule.weights * np.linalg.norm(d))
            self.edge_tangents.append(d / np.linalg.norm(d))

    def local(self, points):
        return (points - self.centroid) / self.h


def _as_field(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


class _Span:
    """Orthonormal basis of a polynomial family over one tetrahedron.

    Generators come from the family groups in local coordinates; a
    volume-L2 Gram eigendecomposition filters dependencies and yields a
    basis whose dimension must match the family formula.
    """

    def __init__(self, family, degree, quad, deriv, check_rank=True):
        self.family = family
        self.degree = degree
        self.quad = quad
        self.deriv = deriv
        self.generators = [g for grp in family_generator_groups(family, degree, 3)
                           for g in grp]
        self._dgens = [self._dpoly(g) for g in self.generators]
        loc = quad.local(quad.vol_points)
        raw = np.stack([_as_field(g(loc)) for g in self.generators])
        w = quad.vol_weights
        X = (raw * np.sqrt(w)[None, :, None]).reshape(len(raw), -1)
        U, sv, _ = svd(X, full_matrices=False)
        expected = space_dimension(family, degree, 3)
        keep = sv > _RANK_TOL * sv[0]
        if check_rank and int(keep.sum()) != expected:
            raise RuntimeError(
                f"span rank {int(keep.sum())} for {family} degree {degree},"
                f" expected {expected}")
        self.coeff = U[:, keep] / sv[keep]
        self.dim = self.coeff.shape[1]
        self.vol_vals = np.einsum("gn,gpc->npc", self.coeff, raw)
        draw = np.stack([_as_field(g(loc)) for g in self._dgens])
        self.vol_deriv = np.einsum("gn,gpc->npc", self.coeff, draw) / quad.h
        self._face_vals = None
        self._face_deriv = None

    def _dpoly(self, g):
        if self.deriv == "grad":
            return g.grad()
        if self.deriv == "curl":
            return g.curl3d()
        return g.div()

    def eval_at(self, points):
        loc = self.quad.local(points)
        raw = np.stack([_as_field(g(loc)) for g in self.generators])
        return np.einsum("gn,gpc->npc", self.coeff, raw)

    def deriv_at(self, points):
        loc = self.quad.local(points)
        draw = np.stack([_as_field(g(loc)) for g in self._dgens])
        return np.einsum("gn,gpc->npc", self.coeff, draw) / self.quad.h

    def face_vals(self):
        if self._face_vals is None:
            self._face_vals = [self.eval_at(p) for p in self.quad.face_points]
        return self._face_vals

    def face_derivs(self):
        if self._face_deriv is None:
            self._face_deriv = [self.deriv_at(p) for p in self.quad.face_points]
        return self._face_deriv


class _BoundarySpace:
    """Functions on the tet surface stored by face-quadrature values.

    Scalar members have blocks (n, 4, nq); tangential vector members
    (n, 4, nq, 3).  The inner product is the weighted sum over faces.
    """

    def __init__(self, quad, blocks):
        self.quad = quad
        self.blocks = np.asarray(blocks, dtype=float)

    @property
    def dim(self):
        return self.blocks.shape[0]

    def inner(self, other=None):
        a = self.blocks
        b = a if other is None else other.blocks
        wf = np.stack(self.quad.face_weights)
        if a.ndim == 3:
            return np.einsum("ifq,jfq,fq->ij", a, b, wf)
        return np.einsum("ifqc,jfqc,fq->ij", a, b, wf)

    def moments(self, sample):
        """Integrals of every member against one sampled surface field."""
        wf = np.stack(self.quad.face_weights)
        v = np.stack(sample)
        if self.blocks.ndim == 3:
            return np.einsum("ifq,fq,fq->i", self.blocks, v, wf)
        return np.einsum("ifqc,fqc,fq->i", self.blocks, v, wf)

    def moment_matrix(self, fields):
        """Moments against a batch (m, 4, nq[, 3]) -> (n, m)."""
        wf = np.stack(self.quad.face_weights)
        f = np.asarray(fields)
        if self.blocks.ndim == 3:
            return np.einsum("ifq,jfq,fq->ij", self.blocks, f, wf)
        return np.einsum("ifqc,jfqc,fq->ij", self.blocks, f, wf)

    def orthonormalized(self, expected=None):
        wf = np.sqrt(np.stack(self.quad.face_weights))
        if self.blocks.ndim == 3:
            X = (self.blocks * wf[None]).reshape(self.dim, -1)
        else:
            X = (self.blocks * wf[None, :, :, None]).reshape(self.dim, -1)
        U, sv, _ = svd(X, full_matrices=False)
        keep = sv > _RANK_TOL * max(sv[0], 1e-30)
        if expected is not None and int(keep.sum()) != expected:
            raise RuntimeError(
                f"boundary space rank {int(keep.sum())}, expected {expected}")
        C = U[:, keep] / sv[keep]
        return _BoundarySpace(self.quad, np.einsum("gn,g...->n...", C, self.blocks))

    def complement_of(self, sub, expected=None):
        """Orthogonal complement of span(sub) inside this span."""
        onb = self.orthonormalized()
        S = onb.inner(sub)
        U, sv, _ = svd(S, full_matrices=True)
        rank = int((sv > _RANK_TOL * max(sv[0], 1e-30)).sum())
        C = U[:, rank:]
        if expected is not None and C.shape[1] != expected:
            raise RuntimeError(
                f"complement dimension {C.shape[1]}, expected {expected}")
        return _BoundarySpace(self.quad, np.einsum("gn,g...->n...", C, onb.blocks))


def _piecewise_boundary(quad, m):
    """Discontinuous per-face polynomials of degree <= m on the surface."""
    polys = [q for k in range(m + 1) for q in scalar_monomials(2, k)]
    nq = quad.face_params.shape[0]
    vals = np.stack([q(quad.face_params) for q in polys])
    blocks = []
    for fi in range(4):
        for i in range(len(polys)):
            mem = np.zeros((4, nq))
            mem[fi] = vals[i]
            blocks.append(mem)
    return _BoundarySpace(quad, np.stack(blocks))


def _face_constants(quad):
    nq = quad.face_params.shape[0]
    blocks = np.zeros((4, 4, nq))
    for fi in range(4):
        blocks[fi, fi] = 1.0
    return _BoundarySpace(quad, blocks)


def _scalar_volume_traces(quad, degree):
    """Surface values of the volume scalar monomials up to a degree."""
    polys = [q for k in range(degree + 1) for q in scalar_monomials(3, k)]
    out = []
    for q in polys:
        out.append(np.stack([q(quad.local(quad.face_points[fi]))
                             for fi in range(4)]))
    return _BoundarySpace(quad, np.stack(out))


def _trace_dim_scalar(degree):
    """Dimension of the surface trace of volume P_degree."""
    interior = space_dimension("h1", degree - 4, 3) if degree >= 4 else 0
    return space_dimension("h1", degree, 3) - interior


def _trace_dim_tangential(degree):
    """Dimension of the tangential surface trace of P_degree^3."""
    if degree <= 2:
        kernel = 0
    elif degree == 3:
        # the four face-bubble normal fields b_f n_f
        kernel = 4
    else:
        raise ValueError("tangential trace dimension tabulated up to degree 3")
    return 3 * space_dimension("h1", degree, 3) - kernel


def _tangential_trace_space(quad, degree):
    """Tangential traces of volume vector polynomials, orthonormalized."""
    polys = [q for k in range(degree + 1) for q in scalar_monomials(3, k)]
    nq = quad.face_params.shape[0]
    blocks = []
    fvals = [np.stack([q(quad.local(quad.face_points[fi])) for fi in range(4)])
             for q in polys]
    for gi in range(len(polys)):
        for c in range(3):
            mem = np.zeros((4, nq, 3))
            for fi in range(4):
                n = quad.face_normals[fi]
                e = np.zeros(3)
                e[c] = 1.0
                mem[fi] = fvals[gi][fi][:, None] * (e - e. dot(n) * n)[None, :]
            blocks.append(mem)
    return _BoundarySpace(quad, np.stack(blocks)).orthonormalized(
        _trace_dim_tangential(degree))


def _scalar_test_vals(loc_points, degree):
    """Monomial scalar span values, shape (m, np, 1)."""
    polys = [q for k in range(degree + 1) for q in scalar_monomials(3, k)]
    return np.stack([q(loc_points)[:, None] for q in polys])


def _vector_test_vals(loc_points, degree):
    polys = [q for k in range(degree + 1) for q in scalar_monomials(3, k)]
    vals = np.stack([q(loc_points) for q in polys])
    m, npts = vals.shape
    out = np.zeros((3 * m, npts, 3))
    for c in range(3):
        out[c * m:(c + 1) * m, :, c] = vals
    return out


class FortinSystem:
    """One interpolant: constrained subspace plus its square moment system."""

    def __init__(self, kind, p, vertices=None, order=None):
        if kind not in ("grad", "curl", "div"):
            raise ValueError(f"unknown kind {kind!r}")
        if p < 1:
            raise ValueError("p must be >= 1")
        self.kind = kind
        self.p = p
        if vertices is None:
            vertices = REFERENCE_TET
        if order is None:
            order = 2 * (p + 6)
        self.quad = TetQuadrature(vertices, order)
        self.dims = {}
        self.span = _Span(_FAMILY[kind], p + 3, self.quad,
                          deriv=kind)
        self._build_constraints()
        self._build_moments()

    # -- constrained subspace ----------------------------------------------

    def _edge_rows(self, edge_deg, tangential):
        """Edge-trace moments against shifted Legendre polynomials."""
        quad = self.quad
        rows = []
        for ei in range(6):
            vals = self.span.eval_at(quad.edge_points[ei])
            if tangential:
                tr = vals @ quad.edge_tangents[ei]
            else:
                tr = vals[:, :, 0]
            for k in range(edge_deg + 1):
                L = _legendre01(k, quad.edge_params)
                rows.append(np.einsum("nq,q,q->n", tr, L, quad.edge_weights[ei]))
        return rows

    def _build_constraints(self):
        quad, p, span = self.quad, self.p, self.span
        wf = np.stack(quad.face_weights)
        if self.kind == "grad":
            rows = self._edge_rows(p + 3, tangential=False)
        elif self.kind == "div":
            pw = _piecewise_boundary(quad, p + 2)
            ctrace = _scalar_volume_traces(quad, p + 2).orthonormalized(
                _trace_dim_scalar(p + 2))
            fc = _face_constants(quad)
            joined = _BoundarySpace(quad, np.concatenate(
                [ctrace.blocks, fc.blocks]))
            perp = pw.complement_of(joined.orthonormalized(),
                                    expected=6 * p + 11)
            # Flux constraints use the trace-and-constant complement plus
            # the mean-free per-face constants, not the plain complement of
            # the traces.  Both choices have the same dimension, but only
            # this one is annihilated by boundary fluxes of curls (Stokes
            # around each face), which the curl/div compatibility check
            # downstream depends on.
            ones = _BoundarySpace(quad, np.ones((1, 4,
                                                 quad.face_params.shape[0])))
            meanfree = fc.complement_of(ones, expected=3)
            fluxspace = np.concatenate([perp.blocks, meanfree.blocks])
            self.dims["P_perp"] = fluxspace.shape[0]
            flux = np.stack([span.face_vals()[fi] @ quad.face_normals[fi]
                             for fi in range(4)], axis=1)  # (n, 4, nq)
            rows = list(np.einsum("mfq,nfq,fq->mn", fluxspace, flux, wf))
        else:
            rows = self._edge_rows(p + 2, tangential=True)
            pw = _piecewise_boundary(quad, p + 2)
            ctrace = _scalar_volume_traces(quad, p + 2).orthonormalized(
                _trace_dim_scalar(p + 2))
            joined = _BoundarySpace(quad, np.concatenate(
                [ctrace.blocks, _face_constants(quad).blocks]))
            perp = pw.complement_of(joined.orthonormalized(), expected=6 * p + 11)
            self.dims["P0_perp"] = perp.dim
            nflux = np.stack([span.face_derivs()[fi] @ quad.face_normals[fi]
                              for fi in range(4)], axis=1)
            rows.extend(np.einsum("mfq,nfq,fq->mn", perp.blocks, nflux, wf))
            # the one remaining constraint: tangential moment against the
            # tangential coordinate field (local coordinates)
            row = np.zeros(span.dim)
            fvals = span.face_vals()
            for fi in range(4):
                n = quad.face_normals[fi]
                xt = quad.local(quad.face_points[fi])
                xt = xt - (xt @ n)[:, None] * n
                Et = fvals[fi] - (fvals[fi] @ n)[..., None] * n
                row += np.einsum("nqc,qc,q->n", Et, xt, quad.face_weights[fi])
            rows.append(row)
        C = np.stack(rows)
        U, sv, Vt = svd(C, full_matrices=True)
        rank = int((sv > _RANK_TOL * max(sv[0], 1e-30)).sum())
        self.bcoeff = Vt[rank:].T  # span coefficients of the B basis
        self.bdim = self.bcoeff.shape[1]
        self.dims["B"] = self.bdim

    # -- square moment system ------------------------------------------------

    def _build_moments(self):
        quad, p = self.quad, self.p
        loc = quad.local(quad.vol_points)
        if self.kind == "grad":
            self._vol_test = _scalar_test_vals(loc, p - 1)
            self._face_test = _piecewise_boundary(quad, p).orthonormalized()
            self._face_mode = "value"
        elif self.kind == "curl":
            self._vol_test = _vector_test_vals(loc, p)
            self._face_test = _tangential_trace_space(quad, p + 1)
            self._face_mode = "nxE"
        else:
            self._vol_test = _vector_test_vals(loc, p + 1)
            self._face_test = _scalar_volume_traces(quad, p + 2).orthonormalized(
                _trace_dim_scalar(p + 2))
            self._face_mode = "ndot"
        Bv = np.einsum("gb,gpc->bpc", self.bcoeff, self.span.vol_vals)
        Bf = [np.einsum("gb,gpc->bpc", self.bcoeff, fv)
              for fv in self.span.face_vals()]
        vol_rows = np.einsum("mpc,npc,p->mn", self._vol_test, Bv, quad.vol_weights)
        face_rows = self._face_test.moment_matrix(
            np.stack([self._surface_sample(Bf, j) for j in range(self.bdim)], axis=0))
        M = np.concatenate([vol_rows, face_rows])
        if M.shape[0] != M.shape[1]:
            raise RuntimeError(
                f"moment system is {M.shape[0]}x{M.shape[1]}, expected square")
        # volume and facet rows carry different physical scales (h^{3/2}
        # against h^{-1/2}), so equilibrate before judging the rank
        self._row_scale = 1.0 / np.maximum(np.linalg.norm(M, axis=1), 1e-300)
        Ms = M * self._row_scale[:, None]
        sv = svd(Ms, compute_uv=False)
        if sv[-1] <= _RANK_TOL * sv[0]:
            rank = int((sv > _RANK_TOL * sv[0]).sum())
            raise RuntimeError(
                f"moment system numerically singular (rank {rank} of {M.shape[0]})")
        self.M = M
        self._lu = lu_factor(Ms)

    def _surface_sample(self, face_vals, j):
        """Surface field of basis function j in the face-test pairing."""
        quad = self.quad
        out = []
        for fi in range(4):
            v = face_vals[fi][j]
            if self._face_mode == "value":
                out.append(v[:, 0])
            elif self._face_mode == "ndot":
                out.append(v @ quad.face_normals[fi])
            else:
                out.append(np.cross(quad.face_normals[fi], v))
        return np.stack(out)

    def _input_surface(self, fn, mean=0.0):
        quad = self.quad
        out = []
        for fi in range(4):
            fv = _as_field(fn(quad.face_points[fi])) - mean
            if self._face_mode == "value":
                out.append(fv[:, 0])
            elif self._face_mode == "ndot":
                out.append(fv @ quad.face_normals[fi])
            else:
                out.append(np.cross(quad.face_normals[fi], fv))
        return np.stack(out)

    def _rhs(self, fn):
        quad = self.quad
        mean = 0.0
        vol_vals = _as_field(fn(quad.vol_points))
        if self.kind == "grad":
            area = sum(w.sum() for w in quad.face_weights)
            mean = sum(np.dot(_as_field(fn(quad.face_points[fi]))[:, 0],
                              quad.face_weights[fi]) for fi in range(4)) / area
            vol_vals = vol_vals - mean
        r_vol = np.einsum("mpc,pc,p->m", self._vol_test, vol_vals,
                          quad.vol_weights)
        r_face = self._face_test.moments(self._input_surface(fn, mean))
        return np.concatenate([r_vol, r_face]), mean

    def apply(self, fn):
        """Interpolate a callable (points -> values)."""
        rhs, mean = self._rhs(fn)
        return FortinInterpolant(self, lu_solve(self._lu, rhs * self._row_scale),
                                 mean)

    def moment_residual(self, fn):
        """Max relative residual of the defining moments for one input."""
        quad = self.quad
        interp = self.apply(fn)
        dvol = interp.values(quad.vol_points) - _as_field(fn(quad.vol_points))
        r_vol = np.einsum("mpc,pc,p->m", self._vol_test, dvol, quad.vol_weights)
        dsurf = []
        for fi in range(4):
            d = interp.values(quad.face_points[fi]) \
                - _as_field(fn(quad.face_points[fi]))
            if self._face_mode == "value":
                dsurf.append(d[:, 0])
            elif self._face_mode == "ndot":
                dsurf.append(d @ quad.face_normals[fi])
            else:
                dsurf.append(np.cross(quad.face_normals[fi], d))
        r_face = self._face_test.moments(np.stack(dsurf))
        fvol = _as_field(fn(quad.vol_points))
        scale = max(np.sqrt(np.einsum("pc,pc,p->", fvol, fvol, quad.vol_weights)),
                    1e-30)
        worst = max(np.abs(r_vol).max(initial=0.0), np.abs(r_face).max(initial=0.0))
        return float(worst / scale)


class FortinInterpolant:
    """Image of one input: B-space coefficients plus the scalar-mode mean."""

    def __init__(self, system, coeff, mean=0.0):
        self.system = system
        self.coeff = coeff
        self.mean = mean

    def values(self, points):
        raw = self.system.span.eval_at(points)
        out = np.einsum("gb,b,gpc->pc", self.system.bcoeff, self.coeff, raw)
        if self.system.kind == "grad":
            out = out + self.mean
        return out

    def deriv_values(self, points):
        draw = self.system.span.deriv_at(points)
        return np.einsum("gb,b,gpc->pc", self.system.bcoeff, self.coeff, draw)


class PolySample:
    """Random linear combination of scalar monomials, point-callable.

    Scalar samples return (np,), vector samples (np, 3).  Derivatives
    are exact through the monomial calculus.
    """

    def __init__(self, degree, coefs):
        self.polys = [q for k in range(degree + 1) for q in scalar_monomials(3, k)]
        self.coefs = np.asarray(coefs, dtype=float)
        if self.coefs.shape[0] != len(self.polys):
            raise ValueError("coefficient count mismatch")

    @property
    def scalar(self):
        return self.coefs.ndim == 1

    def __call__(self, points):
        vals = np.stack([q(points) for q in self.polys])
        if self.scalar:
            return np.einsum("g,gp->p", self.coefs, vals)
        return np.einsum("gc,gp->pc", self.coefs, vals)

    def _vector_polys(self):
        out = []
        for c in range(3):
            for q in self.polys:
                vec = Poly(3, 3)
                for (alpha, _), coef in q.terms.items():
                    vec._add_term(alpha, c, coef)
                out.append(vec)
        return out

    def grad(self):
        polys = [q.grad() for q in self.polys]
        return _DerivedSample(polys, self.coefs)

    def curl(self):
        flat = np.concatenate([self.coefs[:, c] for c in range(3)])
        return _DerivedSample([v.curl3d() for v in self._vector_polys()], flat)

    def div(self):
        flat = np.concatenate([self.coefs[:, c] for c in range(3)])
        return _DerivedSample([v.div() for v in self._vector_polys()], flat,
                              scalar=True)


class _DerivedSample:
    def __init__(self, polys, coefs, scalar=False):
        self.polys = polys
        self.coefs = coefs
        self._scalar = scalar

    def __call__(self, points):
        vals = np.stack([_as_field(q(points)) for q in self.polys])
        out = np.einsum("g,gpc->pc", self.coefs, vals)
        return out[:, 0] if self._scalar else out


def default_samples(kind, p, seed=0, count=6, degree=None):
    """Seeded random polynomial inputs for the verification routines."""
    rng = np.random.default_rng(seed)
    if degree is None:
        degree = p + 4
    ncoef = space_dimension("h1", degree, 3)
    out = []
    for _ in range(count):
        if kind == "grad":
            out.append(PolySample(degree, rng.standard_normal(ncoef)))
        else:
            out.append(PolySample(degree, rng.standard_normal((ncoef, 3))))
    return out


def fortin_build(kind, p, vertices=None):
    return FortinSystem(kind, p, vertices=vertices)


def fortin_moments(kind, p, samples=None, vertices=None, system=None):
    """Largest relative moment residual over the sample inputs."""
    sys_ = system if system is not None else fortin_build(kind, p, vertices)
    if samples is None:
        samples = default_samples(kind, p)
    return max(sys_.moment_residual(s) for s in samples)


def fortin_commuting(p, samples=None, vertices=None, systems=None):
    """Max relative residual of the three commuting identities.

    grad of the scalar interpolant matches the tangential interpolant
    of the gradient; curl of the tangential matches the normal
    interpolant of the curl; div of the normal matches the L2
    projection of the divergence onto P_{p+2}.
    """
    if systems is None:
        systems = {k: fortin_build(k, p, vertices) for k in ("grad", "curl", "div")}
    sg, sc, sd = systems["grad"], systems["curl"], systems["div"]
    quad = sg.quad
    w = quad.vol_weights
    if samples is None:
        samples = {"scalar": default_samples("grad", p, seed=1, count=4),
                   "vector": default_samples("curl", p, seed=2, count=4)}
    loc = quad.local(quad.vol_points)
    proj_basis = _scalar_test_vals(loc, p + 2)[:, :, 0]
    Gp = np.einsum("mp,np,p->mn", proj_basis, proj_basis, w)
    Gp_lu = lu_factor(Gp)

    def l2(a):
        return np.sqrt(np.einsum("pc,pc,p->", a, a, w))

    worst = 0.0
    for v in samples["scalar"]:
        gv = v.grad()
        lhs = sg.apply(v).deriv_values(quad.vol_points)
        rhs = sc.apply(gv).values(quad.vol_points)
        den = l2(_as_field(gv(quad.vol_points)))
        worst = max(worst, l2(lhs - rhs) / max(den, 1e-30))
    for E in samples["vector"]:
        cE = E.curl()
        lhs = sc.apply(E).deriv_values(quad.vol_points)
        rhs = sd.apply(cE).values(quad.vol_points)
        den = l2(_as_field(cE(quad.vol_points)))
        worst = max(worst, l2(lhs - rhs) / max(den, 1e-30))
        dE = E.div()
        lhs2 = sd.apply(E).deriv_values(quad.vol_points)[:, 0]
        dvals = dE(quad.vol_points)
        pc = lu_solve(Gp_lu, np.einsum("mp,p,p->m", proj_basis, dvals, w))
        rhs2 = np.einsum("m,mp->p", pc, proj_basis)
        den2 = max(np.sqrt(np.einsum("p,p,p->", dvals, dvals, w)), 1e-30)
        num2 = np.sqrt(np.einsum("p,p,p->", lhs2 - rhs2, lhs2 - rhs2, w))
        worst = max(worst, num2 / den2)
    return float(worst)


def fortin_bound_sweep(p, kinds=("grad", "curl", "div"),
                       lambdas=(1e-2, 1e-1, 1.0, 10.0), shapes=None):
    """Measured operator norms over dilated and sheared tets.

    The weighted norm scales the L2 part by 1/h, which makes the
    constant dilation invariant; the plain graph-norm constant is
    recorded alongside for monitoring.
    """
    if shapes is None:
        shapes = SHAPE_FAMILY
    records = []
    for kind in kinds:
        for name, verts in shapes.items():
            for lam in lambdas:
                sys_ = fortin_build(kind, p, vertices=np.asarray(verts) * lam)
                quad = sys_.quad
                w = quad.vol_weights
                sample = _Span(_FAMILY[kind], p + 4, quad, deriv=kind,
                               check_rank=False)
                Pv = np.zeros_like(
                    np.broadcast_to(sample.vol_vals[:1], (sample.dim,)
                                    + sample.vol_vals.shape[1:])).copy()
                Pd = np.zeros((sample.dim,) + sample.vol_deriv.shape[1:])
                for i in range(sample.dim):
                    interp = sys_.apply(_SpanMember(sample, i))
                    Pv[i] = interp.values(quad.vol_points)
                    Pd[i] = interp.deriv_values(quad.vol_points)
                L2i = np.einsum("ipc,jpc,p->ij", Pv, Pv, w)
                Di = np.einsum("ipc,jpc,p->ij", Pd, Pd, w)
                L2s = np.einsum("ipc,jpc,p->ij", sample.vol_vals,
                                sample.vol_vals, w)
                Ds = np.einsum("ipc,jpc,p->ij", sample.vol_deriv,
                               sample.vol_deriv, w)
                h = quad.h
                cw = np.sqrt(max(eigh(L2i / h ** 2 + Di, L2s / h ** 2 + Ds,
                                      eigvals_only=True)[-1], 0.0))
                cf = np.sqrt(max(eigh(L2i + Di, L2s + Ds,
                                      eigvals_only=True)[-1], 0.0))
                records.append({"kind": kind, "shape": name, "lam": float(lam),
                                "weighted": float(cw), "full": float(cf)})
    return records


class _SpanMember:
    """Adapter making one orthonormal span member point-callable."""

    def __init__(self, span, index):
        self.span = span
        self.index = index

    def __call__(self, points):
        vals = self.span.eval_at(points)[self.index]
        return vals[:, 0] if self.span.family in ("h1", "l2") else vals


def perp_dimensions(p):
    """Dimensions (P0_perp, P_perp) of the surface complement spaces."""
    full = 4 * space_dimension("h1", p + 2, 2)
    ctrace = _trace_dim_scalar(p + 2)
    return full - ctrace - 3, full - ctrace
