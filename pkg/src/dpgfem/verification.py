"""Numerical certification of the analytical building blocks.

Four suites: trace duality gaps on the reference tetrahedron,
interface annihilation by conforming test functions, dense discrete
inf-sup surveys over the formulation catalog, and the quantitative
stability bound that the broken test space inherits from its
conforming subspace.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, lstsq, solve, \
    solve_triangular, svd

from .formulations import MAXWELL_IDS, make_formulation
from .fortin import REFERENCE_TET, TetQuadrature, _BoundarySpace, _Span, \
    default_samples
from .reference import conforming_basis
from .spaces import ElementTables, conforming_map
from .system import Discretization

DCR_IDS = ("primal_dcr", "ultraweak_dcr", "mixed_dcr", "dual_mixed_dcr",
           "strong_dcr")

_PAIRINGS = {
    "grad/div": ("h1", "hdiv"),
    "div/grad": ("hdiv", "h1"),
    "curlT/curlD": ("hcurl", "hcurl"),
    "curlD/curlT": ("hcurl", "hcurl"),
}
_DERIV = {"h1": "grad", "hdiv": "div", "hcurl": "curl"}


# -- trace samples -------------------------------------------------------


class ScalarTrace:
    """Boundary values of a scalar field given as a point callable."""

    def __init__(self, fn):
        self.fn = fn

    def values(self, quad):
        out = []
        for fi in range(4):
            v = np.asarray(self.fn(quad.face_points[fi]), dtype=float)
            out.append(v[:, 0] if v.ndim == 2 else v)
        return np.stack(out)


class NormalTrace:
    """n . tau of a vector field, one scalar block per face."""

    def __init__(self, fn):
        self.fn = fn

    def values(self, quad):
        return np.stack([np.asarray(self.fn(quad.face_points[fi]))
                         @ quad.face_normals[fi] for fi in range(4)])


class TangentialTrace:
    """Tangential boundary data of a vector field.

    flavor 'D' is the rotated trace n x E, flavor 'T' the flat
    tangential component (n x E) x n.
    """

    def __init__(self, fn, flavor):
        if flavor not in ("T", "D"):
            raise ValueError("flavor must be 'T' or 'D'")
        self.fn = fn
        self.flavor = flavor

    def values(self, quad):
        out = []
        for fi in range(4):
            n = quad.face_normals[fi]
            v = np.asarray(self.fn(quad.face_points[fi]), dtype=float)
            if self.flavor == "D":
                out.append(np.cross(n, v))
            else:
                out.append(v - (v @ n)[:, None] * n)
        return np.stack(out)


class ConstantNormalTrace:
    """The same constant on every face, e.g. sighat_n = 1."""

    def __init__(self, value=1.0):
        self.value = float(value)

    def values(self, quad):
        nq = quad.face_params.shape[0]
        return np.full((4, nq), self.value)


# -- duality gap ---------------------------------------------------------


class _DualityWorkspace:
    """Cached spans, graph Grams and trace matrices for one (pairing, q)."""

    def __init__(self, pairing, q):
        ext_family, dual_family = _PAIRINGS[pairing]
        self.pairing = pairing
        self.quad = TetQuadrature(REFERENCE_TET, 2 * (q + 2))
        self.ext = _Span(ext_family, q, self.quad, deriv=_DERIV[ext_family])
        if dual_family == ext_family:
            self.dual = self.ext
        else:
            self.dual = _Span(dual_family, q, self.quad,
                              deriv=_DERIV[dual_family])
        w = self.quad.vol_weights
        self.G_ext = np.einsum("ipc,jpc,p->ij", self.ext.vol_vals,
                               self.ext.vol_vals, w) \
            + np.einsum("ipc,jpc,p->ij", self.ext.vol_deriv,
                        self.ext.vol_deriv, w)
        G_dual = np.einsum("ipc,jpc,p->ij", self.dual.vol_vals,
                           self.dual.vol_vals, w) \
            + np.einsum("ipc,jpc,p->ij", self.dual.vol_deriv,
                        self.dual.vol_deriv, w)
        self.dual_chol = cho_factor(G_dual)
        self.ext_trace = self._surface(self.ext, self._ext_mode())
        self.dual_trace = self._surface(self.dual, self._dual_mode())
        onb = _BoundarySpace(self.quad, self.ext_trace).orthonormalized()
        self.trace_onb = onb
        self.C = onb.moment_matrix(self.ext_trace)

    def _ext_mode(self):
        return {"grad/div": "value", "div/grad": "ndot",
                "curlT/curlD": "flat", "curlD/curlT": "nx"}[self.pairing]

    def _dual_mode(self):
        # the dual field enters the pairing through the complementary trace
        return {"grad/div": "ndot", "div/grad": "value",
                "curlT/curlD": "nx", "curlD/curlT": "flat"}[self.pairing]

    def _surface(self, span, mode):
        quad = self.quad
        fv = span.face_vals()
        out = []
        for fi in range(4):
            n = quad.face_normals[fi]
            v = fv[fi]
            if mode == "value":
                out.append(v[:, :, 0])
            elif mode == "ndot":
                out.append(v @ n)
            elif mode == "nx":
                out.append(np.cross(n, v))
            else:
                out.append(v - (v @ n)[..., None] * n)
        return np.stack(out, axis=1)  # (nspan, 4, nq[, 3])

    def surface_norm2(self, t):
        wf = np.stack(self.quad.face_weights)
        if t.ndim == 2:
            return float(np.einsum("fq,fq,fq->", t, t, wf))
        return float(np.einsum("fqc,fqc,fq->", t, t, wf))

    def pair_with_dual(self, t):
        wf = np.stack(self.quad.face_weights)
        if t.ndim == 2:
            return np.einsum("nfq,fq,fq->n", self.dual_trace, t, wf)
        return np.einsum("nfqc,fqc,fq->n", self.dual_trace, t, wf)


_WORKSPACES = {}


def _workspace(pairing, q):
    key = (pairing, q)
    if key not in _WORKSPACES:
        _WORKSPACES[key] = _DualityWorkspace(pairing, q)
    return _WORKSPACES[key]


def duality_norms(pairing, q, trace):
    """(quotient, dual) norms of one polynomial trace at degree q."""
    if pairing not in _PAIRINGS:
        raise ValueError(f"unknown pairing {pairing!r}")
    ws = _workspace(pairing, q)
    t = trace.values(ws.quad) if hasattr(trace, "values") else \
        np.asarray(trace, dtype=float)
    tn2 = ws.surface_norm2(t)
    if tn2 < 1e-28:
        return 0.0, 0.0
    b = ws.pair_with_dual(t)
    dual = float(np.sqrt(max(b @ cho_solve(ws.dual_chol, b), 0.0)))
    r = ws.trace_onb.moments(t)
    if tn2 - r @ r > 1e-10 * tn2:
        raise RuntimeError(
            f"trace is not attainable in the degree-{q} extension space "
            f"(unmatched surface energy {tn2 - r @ r:.3e})")
    x0 = lstsq(ws.C, r)[0]
    _, sv, Vt = svd(ws.C)
    rank = int((sv > 1e-12 * sv[0]).sum())
    N = Vt[rank:].T
    z = solve(N.T @ ws.G_ext @ N, -N.T @ (ws.G_ext @ x0), assume_a="pos")
    x = x0 + N @ z
    quot = float(np.sqrt(max(x @ ws.G_ext @ x, 0.0)))
    return quot, dual


def duality_gap(pairing, q, trace):
    """|quotient/dual - 1| for one trace; 0 when the trace vanishes."""
    quot, dual = duality_norms(pairing, q, trace)
    if dual == 0.0 and quot == 0.0:
        return 0.0
    return abs(quot / dual - 1.0)


def duality_traces(pairing, degree, seed=0, count=5):
    """Fixed random polynomial traces compatible with one pairing."""
    kind = "grad" if pairing == "grad/div" else "curl"
    fields = default_samples(kind, 1, seed=seed, count=count, degree=degree)
    if pairing == "grad/div":
        return [ScalarTrace(f) for f in fields]
    if pairing == "div/grad":
        return [NormalTrace(f) for f in fields]
    flavor = "T" if pairing.startswith("curlT") else "D"
    return [TangentialTrace(f, flavor) for f in fields]


def duality_suite(p=1, seed=0, count=5, qs=None):
    """Gap sweep for all four pairings; returns per-pairing gap tables."""
    if qs is None:
        qs = (p + 2, p + 4, p + 6)
    out = {}
    for pairing in _PAIRINGS:
        traces = duality_traces(pairing, min(qs) - 2, seed=seed, count=count)
        out[pairing] = np.array([[duality_gap(pairing, q, t) for q in qs]
                                 for t in traces])
    return out


# -- dense mesh-level systems ---------------------------------------------


def _dense_system(disc):
    """Dense broken-test operator, test Gram and free-trial-dof data."""
    mesh = disc.mesh
    nt = disc.ntest_local
    ny = nt * mesh.ncells
    B = np.zeros((ny, disc.ndof), dtype=disc.form.dtype)
    Gy = np.zeros((ny, ny), dtype=disc.form.dtype)
    for ci in range(mesh.ncells):
        G, Bk, _ = disc.element_system(ci)
        dofs, _ = disc.cell_columns(ci)
        rows = np.arange(ci * nt, (ci + 1) * nt)
        B[np.ix_(rows, dofs)] += Bk
        Gy[np.ix_(rows, rows)] = G
    free = np.where(~disc.constrained_dofs())[0]
    return B, Gy, free


def _gen_singular_values(B, Gy, Gx):
    """Singular values of B between the test and trial norm Grams."""
    try:
        Ly = cholesky(Gy, lower=True)
        Lx = cholesky(Gx, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("singular norm Gram") from exc
    T = solve_triangular(Ly, B, lower=True)
    T = solve_triangular(Lx, T.conj().T, lower=True).conj().T
    return svd(T, compute_uv=False)


def conforming_test_embedding(disc):
    """Broken-test coefficients of a basis of the conforming subspace.

    Columns follow the formulation's per-slot conforming rules: slots
    with a (family, zero_boundary) rule contribute a globally matched
    basis expanded cell by cell in the broken test functions; slots
    without a rule are L2-type and contribute their full broken block.
    """
    mesh = disc.mesh
    nt = disc.ntest_local
    ny = nt * mesh.ncells
    pieces = []
    for s, rule in zip(disc.form.test_slots, disc.form.y0_rule):
        off = disc.test_offset(s.name)
        tab_b = disc._tables[s.name]
        nb = tab_b.values(0).shape[0]
        if rule is None:
            C = np.zeros((ny, nb * mesh.ncells))
            for ci in range(mesh.ncells):
                r0 = ci * nt + off
                C[r0:r0 + nb, ci * nb:(ci + 1) * nb] = np.eye(nb)
            pieces.append(C)
            continue
        family, zero_b = rule
        basis_c = conforming_basis(family, s.degree, mesh.dim)
        cmap = conforming_map(mesh, basis_c, disc.geo)
        tab_c = ElementTables(mesh, basis_c, disc.geo, disc.volume_order,
                              disc.facet_order)
        C = np.zeros((ny, cmap.ndofs))
        for ci in range(mesh.ncells):
            Vb = tab_b.values(ci)
            Vc = tab_c.values(ci)
            w = tab_b.volume_weights(ci)
            M = np.einsum("ipc,jpc,p->ij", Vb, Vb, w)
            R = np.einsum("ipc,jpc,p->ij", Vb, Vc, w)
            T = solve(M, R, assume_a="pos")
            r0 = ci * nt + off
            C[r0:r0 + nb, cmap.cell_dofs[ci]] += \
                T * cmap.cell_factors[ci][None, :]
        if zero_b:
            C = C[:, ~cmap.boundary]
        pieces.append(C)
    return np.concatenate(pieces, axis=1)


# -- interface annihilation -----------------------------------------------


@dataclass
class AnnihilationResult:
    formulation: str
    conforming_max: float
    witness: float

    @property
    def passed(self):
        return self.conforming_max < 1e-12 and self.witness > 1e-3


def annihilation_check(formulation, mesh, p, delta=3, mode="guaranteed"):
    """Pair every interface basis function with conforming test functions.

    Conforming pairings must vanish; restricting one conforming
    function to a single cell must produce a visible pairing, showing
    the form detects nonconformity.  Pairings are normalized by the
    broken Riesz norm of the functional and the test norm.
    """
    form = formulation if not isinstance(formulation, str) else \
        make_formulation(formulation, p=p, delta=delta, mode=mode)
    disc = Discretization(form, mesh)
    if not form.interface_slots:
        raise ValueError("formulation has no interface unknowns")
    B, Gy, _ = _dense_system(disc)
    Bhat = B[:, disc.ndof_field:]
    Gch = cho_factor(Gy)
    riesz = cho_solve(Gch, Bhat)
    dualnorm = np.sqrt(np.real(np.einsum("yj,yj->j", Bhat.conj(), riesz)))
    dualnorm = np.maximum(dualnorm, 1e-300)
    C = conforming_test_embedding(disc).astype(form.dtype)
    ynorm = np.sqrt(np.real(np.einsum("yg,yg->g", C.conj(), Gy @ C)))
    ynorm = np.maximum(ynorm, 1e-300)
    P = np.abs(C.conj().T @ Bhat)
    conforming_max = float((P / ynorm[:, None] / dualnorm[None, :]).max())

    nt = disc.ntest_local
    witness = 0.0
    for g in range(C.shape[1]):
        cells = np.unique(np.nonzero(C[:, g])[0] // nt)
        if cells.size < 2:
            continue
        for ci in cells:
            y = np.zeros_like(C[:, g])
            rows = slice(ci * nt, (ci + 1) * nt)
            y[rows] = C[rows, g]
            yn = np.sqrt(np.real(y.conj() @ (Gy @ y)))
            if yn < 1e-14:
                continue
            vals = np.abs(y.conj() @ Bhat) / (yn * dualnorm)
            witness = max(witness, float(vals.max()))
    return AnnihilationResult(form.id, conforming_max, witness)


# -- inf-sup surveys -------------------------------------------------------


@dataclass
class SurveyReport:
    formulation: str
    mesh: str
    p: int
    infsup: float
    c0: float = None
    chat: float = None
    b0norm: float = None
    c1_formula: float = None


def _mesh_tag(mesh):
    return f"{mesh.ncells}-cell-{mesh.dim}d"


def infsup_survey(formulations, mesh, p, delta=3, mode="guaranteed",
                  params=None):
    """Discrete inf-sup constants over free trial dofs and broken tests."""
    if mesh.ncells > 200:
        raise ValueError("survey meshes are limited to 200 cells")
    reports = []
    for fid in formulations:
        form = make_formulation(fid, p=p, delta=delta, mode=mode,
                                params=params)
        disc = Discretization(form, mesh)
        B, Gy, free = _dense_system(disc)
        Gx = disc.xnorm_solver().dense()[np.ix_(free, free)]
        sv = _gen_singular_values(B[:, free], Gy, Gx)
        reports.append(SurveyReport(fid, _mesh_tag(mesh), p,
                                    float(sv[-1])))
    return reports


BrokenStability = namedtuple(
    "BrokenStability",
    "c1_discrete c1_formula passed c0 chat b0norm")


def broken_stability_bound(formulation, mesh, p, delta=3, mode="guaranteed",
                           conforming_only=False):
    """Check the inherited stability bound of the broken formulation.

    c0 is the inf-sup constant of the field form over the conforming
    test subspace, chat the interface inf-sup over the full broken
    space, and the bound combines them through
    1/c1^2 = 1/c0^2 + (1/chat^2) (|b0|/c0 + 1)^2.
    With conforming_only=True the test space is restricted to the
    conforming subspace and the interface unknowns are dropped, in
    which case the measured constant is c0 itself.
    """
    form = formulation if not isinstance(formulation, str) else \
        make_formulation(formulation, p=p, delta=delta, mode=mode)
    disc = Discretization(form, mesh)
    B, Gy, free = _dense_system(disc)
    Gx = disc.xnorm_solver().dense()
    free_f = free[free < disc.ndof_field]
    C = conforming_test_embedding(disc).astype(form.dtype)
    B0 = C.conj().T @ B[:, free_f]
    Gy0 = C.conj().T @ Gy @ C
    sv0 = _gen_singular_values(B0, Gy0, Gx[np.ix_(free_f, free_f)])
    c0, b0norm = float(sv0[-1]), float(sv0[0])
    if conforming_only:
        return BrokenStability(c0, c0, True, c0, None, b0norm)
    free_i = free[free >= disc.ndof_field]
    svi = _gen_singular_values(B[:, free_i], Gy,
                               Gx[np.ix_(free_i, free_i)])
    chat = float(svi[-1])
    sv = _gen_singular_values(B[:, free], Gy, Gx[np.ix_(free, free)])
    c1_discrete = float(sv[-1])
    c1_formula = 1.0 / np.sqrt(
        1.0 / c0 ** 2 + (b0norm / c0 + 1.0) ** 2 / chat ** 2)
    passed = c1_discrete >= c1_formula - 1e-10
    return BrokenStability(c1_discrete, float(c1_formula), passed,
                           c0, chat, b0norm)


def _fortin_suite(seed):
    from .fortin import fortin_build, fortin_commuting, fortin_moments, \
        perp_dimensions
    recs = []
    p = 1
    systems = {k: fortin_build(k, p) for k in ("grad", "curl", "div")}
    for kind in ("grad", "curl", "div"):
        sys_ = systems[kind]
        samples = default_samples(kind, p, seed=seed)
        val = fortin_moments(kind, p, samples, system=sys_)
        recs.append(("fortin", f"{kind}-moments-p{p}", val, 1e-9, val < 1e-9))
    val = fortin_commuting(p, systems=systems)
    recs.append(("fortin", f"commuting-p{p}", val, 1e-9, val < 1e-9))
    dim = systems["curl"].dims["P0_perp"]
    want = 6 * p + 11
    recs.append(("fortin", f"P0_perp-dim-p{p}", float(dim), float(want),
                 dim == want))
    return recs


def _duality_suite_records(seed):
    recs = []
    p = 1
    qs = (p + 2, p + 4, p + 6)
    gaps = duality_suite(p=p, seed=seed, qs=qs)
    for pairing, table in gaps.items():
        worst_final = float(np.max(table[:, -1]))
        recs.append(("duality", f"{pairing}-gap-q{qs[-1]}", worst_final,
                     0.05, worst_final < 0.05))
        worst_rise = float(np.max(np.diff(table, axis=1)))
        recs.append(("duality", f"{pairing}-monotone", worst_rise, 0.0,
                     worst_rise <= 0.0))
    return recs


def _annihilation_suite(seed):
    from .meshes import build_structured
    del seed
    recs = []
    for fid, domain, n in (("primal_poisson", "unit-square", 1),
                           ("maxwell_primal_E", "unit-cube", 1)):
        mesh = build_structured(domain, n)
        res = annihilation_check(fid, mesh, p=1)
        recs.append(("annihilation", f"{fid}-conforming", res.conforming_max,
                     1e-12, res.conforming_max < 1e-12))
        recs.append(("annihilation", f"{fid}-witness", res.witness,
                     1e-3, res.witness > 1e-3))
    return recs


def _infsup_suite(seed):
    from .meshes import build_structured
    del seed
    recs = []
    tri = build_structured("unit-square", 2)
    for rep in infsup_survey(DCR_IDS, tri, p=1):
        recs.append(("infsup", f"{rep.formulation}-{rep.mesh}", rep.infsup,
                     0.0, rep.infsup > 0.0))
    cube = build_structured("unit-cube", 1)
    for rep in infsup_survey(MAXWELL_IDS, cube, p=1):
        recs.append(("infsup", f"{rep.formulation}-{rep.mesh}", rep.infsup,
                     0.0, rep.infsup > 0.0))
    return recs


def _stability_suite(seed):
    from .meshes import build_structured
    del seed
    recs = []
    for n in (1, 2):
        mesh = build_structured("unit-square", n)
        res = broken_stability_bound("primal_poisson", mesh, p=1)
        margin = res.c1_discrete - res.c1_formula
        recs.append(("stability", f"primal_poisson-{_mesh_tag(mesh)}",
                     margin, 1e-10, margin >= -1e-10))
    return recs


_SUITES = {
    "fortin": _fortin_suite,
    "duality": _duality_suite_records,
    "annihilation": _annihilation_suite,
    "infsup": _infsup_suite,
    "stability": _stability_suite,
}


def verify_records(seed=0, suites=None, max_workers=1):
    """Run verification suites and return flat report records.

    Each record is a dict with keys suite, case, value, tolerance and
    pass.  Records are ordered by the fixed suite order regardless of
    worker count, so a fixed seed reproduces the report byte for byte.
    """
    names = list(_SUITES) if suites is None else list(suites)
    for name in names:
        if name not in _SUITES:
            raise ValueError(f"unknown verification suite {name!r}")
    if max_workers > 1 and len(names) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            futures = {name: ex.submit(_SUITES[name], seed) for name in names}
            chunks = [futures[name].result() for name in names]
    else:
        chunks = [_SUITES[name](seed) for name in names]
    records = []
    for chunk in chunks:
        for suite, case, value, tol, ok in chunk:
            records.append({"suite": suite, "case": case,
                            "value": float(value), "tolerance": float(tol),
                            "pass": bool(ok)})
    return records
