"""Formulation catalog: spaces, bilinear forms, loads, manufactured cases.

Each formulation couples field slots (volume unknowns), interface slots
(skeleton unknowns) and broken test slots.  Conventions used throughout:

* forms are sesquilinear with conjugation on the test argument;
* scalar-flux interfaces store the flux with respect to the canonical
  facet normal, so a cell sees the value times its orientation sign;
* tangential interfaces are represented by a conforming parent field W
  and enter through the pairing <W, n x S> = int W . conj(n x S) taken
  over each element boundary with the outward normal.

The diffusion-convection-reaction operator is
A(sigma, u) = (alpha sigma - grad u - beta u, div sigma - gamma u)
with formal adjoint
A*(tau, v) = (alpha tau - grad v, div tau - beta . tau - gamma v),
and the Maxwell operator is
A(H, E) = (i omega mu H - curl E, i omega eps E + curl H) with adjoint
A*(R, S) = (-i omega mu R + curl S, -i omega eps S - curl R).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

FORMULATION_IDS = (
    "primal_poisson", "primal_dcr", "ultraweak_dcr", "mixed_dcr",
    "dual_mixed_dcr", "strong_dcr", "maxwell_primal_E", "maxwell_primal_H",
    "maxwell_ultraweak", "maxwell_mixed", "maxwell_dual_mixed",
    "maxwell_strong",
)

MAXWELL_IDS = tuple(i for i in FORMULATION_IDS if i.startswith("maxwell"))
DCR_IDS = tuple(i for i in FORMULATION_IDS if not i.startswith("maxwell"))


@dataclass(frozen=True)
class Slot:
    """One variable of a formulation.

    continuity is 'conforming', 'broken', 'skeleton' or 'facet'.  For
    skeleton slots family/degree describe the conforming parent space;
    for facet slots they describe the per-facet polynomial.
    """
    name: str
    family: str
    degree: int
    continuity: str
    ncomp: int = 1
    zero_boundary: bool = False
    deriv_in_norm: bool = True


@dataclass(frozen=True)
class Formulation:
    id: str
    dim: int
    p: int
    delta: int
    mode: str
    params: dict
    trial_slots: tuple
    interface_slots: tuple
    test_slots: tuple
    y_norm: str  # 'natural' | 'graph_dcr' | 'graph_maxwell'
    # per test slot: None (no conforming subspace restriction, i.e. the
    # L2 case) or (family, zero_boundary) of the conforming subspace
    y0_rule: tuple = ()

    @property
    def is_complex(self):
        return self.id in MAXWELL_IDS

    @property
    def dtype(self):
        return complex if self.is_complex else float

    def slot(self, name):
        for s in self.trial_slots + self.interface_slots + self.test_slots:
            if s.name == name:
                return s
        raise KeyError(name)


def make_formulation(id, p, delta=3, dim=None, params=None, mode="guaranteed"):
    """Build a formulation from the catalog.

    Parameters: diffusion problems take a (scalar diffusion), beta
    (convection vector) and gamma (reaction); Maxwell problems take
    eps, mu, omega.  All are constants (or per-cell constant arrays).
    """
    if id not in FORMULATION_IDS:
        raise ValueError(f"unknown formulation id {id!r}")
    if p < 1:
        raise ValueError("degree parameter p must be >= 1")
    if delta not in (2, 3):
        raise ValueError("test enrichment delta must be 2 or 3")
    if mode not in ("guaranteed", "economy"):
        raise ValueError(f"unknown mode {mode!r}")
    maxwell = id in MAXWELL_IDS
    if dim is None:
        dim = 3 if maxwell else 2
    if maxwell and dim != 3:
        raise ValueError("Maxwell formulations are three-dimensional")
    if not maxwell and dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    params = dict(params or {})
    if maxwell:
        params.setdefault("eps", 1.0)
        params.setdefault("mu", 1.0)
        params.setdefault("omega", 1.0)
        if np.min(params["eps"]) <= 0 or np.min(params["mu"]) <= 0:
            raise ValueError("eps and mu must be positive")
        if params["omega"] <= 0:
            raise ValueError("omega must be positive")
    else:
        params.setdefault("a", 1.0)
        params.setdefault("beta", np.zeros(dim))
        params.setdefault("gamma", 0.0)
        params["beta"] = np.asarray(params["beta"], dtype=float)
        if np.min(params["a"]) <= 0:
            raise ValueError("diffusion coefficient a must be positive")
        if np.min(params["gamma"]) < 0:
            raise ValueError("reaction coefficient gamma must be nonnegative")
    q = p + delta
    build = _BUILDERS[id]
    trial, interface, test, y_norm, y0 = build(p, q, dim, mode)
    return Formulation(id, dim, p, delta, mode, params, tuple(trial),
                       tuple(interface), tuple(test), y_norm, tuple(y0))


# -- catalog builders --------------------------------------------------


def _facet_flux_slot(name, p, dim, zero_boundary=False):
    # normal trace of R_{p+1}: degree-p polynomial per facet
    return Slot(name, "l2", p, "facet", 1, zero_boundary)


def _primal_poisson(p, q, dim, mode):
    trial = [Slot("u", "h1", p + 1, "conforming", 1, True)]
    interface = [_facet_flux_slot("sighat", p, dim)]
    test = [Slot("v", "h1", q, "broken")]
    return trial, interface, test, "natural", [("h1", True)]


def _primal_dcr(p, q, dim, mode):
    return _primal_poisson(p, q, dim, mode)


def _ultraweak_dcr(p, q, dim, mode):
    trial = [Slot("sigma", "vec", p - 1, "broken", dim),
             Slot("u", "l2", p - 1, "broken")]
    interface = [Slot("uhat", "h1", p + 1, "skeleton", 1, True),
                 _facet_flux_slot("sighat", p, dim)]
    test = [Slot("tau", "hdiv", q, "broken", dim),
            Slot("v", "h1", q, "broken")]
    return trial, interface, test, "graph_dcr", [("hdiv", False), ("h1", True)]


def _mixed_dcr(p, q, dim, mode):
    trial = [Slot("sigma", "vec", p - 1, "broken", dim),
             Slot("u", "h1", p + 1, "conforming", 1, True)]
    interface = [_facet_flux_slot("sighat", p, dim)]
    test = [Slot("tau", "vec", q, "broken", dim, deriv_in_norm=False),
            Slot("v", "h1", q, "broken")]
    return trial, interface, test, "natural", [None, ("h1", True)]


def _dual_mixed_dcr(p, q, dim, mode):
    trial = [Slot("sigma", "hdiv", p + 1, "conforming", dim),
             Slot("u", "l2", p, "broken")]
    interface = [Slot("uhat", "h1", p + 1, "skeleton", 1, True)]
    test = [Slot("tau", "hdiv", q, "broken", dim),
            Slot("v", "l2", q, "broken", 1, deriv_in_norm=False)]
    return trial, interface, test, "natural", [("hdiv", False), None]


def _strong_dcr(p, q, dim, mode):
    trial = [Slot("sigma", "hdiv", p + 1, "conforming", dim),
             Slot("u", "h1", p + 1, "conforming", 1, True)]
    test = [Slot("tau", "vec", q, "broken", dim, deriv_in_norm=False),
            Slot("v", "l2", q, "broken", 1, deriv_in_norm=False)]
    return trial, [], test, "natural", [None, None]


def _maxwell_trial_family(mode):
    return "vec" if mode == "guaranteed" else "hcurl"


def _maxwell_iface(mode, p):
    if mode == "guaranteed":
        return ("vec", p + 1)
    return ("hcurl", p)


def _maxwell_primal_E(p, q, dim, mode):
    fam = _maxwell_trial_family(mode)
    ifam, ideg = _maxwell_iface(mode, p)
    trial = [Slot("E", fam, p, "conforming", 3, True)]
    interface = [Slot("Hhat", ifam, ideg, "skeleton", 3)]
    test = [Slot("F", "hcurl", q, "broken", 3)]
    return trial, interface, test, "natural", [("hcurl", True)]


def _maxwell_primal_H(p, q, dim, mode):
    fam = _maxwell_trial_family(mode)
    ifam, ideg = _maxwell_iface(mode, p)
    trial = [Slot("H", fam, p, "conforming", 3)]
    interface = [Slot("Ehat", ifam, ideg, "skeleton", 3, True)]
    test = [Slot("F", "hcurl", q, "broken", 3)]
    return trial, interface, test, "natural", [("hcurl", False)]


def _maxwell_ultraweak(p, q, dim, mode):
    ifam, ideg = _maxwell_iface(mode, p)
    trial = [Slot("H", "vec", p - 1, "broken", 3),
             Slot("E", "vec", p - 1, "broken", 3)]
    interface = [Slot("Hhat", ifam, ideg, "skeleton", 3),
                 Slot("Ehat", ifam, ideg, "skeleton", 3, True)]
    test = [Slot("R", "hcurl", q, "broken", 3),
            Slot("S", "hcurl", q, "broken", 3)]
    return trial, interface, test, "graph_maxwell", [("hcurl", False),
                                                     ("hcurl", True)]


def _maxwell_mixed(p, q, dim, mode):
    fam = _maxwell_trial_family(mode)
    ifam, ideg = _maxwell_iface(mode, p)
    trial = [Slot("H", "vec", p - 1, "broken", 3),
             Slot("E", fam, p, "conforming", 3, True)]
    interface = [Slot("Hhat", ifam, ideg, "skeleton", 3)]
    test = [Slot("R", "vec", q, "broken", 3, deriv_in_norm=False),
            Slot("S", "hcurl", q, "broken", 3)]
    return trial, interface, test, "natural", [None, ("hcurl", True)]


def _maxwell_dual_mixed(p, q, dim, mode):
    fam = _maxwell_trial_family(mode)
    ifam, ideg = _maxwell_iface(mode, p)
    trial = [Slot("H", fam, p, "conforming", 3),
             Slot("E", "vec", p - 1, "broken", 3)]
    interface = [Slot("Ehat", ifam, ideg, "skeleton", 3, True)]
    test = [Slot("R", "hcurl", q, "broken", 3),
            Slot("S", "vec", q, "broken", 3, deriv_in_norm=False)]
    return trial, interface, test, "natural", [("hcurl", False), None]


def _maxwell_strong(p, q, dim, mode):
    fam = _maxwell_trial_family(mode)
    trial = [Slot("H", fam, p, "conforming", 3),
             Slot("E", fam, p, "conforming", 3, True)]
    test = [Slot("R", "vec", q, "broken", 3, deriv_in_norm=False),
            Slot("S", "vec", q, "broken", 3, deriv_in_norm=False)]
    return trial, [], test, "natural", [None, None]


_BUILDERS = {
    "primal_poisson": _primal_poisson,
    "primal_dcr": _primal_dcr,
    "ultraweak_dcr": _ultraweak_dcr,
    "mixed_dcr": _mixed_dcr,
    "dual_mixed_dcr": _dual_mixed_dcr,
    "strong_dcr": _strong_dcr,
    "maxwell_primal_E": _maxwell_primal_E,
    "maxwell_primal_H": _maxwell_primal_H,
    "maxwell_ultraweak": _maxwell_ultraweak,
    "maxwell_mixed": _maxwell_mixed,
    "maxwell_dual_mixed": _maxwell_dual_mixed,
    "maxwell_strong": _maxwell_strong,
}


# -- per-cell form evaluation -------------------------------------------
#
# The context object (built in the system module) provides per-slot
# tables: ctx.vals(name, ci), ctx.ders(name, ci), volume weights
# ctx.w(ci), facet data ctx.facet(name, ci, lf) and ctx.fw(ci, lf),
# outward normals ctx.normal(ci, lf), facet-flux basis values
# ctx.flux_basis(name), and coefficient lookup ctx.coef(key, ci).


def _mass(w, a_vals, b_vals, coef=1.0):
    """int coef * a . conj(b);  a indexes columns (trial), b rows."""
    blk = np.einsum("jpc,ipc,p->ij", a_vals, b_vals.conj(), w)
    return coef * blk


def y_gram(form, ctx, ci):
    """Hermitian positive definite Gram of the Y inner product."""
    blocks = []
    if form.y_norm == "natural":
        for s in form.test_slots:
            w = ctx.w(ci)
            v = ctx.vals(s.name, ci)
            G = np.einsum("ipc,jpc,p->ij", v, v.conj(), w)
            if s.deriv_in_norm:
                d = ctx.ders(s.name, ci)
                G = G + np.einsum("ipc,jpc,p->ij", d, d.conj(), w)
            blocks.append(G)
        n = sum(b.shape[0] for b in blocks)
        out = np.zeros((n, n), dtype=form.dtype)
        at = 0
        for b in blocks:
            out[at:at + b.shape[0], at:at + b.shape[0]] = b
            at += b.shape[0]
    elif form.y_norm == "graph_dcr":
        out = _graph_gram_dcr(form, ctx, ci)
    elif form.y_norm == "graph_maxwell":
        out = _graph_gram_maxwell(form, ctx, ci)
    else:
        raise ValueError(form.y_norm)
    out = 0.5 * (out + out.conj().T)
    return out


def _graph_gram_dcr(form, ctx, ci):
    # ||tau||^2 + ||v||^2 + ||A*(tau, v)||^2 with
    # A*(tau, v) = (alpha tau - grad v, div tau - beta.tau - gamma v)
    alpha = 1.0 / ctx.coef("a", ci)
    beta = ctx.coef("beta", ci)
    gamma = ctx.coef("gamma", ci)
    w = ctx.w(ci)
    tau = ctx.vals("tau", ci)
    divtau = ctx.ders("tau", ci)[:, :, 0]
    v = ctx.vals("v", ci)[:, :, 0]
    gradv = ctx.ders("v", ci)
    nt, nv = tau.shape[0], v.shape[0]
    n = nt + nv
    # first adjoint component per basis function, shape (n, nq, dim)
    A1 = np.zeros((n, tau.shape[1], tau.shape[2]))
    A1[:nt] = alpha * tau
    A1[nt:] = -gradv
    # second adjoint component, shape (n, nq)
    A2 = np.zeros((n, tau.shape[1]))
    A2[:nt] = divtau - np.einsum("fpc,c->fp", tau, beta)
    A2[nt:] = -gamma * v
    G = np.zeros((n, n))
    G[:nt, :nt] = np.einsum("ipc,jpc,p->ij", tau, tau, w)
    G[nt:, nt:] = np.einsum("ip,jp,p->ij", v, v, w)
    G += np.einsum("ipc,jpc,p->ij", A1, A1, w)
    G += np.einsum("ip,jp,p->ij", A2, A2, w)
    return G


def _graph_gram_maxwell(form, ctx, ci):
    # ||R||^2 + ||S||^2 + ||A*(R, S)||^2 with
    # A*(R, S) = (-i w mu R + curl S, -i w eps S - curl R)
    eps = ctx.coef("eps", ci)
    mu = ctx.coef("mu", ci)
    om = ctx.coef("omega", ci)
    w = ctx.w(ci)
    R = ctx.vals("R", ci)
    S = ctx.vals("S", ci)
    curlR = ctx.ders("R", ci)
    curlS = ctx.ders("S", ci)
    nr, ns = R.shape[0], S.shape[0]
    n = nr + ns
    nq = R.shape[1]
    A1 = np.zeros((n, nq, 3), dtype=complex)
    A1[:nr] = -1j * om * mu * R
    A1[nr:] = curlS
    A2 = np.zeros((n, nq, 3), dtype=complex)
    A2[:nr] = -curlR
    A2[nr:] = -1j * om * eps * S
    G = np.zeros((n, n), dtype=complex)
    G[:nr, :nr] = np.einsum("ipc,jpc,p->ij", R, R, w)
    G[nr:, nr:] = np.einsum("ipc,jpc,p->ij", S, S, w)
    # G[i, j] = (y_j, y_i)_Y, conjugate on the second (test row) slot
    G += np.einsum("jpc,ipc,p->ij", A1, A1.conj(), w)
    G += np.einsum("jpc,ipc,p->ij", A2, A2.conj(), w)
    return G


def b0_block(form, ctx, ci):
    """Volume part of the mixed form: rows test dofs, cols field dofs."""
    fid = form.id
    w = ctx.w(ci)
    if fid in ("primal_poisson", "primal_dcr"):
        a = ctx.coef("a", ci)
        beta = ctx.coef("beta", ci)
        gamma = ctx.coef("gamma", ci)
        u = ctx.vals("u", ci)[:, :, 0]
        gu = ctx.ders("u", ci)
        v = ctx.vals("v", ci)[:, :, 0]
        gv = ctx.ders("v", ci)
        # (a grad u + a beta u, grad v) + (gamma u, v)
        flux = a * gu + a * np.einsum("jp,c->jpc", u, beta)
        blk = np.einsum("jpc,ipc,p->ij", flux, gv, w)
        if np.any(gamma != 0):
            blk += gamma * np.einsum("jp,ip,p->ij", u, v, w)
        return blk
    if fid == "ultraweak_dcr":
        alpha = 1.0 / ctx.coef("a", ci)
        beta = ctx.coef("beta", ci)
        gamma = ctx.coef("gamma", ci)
        sig = ctx.vals("sigma", ci)
        uu = ctx.vals("u", ci)[:, :, 0]
        tau = ctx.vals("tau", ci)
        divtau = ctx.ders("tau", ci)[:, :, 0]
        v = ctx.vals("v", ci)[:, :, 0]
        gradv = ctx.ders("v", ci)
        nt, nv = tau.shape[0], v.shape[0]
        nsig, nu = sig.shape[0], uu.shape[0]
        blk = np.zeros((nt + nv, nsig + nu))
        # (sigma, alpha tau - grad v)
        blk[:nt, :nsig] = alpha * np.einsum("jpc,ipc,p->ij", sig, tau, w)
        blk[nt:, :nsig] = -np.einsum("jpc,ipc,p->ij", sig, gradv, w)
        # (u, div tau - beta.tau - gamma v)
        bt = divtau - np.einsum("ipc,c->ip", tau, beta)
        blk[:nt, nsig:] = np.einsum("jp,ip,p->ij", uu, bt, w)
        blk[nt:, nsig:] = -gamma * np.einsum("jp,ip,p->ij", uu, v, w)
        return blk
    if fid == "mixed_dcr":
        alpha = 1.0 / ctx.coef("a", ci)
        beta = ctx.coef("beta", ci)
        gamma = ctx.coef("gamma", ci)
        sig = ctx.vals("sigma", ci)
        uu = ctx.vals("u", ci)[:, :, 0]
        gu = ctx.ders("u", ci)
        tau = ctx.vals("tau", ci)
        v = ctx.vals("v", ci)[:, :, 0]
        gradv = ctx.ders("v", ci)
        nt, nv = tau.shape[0], v.shape[0]
        nsig, nu = sig.shape[0], uu.shape[0]
        blk = np.zeros((nt + nv, nsig + nu))
        # (alpha sigma, tau) - (sigma, grad v)
        blk[:nt, :nsig] = alpha * np.einsum("jpc,ipc,p->ij", sig, tau, w)
        blk[nt:, :nsig] = -np.einsum("jpc,ipc,p->ij", sig, gradv, w)
        # -(grad u + beta u, tau) - (gamma u, v)
        gub = gu + np.einsum("jp,c->jpc", uu, beta)
        blk[:nt, nsig:] = -np.einsum("jpc,ipc,p->ij", gub, tau, w)
        blk[nt:, nsig:] = -gamma * np.einsum("jp,ip,p->ij", uu, v, w)
        return blk
    if fid == "dual_mixed_dcr":
        alpha = 1.0 / ctx.coef("a", ci)
        beta = ctx.coef("beta", ci)
        gamma = ctx.coef("gamma", ci)
        sig = ctx.vals("sigma", ci)
        divsig = ctx.ders("sigma", ci)[:, :, 0]
        uu = ctx.vals("u", ci)[:, :, 0]
        tau = ctx.vals("tau", ci)
        divtau = ctx.ders("tau", ci)[:, :, 0]
        v = ctx.vals("v", ci)[:, :, 0]
        nt, nv = tau.shape[0], v.shape[0]
        nsig, nu = sig.shape[0], uu.shape[0]
        blk = np.zeros((nt + nv, nsig + nu))
        blk[:nt, :nsig] = alpha * np.einsum("jpc,ipc,p->ij", sig, tau, w)
        blk[nt:, :nsig] = np.einsum("jp,ip,p->ij", divsig, v, w)
        bt = np.einsum("ipc,c->ip", tau, beta)
        blk[:nt, nsig:] = np.einsum("jp,ip,p->ij", uu, divtau - bt, w)
        blk[nt:, nsig:] = -gamma * np.einsum("jp,ip,p->ij", uu, v, w)
        return blk
    if fid == "strong_dcr":
        alpha = 1.0 / ctx.coef("a", ci)
        beta = ctx.coef("beta", ci)
        gamma = ctx.coef("gamma", ci)
        sig = ctx.vals("sigma", ci)
        divsig = ctx.ders("sigma", ci)[:, :, 0]
        uu = ctx.vals("u", ci)[:, :, 0]
        gu = ctx.ders("u", ci)
        tau = ctx.vals("tau", ci)
        v = ctx.vals("v", ci)[:, :, 0]
        nt, nv = tau.shape[0], v.shape[0]
        nsig, nu = sig.shape[0], uu.shape[0]
        blk = np.zeros((nt + nv, nsig + nu))
        blk[:nt, :nsig] = alpha * np.einsum("jpc,ipc,p->ij", sig, tau, w)
        blk[nt:, :nsig] = np.einsum("jp,ip,p->ij", divsig, v, w)
        gub = gu + np.einsum("jp,c->jpc", uu, beta)
        blk[:nt, nsig:] = -np.einsum("jpc,ipc,p->ij", gub, tau, w)
        blk[nt:, nsig:] = -gamma * np.einsum("jp,ip,p->ij", uu, v, w)
        return blk
    if fid == "maxwell_primal_E":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        E = ctx.vals("E", ci)
        curlE = ctx.ders("E", ci)
        F = ctx.vals("F", ci)
        curlF = ctx.ders("F", ci)
        blk = (1.0 / mu) * np.einsum("jpc,ipc,p->ij", curlE, curlF, w)
        blk = blk - om ** 2 * eps * np.einsum("jpc,ipc,p->ij", E, F, w)
        return blk.astype(complex)
    if fid == "maxwell_primal_H":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        H = ctx.vals("H", ci)
        curlH = ctx.ders("H", ci)
        F = ctx.vals("F", ci)
        curlF = ctx.ders("F", ci)
        blk = (1.0 / eps) * np.einsum("jpc,ipc,p->ij", curlH, curlF, w)
        blk = blk - om ** 2 * mu * np.einsum("jpc,ipc,p->ij", H, F, w)
        return blk.astype(complex)
    if fid == "maxwell_ultraweak":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        Hv = ctx.vals("H", ci)
        Ev = ctx.vals("E", ci)
        R = ctx.vals("R", ci)
        S = ctx.vals("S", ci)
        curlR = ctx.ders("R", ci)
        curlS = ctx.ders("S", ci)
        nr, ns = R.shape[0], S.shape[0]
        nh, ne = Hv.shape[0], Ev.shape[0]
        blk = np.zeros((nr + ns, nh + ne), dtype=complex)
        # (H, -i w mu R + curl S): conj of adjoint coefficient
        blk[:nr, :nh] = np.einsum("jpc,ipc,p->ij", Hv, R, w) * np.conj(-1j * om * mu)
        blk[nr:, :nh] = np.einsum("jpc,ipc,p->ij", Hv, curlS, w)
        # (E, -i w eps S - curl R)
        blk[:nr, nh:] = -np.einsum("jpc,ipc,p->ij", Ev, curlR, w)
        blk[nr:, nh:] = np.einsum("jpc,ipc,p->ij", Ev, S, w) * np.conj(-1j * om * eps)
        return blk
    if fid == "maxwell_mixed":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        Hv = ctx.vals("H", ci)
        Ev = ctx.vals("E", ci)
        curlE = ctx.ders("E", ci)
        R = ctx.vals("R", ci)
        S = ctx.vals("S", ci)
        curlS = ctx.ders("S", ci)
        nr, ns = R.shape[0], S.shape[0]
        nh, ne = Hv.shape[0], Ev.shape[0]
        blk = np.zeros((nr + ns, nh + ne), dtype=complex)
        blk[:nr, :nh] = 1j * om * mu * np.einsum("jpc,ipc,p->ij", Hv, R, w)
        blk[nr:, :nh] = np.einsum("jpc,ipc,p->ij", Hv, curlS, w)
        blk[:nr, nh:] = -np.einsum("jpc,ipc,p->ij", curlE, R, w)
        blk[nr:, nh:] = 1j * om * eps * np.einsum("jpc,ipc,p->ij", Ev, S, w)
        return blk
    if fid == "maxwell_dual_mixed":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        Hv = ctx.vals("H", ci)
        curlH = ctx.ders("H", ci)
        Ev = ctx.vals("E", ci)
        R = ctx.vals("R", ci)
        curlR = ctx.ders("R", ci)
        S = ctx.vals("S", ci)
        nr, ns = R.shape[0], S.shape[0]
        nh, ne = Hv.shape[0], Ev.shape[0]
        blk = np.zeros((nr + ns, nh + ne), dtype=complex)
        blk[:nr, :nh] = 1j * om * mu * np.einsum("jpc,ipc,p->ij", Hv, R, w)
        blk[nr:, :nh] = np.einsum("jpc,ipc,p->ij", curlH, S, w)
        blk[:nr, nh:] = -np.einsum("jpc,ipc,p->ij", Ev, curlR, w)
        blk[nr:, nh:] = 1j * om * eps * np.einsum("jpc,ipc,p->ij", Ev, S, w)
        return blk
    if fid == "maxwell_strong":
        mu = ctx.coef("mu", ci)
        eps = ctx.coef("eps", ci)
        om = ctx.coef("omega", ci)
        Hv = ctx.vals("H", ci)
        curlH = ctx.ders("H", ci)
        Ev = ctx.vals("E", ci)
        curlE = ctx.ders("E", ci)
        R = ctx.vals("R", ci)
        S = ctx.vals("S", ci)
        nr, ns = R.shape[0], S.shape[0]
        nh, ne = Hv.shape[0], Ev.shape[0]
        blk = np.zeros((nr + ns, nh + ne), dtype=complex)
        blk[:nr, :nh] = 1j * om * mu * np.einsum("jpc,ipc,p->ij", Hv, R, w)
        blk[nr:, :nh] = np.einsum("jpc,ipc,p->ij", curlH, S, w)
        blk[:nr, nh:] = -np.einsum("jpc,ipc,p->ij", curlE, R, w)
        blk[nr:, nh:] = 1j * om * eps * np.einsum("jpc,ipc,p->ij", Ev, S, w)
        return blk
    raise ValueError(fid)


def bhat_block(form, ctx, ci):
    """Interface part of the mixed form: rows test dofs, cols interface
    dofs (local layout per cell).  Orientation factors are applied by
    the caller through the dof maps."""
    fid = form.id
    if not form.interface_slots:
        nt = ctx.ntest(ci)
        return np.zeros((nt, 0), dtype=form.dtype)
    cols = []
    for s in form.interface_slots:
        if s.continuity == "facet":
            cols.append(_flux_pairing(form, ctx, ci, s))
        else:
            cols.append(_skeleton_pairing(form, ctx, ci, s))
    return np.concatenate(cols, axis=1)


def _flux_pairing(form, ctx, ci, slot):
    """<sighat, v>_h columns: per facet, canonical scalar basis against
    the scalar test slot 'v'."""
    nt = ctx.ntest(ci)
    vname = "v"
    off = ctx.test_offset(vname)
    nb = ctx.flux_facet_values(slot.name, ci, 0).shape[0]
    nfac = form.dim + 1
    blk = np.zeros((nt, nfac * nb), dtype=form.dtype)
    for lf in range(nfac):
        wf = ctx.fw(ci, lf)
        cvals = ctx.flux_facet_values(slot.name, ci, lf)  # (nb, nqf)
        v = ctx.facet(vname, ci, lf)[:, :, 0]
        pair = np.einsum("jq,iq,q->ij", cvals, v.conj(), wf)
        blk[off:off + v.shape[0], lf * nb:(lf + 1) * nb] = pair
    return blk


def _skeleton_pairing(form, ctx, ci, slot):
    fid = form.id
    nt = ctx.ntest(ci)
    parent_vals = ctx.skeleton_facets(slot.name, ci)  # per lf: (nloc, nq, c)
    nloc = parent_vals[0].shape[0]
    blk = np.zeros((nt, nloc), dtype=form.dtype)
    om = ctx.coef("omega", ci) if form.is_complex else None
    nfac = form.dim + 1
    if fid in ("ultraweak_dcr", "dual_mixed_dcr") and slot.name == "uhat":
        # -<uhat, n.tau>_h
        off = ctx.test_offset("tau")
        for lf in range(nfac):
            wf = ctx.fw(ci, lf)
            n = ctx.normal(ci, lf)
            tau = ctx.facet("tau", ci, lf)
            ntau = np.einsum("ipc,c->ip", tau, n)
            u = parent_vals[lf][:, :, 0]
            pair = -np.einsum("jq,iq,q->ij", u, ntau.conj(), wf)
            blk[off:off + tau.shape[0]] += pair
        return blk
    if fid in ("maxwell_primal_E", "maxwell_primal_H"):
        # s * i w <What, F>_h with <W, F> = int (n x W) . conj(F);
        # the sign follows from int_K curl W . conj(F) =
        # int_K W . conj(curl F) + int_bdK (n x W) . conj(F)
        sign = 1.0 if fid == "maxwell_primal_E" else -1.0
        off = ctx.test_offset("F")
        for lf in range(nfac):
            wf = ctx.fw(ci, lf)
            n = ctx.normal(ci, lf)
            W = parent_vals[lf]
            nxW = np.cross(np.broadcast_to(n, W.shape), W, axis=2)
            F = ctx.facet("F", ci, lf)
            pair = np.einsum("jqc,iqc,q->ij", nxW, F.conj(), wf)
            blk[off:off + F.shape[0]] += sign * 1j * om * pair
        return blk
    if fid in ("maxwell_ultraweak", "maxwell_mixed") and slot.name == "Hhat":
        # +<Hhat, n x S>_h with <W, n x S> = int W . conj(n x S)
        off = ctx.test_offset("S")
        for lf in range(nfac):
            wf = ctx.fw(ci, lf)
            n = ctx.normal(ci, lf)
            W = parent_vals[lf]
            S = ctx.facet("S", ci, lf)
            nxS = np.cross(np.broadcast_to(n, S.shape), S, axis=2)
            pair = np.einsum("jqc,iqc,q->ij", W, nxS.conj(), wf)
            blk[off:off + S.shape[0]] += pair
        return blk
    if fid in ("maxwell_ultraweak", "maxwell_dual_mixed") and slot.name == "Ehat":
        # -<Ehat, n x R>_h for the ultraweak form, +<Ehat, n x R>_h for
        # the dual mixed form
        sign = -1.0 if fid == "maxwell_ultraweak" else 1.0
        off = ctx.test_offset("R")
        for lf in range(nfac):
            wf = ctx.fw(ci, lf)
            n = ctx.normal(ci, lf)
            W = parent_vals[lf]
            R = ctx.facet("R", ci, lf)
            nxR = np.cross(np.broadcast_to(n, R.shape), R, axis=2)
            pair = np.einsum("jqc,iqc,q->ij", W, nxR.conj(), wf)
            blk[off:off + R.shape[0]] += sign * pair
        return blk
    raise ValueError(f"no pairing rule for slot {slot.name!r} in {fid}")


def load_vector(form, ctx, ci, case):
    """Test-slot load functional from a manufactured case."""
    fid = form.id
    w = ctx.w(ci)
    x = ctx.points(ci)
    nt = ctx.ntest(ci)
    l = np.zeros(nt, dtype=form.dtype)
    if case is None:
        return l
    if fid in ("primal_poisson", "primal_dcr"):
        f2 = case.fields["f2"](x)
        v = ctx.vals("v", ci)[:, :, 0]
        off = ctx.test_offset("v")
        l[off:off + v.shape[0]] = np.einsum("ip,p,p->i", v.conj(), f2, w)
        return l
    if fid in ("ultraweak_dcr", "mixed_dcr", "dual_mixed_dcr", "strong_dcr"):
        # load is (A x_exact, y) = (0, tau) + (-f2, v)
        f2 = case.fields["f2"](x)
        v = ctx.vals("v", ci)[:, :, 0]
        off = ctx.test_offset("v")
        l[off:off + v.shape[0]] = -np.einsum("ip,p,p->i", v.conj(), f2, w)
        return l
    if fid == "maxwell_primal_E":
        om = ctx.coef("omega", ci)
        J = case.fields["J"](x)
        F = ctx.vals("F", ci)
        off = ctx.test_offset("F")
        l[off:off + F.shape[0]] = 1j * om * np.einsum("ipc,pc,p->i", F.conj(), J, w)
        return l
    if fid == "maxwell_primal_H":
        eps = ctx.coef("eps", ci)
        J = case.fields["J"](x)
        curlF = ctx.ders("F", ci)
        off = ctx.test_offset("F")
        l[off:off + curlF.shape[0]] = (1.0 / eps) * np.einsum(
            "ipc,pc,p->i", curlF.conj(), J, w)
        return l
    if fid in ("maxwell_ultraweak", "maxwell_mixed", "maxwell_dual_mixed",
               "maxwell_strong"):
        J = case.fields["J"](x)
        S = ctx.vals("S", ci)
        off = ctx.test_offset("S")
        l[off:off + S.shape[0]] = np.einsum("ipc,pc,p->i", S.conj(), J, w)
        return l
    raise ValueError(fid)


# -- exact interface traces ---------------------------------------------
#
# For each interface slot, the exact value implied by the manufactured
# fields and the sign conventions of bhat_block.  Facet slots return a
# callable (x, n_canonical) -> scalar values; skeleton slots return the
# name of the exact volume field whose trace (possibly negated) the
# interface carries.


def exact_interface(form, case, slot_name):
    fid = form.id
    f = case.fields
    if slot_name == "sighat":
        if fid in ("primal_poisson", "primal_dcr"):
            return lambda x, n: -np.einsum("pc,pc->p", f["sigma"](x), n)
        # ultraweak and mixed carry +n.sigma
        return lambda x, n: np.einsum("pc,pc->p", f["sigma"](x), n)
    if slot_name == "uhat":
        return ("volume", f["u"], 1.0)
    if slot_name == "Hhat":
        if fid in ("maxwell_primal_E",):
            return ("volume", f["H"], 1.0)
        # ultraweak and mixed tangential traces carry -H
        return ("volume", f["H"], -1.0)
    if slot_name == "Ehat":
        if fid == "maxwell_ultraweak":
            return ("volume", f["E"], -1.0)
        return ("volume", f["E"], 1.0)
    raise KeyError(slot_name)


# -- manufactured cases -------------------------------------------------


class ManufacturedCase:
    """Named exact-solution data set.

    fields maps names to vectorized callables of the physical points;
    expected_rates maps (slot, norm) labels to the convergence order the
    discretization should achieve.
    """

    def __init__(self, name, dim, params, fields, expected_rates,
                 has_exact=True):
        self.name = name
        self.dim = dim
        self.params = params
        self.fields = fields
        self.expected_rates = expected_rates
        self.has_exact = has_exact


def _poisson_sine_2d():
    def u(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def grad_u(x):
        s1, c1 = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        s2, c2 = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return np.pi * np.stack([c1 * s2, s1 * c2], axis=1)

    def f2(x):
        return 2.0 * np.pi ** 2 * u(x)

    fields = {"u": u, "grad_u": grad_u, "sigma": grad_u, "f2": f2,
              "div_sigma": lambda x: -f2(x)}
    return ManufacturedCase("poisson_sine_2d", 2,
                            {"a": 1.0, "beta": np.zeros(2), "gamma": 0.0},
                            fields, {"u": None})


def _dcr_sine_2d():
    a = 1.0
    beta = np.array([0.3, -0.2])
    gamma = 0.5

    def u(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def grad_u(x):
        s1, c1 = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        s2, c2 = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return np.pi * np.stack([c1 * s2, s1 * c2], axis=1)

    def sigma(x):
        return a * grad_u(x) + a * u(x)[:, None] * beta[None, :]

    def f2(x):
        # -div sigma + gamma u with div(a beta) = 0
        return (2.0 * np.pi ** 2 * a * u(x)
                - a * np.einsum("pc,c->p", grad_u(x), beta)
                + gamma * u(x))

    fields = {"u": u, "grad_u": grad_u, "sigma": sigma, "f2": f2,
              "div_sigma": lambda x: gamma * u(x) - f2(x)}
    return ManufacturedCase("dcr_sine_2d", 2,
                            {"a": a, "beta": beta, "gamma": gamma},
                            fields, {})


def _maxwell_sine_3d():
    om = eps = mu = 1.0

    def E(x):
        s = np.sin(np.pi * x)
        out = np.zeros((len(x), 3), dtype=complex)
        out[:, 0] = s[:, 0] * s[:, 1] * s[:, 2]
        return out

    def curlE(x):
        s = np.sin(np.pi * x)
        c = np.cos(np.pi * x)
        out = np.zeros((len(x), 3), dtype=complex)
        out[:, 1] = np.pi * s[:, 0] * s[:, 1] * c[:, 2]
        out[:, 2] = -np.pi * s[:, 0] * c[:, 1] * s[:, 2]
        return out

    def H(x):
        return curlE(x) / (1j * om * mu)

    def curlH(x):
        s = np.sin(np.pi * x)
        c = np.cos(np.pi * x)
        cc = np.zeros((len(x), 3))
        cc[:, 0] = 2.0 * np.pi ** 2 * s[:, 0] * s[:, 1] * s[:, 2]
        cc[:, 1] = np.pi ** 2 * c[:, 0] * c[:, 1] * s[:, 2]
        cc[:, 2] = np.pi ** 2 * c[:, 0] * s[:, 1] * c[:, 2]
        return cc / (1j * om * mu)

    def J(x):
        return 1j * om * eps * E(x) + curlH(x)

    fields = {"E": E, "curl_E": curlE, "H": H, "curl_H": curlH, "J": J}
    return ManufacturedCase("maxwell_sine_3d", 3,
                            {"eps": eps, "mu": mu, "omega": om}, fields, {})


def _poisson_lshape_singular():
    def f2(x):
        return np.ones(len(x))

    return ManufacturedCase("poisson_lshape_singular", 2,
                            {"a": 1.0, "beta": np.zeros(2), "gamma": 0.0},
                            {"f2": f2}, {}, has_exact=False)


_CASES = {
    "poisson_sine_2d": _poisson_sine_2d,
    "dcr_sine_2d": _dcr_sine_2d,
    "maxwell_sine_3d": _maxwell_sine_3d,
    "poisson_lshape_singular": _poisson_lshape_singular,
}


def manufactured_case(name):
    if name not in _CASES:
        raise ValueError(f"unknown manufactured case {name!r}")
    return _CASES[name]()
