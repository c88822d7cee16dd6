"""Period-wire construction and analysis.

A period wire is the matrix-product family with site tensors
A[+] = G/sqrt(2), A[-] = G T(phi)/sqrt(2), G = exp(i pi X / tau),
T = diag(e^{-i phi/2}, e^{i phi/2}); the last physical site doubles as the
right boundary. The canonical family (rank-1 tensors in the computational
basis) is also provided since several constructions are naturally stated in
that gauge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, pi, sin, sqrt

import numpy as np

from . import qcore as qc


class WireError(Exception):
    pass


class InvalidWire(WireError):
    pass


class DegenerateWire(WireError):
    pass


class CanonicalizationFailed(WireError):
    pass


PLUS = np.array([1, 1], dtype=complex) / sqrt(2)


def rotation_g(tau: int) -> np.ndarray:
    """G = exp(i pi X / tau)."""
    return cos(pi / tau) * qc.I2 + 1j * sin(pi / tau) * qc.X


def phase_t(phi: float) -> np.ndarray:
    """T = diag(e^{-i phi/2}, e^{i phi/2})."""
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


@dataclass(frozen=True)
class WireTensors:
    """Site tensors in the X basis and their computational combinations."""

    a_plus: np.ndarray
    a_minus: np.ndarray

    def __post_init__(self):
        tot = self.a_plus.conj().T @ self.a_plus + self.a_minus.conj().T @ self.a_minus
        if np.max(np.abs(tot - np.eye(2))) > 1e-10:
            raise InvalidWire("site tensors are not an isometry")

    @property
    def a0(self) -> np.ndarray:
        return (self.a_plus + self.a_minus) / sqrt(2)

    @property
    def a1(self) -> np.ndarray:
        return (self.a_plus - self.a_minus) / sqrt(2)

    def computational(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a0, self.a1

    def for_outcome(self, vec: np.ndarray) -> np.ndarray:
        """A[m] = <m|0> A[0] + <m|1> A[1] for an outcome vector m."""
        a0, a1 = self.computational()
        return vec[0].conjugate() * a0 + vec[1].conjugate() * a1


def _norm_boundary(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(2)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise InvalidWire("boundary vector is null")
    return v / n


@dataclass(frozen=True)
class PeriodWire:
    """Wire with period tau, entanglement factor phi, n sites."""

    tau: int
    phi: float
    n: int
    left_boundary: np.ndarray = field(default_factory=lambda: PLUS.copy())

    def __post_init__(self):
        if isinstance(self.tau, bool) or int(self.tau) != self.tau:
            raise InvalidWire(f"period must be an integer, got {self.tau!r}")
        if self.tau < 2:
            raise InvalidWire("period must be >= 2")
        if not (0.0 <= self.phi <= pi + 1e-12):
            raise InvalidWire("entanglement factor must lie in [0, pi]")
        if self.n < 1:
            raise InvalidWire("wire needs at least one site")
        object.__setattr__(self, "tau", int(self.tau))
        object.__setattr__(self, "left_boundary", _norm_boundary(self.left_boundary))

    @property
    def tensors(self) -> WireTensors:
        g = rotation_g(self.tau)
        return WireTensors(g / sqrt(2), (g @ phase_t(self.phi)) / sqrt(2))

    @property
    def labels(self) -> tuple:
        return tuple(range(1, self.n + 1))

    def with_boundary(self, v) -> "PeriodWire":
        return PeriodWire(self.tau, self.phi, self.n, _norm_boundary(v))


@dataclass(frozen=True)
class CanonicalWire:
    """Rank-1 family A[0] = |phi0><0|, A[1] = |phi1><1| (maximal entanglement)."""

    theta: float
    alpha: float
    n: int
    left_boundary: np.ndarray = field(default_factory=lambda: PLUS.copy())

    def __post_init__(self):
        if self.n < 1:
            raise InvalidWire("wire needs at least one site")
        object.__setattr__(self, "left_boundary", _norm_boundary(self.left_boundary))

    @property
    def tensors(self) -> WireTensors:
        c, s = cos(self.theta / 2), sin(self.theta / 2)
        e = np.exp(1j * self.alpha)
        phi0 = np.array([c, e * s], dtype=complex)
        phi1 = np.array([s, -e * c], dtype=complex)
        a0 = np.outer(phi0, [1, 0])
        a1 = np.outer(phi1, [0, 1])
        return WireTensors((a0 + a1) / sqrt(2), (a0 - a1) / sqrt(2))

    @property
    def labels(self) -> tuple:
        return tuple(range(1, self.n + 1))


def chain_amplitudes(a0: np.ndarray, a1: np.ndarray, n: int, left: np.ndarray) -> np.ndarray:
    """Raw contraction: amp[s1..sn] = <s_n| A[s_{n-1}] ... A[s_1] |left>."""
    if n == 1:
        return np.asarray(left, dtype=complex).copy()
    mats = (a0, a1)
    psi = np.asarray(left, dtype=complex).reshape(1, 2)  # (strings, corr)
    for _ in range(n - 1):
        nxt = np.empty((psi.shape[0] * 2, 2), dtype=complex)
        half = psi.shape[0]
        nxt[:half] = psi @ mats[0].T
        nxt[half:] = psi @ mats[1].T
        psi = nxt
    # last site: correlation component c becomes the amplitude of |s_n = c>
    return psi.T.reshape(-1)


def wire_state(w, boundary=None, labels=None) -> qc.PureState:
    """Build the physical state of a wire, normalized."""
    tens = w.tensors
    left = _norm_boundary(boundary) if boundary is not None else w.left_boundary
    amps = chain_amplitudes(tens.a0, tens.a1, w.n, left)
    norm = np.linalg.norm(amps)
    if norm < 1e-12:
        raise DegenerateWire("wire state has vanishing norm")
    return qc.PureState(amps / norm, labels if labels is not None else w.labels)


def build_wire_state(w, boundary=None) -> qc.PureState:
    return wire_state(w, boundary)


def chain_amplitudes_modified(tens: WireTensors, n: int, left: np.ndarray,
                              site_ops=None, replaced=None) -> np.ndarray:
    """Contraction with physical operators applied and/or tensors replaced.

    `site_ops` maps site -> 2x2 physical operator, `replaced` maps
    site -> (B0, B1) replacement tensors (replacement only below site n).
    """
    site_ops = site_ops or {}
    replaced = replaced or {}
    a = tens.computational()
    psi = np.asarray(left, dtype=complex).reshape(1, 2)
    for site in range(1, n):
        b = replaced.get(site, a)
        if site in site_ops:
            u = site_ops[site]
            b = (u[0, 0] * b[0] + u[0, 1] * b[1], u[1, 0] * b[0] + u[1, 1] * b[1])
        half = psi.shape[0]
        nxt = np.empty((half * 2, 2), dtype=complex)
        nxt[:half] = psi @ b[0].T
        nxt[half:] = psi @ b[1].T
        psi = nxt
    if n in replaced:
        raise InvalidWire("cannot replace the boundary-consuming tensor")
    if n in site_ops:
        psi = psi @ site_ops[n].T
    return psi.T.reshape(-1)


# ---------------------------------------------------------------------------
# canonical form


@dataclass(frozen=True)
class CanonicalBasis:
    """Basis data realizing A[m0] = r0|phi0><chi0|, A[m1] = r1|phi0><chi0| + |phi1><chi1|."""

    m0: np.ndarray
    m1: np.ndarray
    r0: float
    r1: float
    varphi0: np.ndarray
    varphi1: np.ndarray
    chi0: np.ndarray
    chi1: np.ndarray
    theta: float | None
    alpha: float | None

    @property
    def carrier(self) -> np.ndarray:
        """v0 = r0 m0 + r1 m1: the site vector carrying the |0_c> component."""
        return self.r0 * self.m0 + self.r1 * self.m1


def _rank1_directions(a0: np.ndarray, a1: np.ndarray) -> list[np.ndarray]:
    """Bra coefficient pairs (x, y) with x A0 + y A1 singular."""
    d00 = np.linalg.det(a0)
    d11 = np.linalg.det(a1)
    dmix = np.linalg.det(a0 + a1) - d00 - d11
    sols = []
    if abs(d00) < 1e-14 and abs(dmix) < 1e-14 and abs(d11) < 1e-14:
        sols = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    elif abs(d00) < 1e-14:
        sols.append(np.array([1.0, 0.0]))
        if abs(d11) > 1e-14:
            sols.append(np.array([-d11 / dmix, 1.0])) if abs(dmix) > 1e-14 else None
        else:
            sols.append(np.array([0.0, 1.0]))
    else:
        # d00 x^2 + dmix x y + d11 y^2 = 0 with y = 1
        roots = np.roots([d00, dmix, d11])
        for r in roots:
            sols.append(np.array([r, 1.0]))
    out = []
    for s in sols:
        if s is None:
            continue
        n = np.linalg.norm(s)
        if n > 1e-12:
            out.append(s / n)
    return out


def canonical_form(w, tol: float = 1e-10) -> CanonicalBasis:
    """Find the measurement basis bringing the tensors to canonical shape."""
    tens = w.tensors
    a0, a1 = tens.computational()
    last_err = None
    for coeffs in _rank1_directions(a0, a1):
        try:
            return _canonical_from_direction(tens, coeffs, tol)
        except CanonicalizationFailed as exc:
            last_err = exc
    raise CanonicalizationFailed(f"no rank-1 direction produced a valid form: {last_err}")


def _canonical_from_direction(tens: WireTensors, coeffs: np.ndarray, tol: float) -> CanonicalBasis:
    # coeffs are the bra components (<m0|0>, <m0|1>)
    m0 = coeffs.conj()
    m1 = np.array([-m0[1].conjugate(), m0[0].conjugate()], dtype=complex)
    am0 = tens.for_outcome(m0)
    am1 = tens.for_outcome(m1)
    u, s, vh = np.linalg.svd(am0)
    if s[-1] > 1e-8:
        raise CanonicalizationFailed("candidate direction is not rank-1")
    r0 = float(s[0])
    if r0 < 1e-8:
        # fully degenerate direction (phi = 0): A[m1] is unitary, r1 = 1
        chi0 = np.array([1.0, 0.0], dtype=complex)
        chi1 = np.array([0.0, 1.0], dtype=complex)
        varphi0 = am1 @ chi0
        n0 = np.linalg.norm(varphi0)
        if abs(n0 - 1.0) > 1e-8:
            raise CanonicalizationFailed("degenerate direction without unitary partner")
        r1 = n0
        varphi0 = varphi0 / n0
        varphi1 = am1 @ chi1
        return _gauge_and_check(tens, m0, m1, 0.0, r1, varphi0, varphi1, chi0, chi1, tol)
    varphi0 = u[:, 0]
    chi0 = vh[0].conj()
    # rephase so that r0 > 0 exactly matches A[m0] = r0 |phi0><chi0|
    phase = np.vdot(varphi0, am0 @ chi0) / r0
    varphi0 = varphi0 * phase
    chi1 = np.array([-chi0[1].conjugate(), chi0[0].conjugate()], dtype=complex)
    r1c = complex(np.vdot(varphi0, am1 @ chi0))
    if abs(r1c) > 1e-12:
        m1 = m1 * (r1c / abs(r1c))
        am1 = tens.for_outcome(m1)
        r1c = complex(np.vdot(varphi0, am1 @ chi0))
    varphi1 = am1 @ chi1
    return _gauge_and_check(tens, m0, m1, r0, float(r1c.real), varphi0, varphi1, chi0, chi1, tol)


def _gauge_and_check(tens, m0, m1, r0, r1, varphi0, varphi1, chi0, chi1, tol) -> CanonicalBasis:
    am0 = tens.for_outcome(m0)
    am1 = tens.for_outcome(m1)
    built0 = r0 * np.outer(varphi0, chi0.conj())
    built1 = r1 * np.outer(varphi0, chi0.conj()) + np.outer(varphi1, chi1.conj())
    err = max(np.max(np.abs(built0 - am0)), np.max(np.abs(built1 - am1)))
    if err > tol:
        raise CanonicalizationFailed(f"canonical reconstruction error {err:.2e}")
    if r0 > 1e-12 and abs(np.linalg.norm(varphi1) - 1.0) > tol:
        raise CanonicalizationFailed("second canonical vector is not normalized")
    theta = alpha = None
    if abs(r1) < 1e-12:
        v = varphi0.copy()
        if abs(v[0]) > 1e-12:
            v = v * (v[0].conjugate() / abs(v[0]))
        theta = 2.0 * np.arctan2(abs(v[1]), v[0].real)
        alpha = float(np.angle(v[1])) if abs(v[1]) > 1e-12 else 0.0
    return CanonicalBasis(m0, m1, float(r0), float(r1), varphi0, varphi1, chi0, chi1, theta, alpha)


# ---------------------------------------------------------------------------
# transfer matrix, correlation length, MPO reductions


@dataclass(frozen=True)
class TransferMatrix:
    matrix: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        if np.max(np.abs(self.eigenvalues)) > 1 + 1e-10:
            raise InvalidWire("transfer matrix spectral radius exceeds 1")


def transfer_matrix(w) -> TransferMatrix:
    a0, a1 = w.tensors.computational()
    e = np.kron(a0, a0.conj()) + np.kron(a1, a1.conj())
    vals = np.linalg.eigvals(e)
    order = np.argsort(-np.abs(vals))
    return TransferMatrix(e, vals[order])


def _deflated_radius(e: np.ndarray, tol: float = 1e-12) -> float:
    """Spectral radius of E with its leading eigenpair projected out.

    Plain eigvals are unreliable here: the subleading block can be defective
    (Jordan structure), where eigenvalue noise scales like eps^(1/k). The
    decay rate |lambda_2| is measured instead by repeated squaring.
    """
    vals, vr = np.linalg.eig(e)
    i = int(np.argmax(np.abs(vals)))
    lam1 = vals[i]
    r = vr[:, i]
    wl, vl = np.linalg.eig(e.conj().T)
    j = int(np.argmin(np.abs(wl.conj() - lam1)))
    l = vl[:, j]
    m = e - lam1 * np.outer(r, l.conj()) / np.vdot(l, r)
    log_rho = 0.0
    weight = 1.0
    for _ in range(60):
        m = m @ m
        weight *= 0.5
        s = np.max(np.abs(m))
        if s < 1e-300:
            return 0.0
        m = m / s
        log_rho += weight * np.log(s)
    return float(np.exp(log_rho))


def correlation_length(w) -> float:
    """xi = -1/log(|l2|/|l1|); +inf for degenerate leading pair, 0 for |l2|=0."""
    tm = transfer_matrix(w)
    l1 = abs(tm.eigenvalues[0])
    # float deflation leaves an O(sqrt(eps)) floor; genuine subleading moduli
    # of this tensor family are O(0.1) or exactly zero, so 1e-6 separates them
    l2 = _deflated_radius(tm.matrix)
    if l2 < 1e-6:
        return 0.0
    if l1 - l2 < 1e-12 * max(l1, 1.0):
        return float("inf")
    return float(-1.0 / np.log(l2 / l1))


def reduced_density_mpo(w, site_set, boundary_density=None) -> qc.DensityOperator:
    """Reduced density operator of a few sites via environment contraction.

    Equivalent to a dense partial trace but linear in n; works far past the
    dense cap. `boundary_density` replaces |L><L| (used to average over an
    entangled or traced-out left boundary).
    """
    sites = sorted(set(site_set))
    if not sites:
        raise qc.InvalidSite("need at least one site")
    if sites[0] < 1 or sites[-1] > w.n:
        raise qc.InvalidSite("site outside the wire")
    if len(sites) > 6:
        raise qc.InvalidSite("reduced_density_mpo supports at most 6 sites")
    a0, a1 = w.tensors.computational()
    if boundary_density is None:
        left = w.left_boundary
        env = np.outer(left, left.conj())
    else:
        env = np.asarray(boundary_density, dtype=complex)
    # env axes: (..open pairs.., a, b) with a row / b col correlation indices
    open_count = 0
    for site in range(1, w.n):
        if site in sites:
            new = np.stack(
                [
                    np.stack([np.einsum("ca,...ab,db->...cd", m, env, mm.conj()) for mm in (a0, a1)], axis=-3)
                    for m in (a0, a1)
                ],
                axis=-4,
            )
            # new axes: (..., s, t, a, b)
            env = new
            open_count += 1
        else:
            env = np.einsum("ca,...ab,db->...cd", a0, env, a0.conj()) + np.einsum(
                "ca,...ab,db->...cd", a1, env, a1.conj()
            )
        scale = np.max(np.abs(env))
        if scale > 0:
            env = env / scale
    if w.n in sites:
        open_count += 1  # final correlation indices are the open physical pair
    else:
        env = np.einsum("...aa->...", env)
    # env now has 2*open_count axes ordered (s_i1, t_i1, s_i2, t_i2, ...)
    k = open_count
    rows = [2 * j for j in range(k)]
    cols = [2 * j + 1 for j in range(k)]
    # first-listed site must be the least significant bit of the row index
    t = env.transpose(list(reversed(rows)) + list(reversed(cols)))
    mat = t.reshape(2**k, 2**k)
    mat = mat / np.trace(mat)
    return qc.DensityOperator(mat, tuple(sites))


def aux_wire_state(w) -> qc.PureState:
    """(|0>_aux Phi(|0>) + |1>_aux Phi(|1>))/sqrt(2), dense."""
    tens = w.tensors
    amp0 = chain_amplitudes(tens.a0, tens.a1, w.n, np.array([1, 0], dtype=complex))
    amp1 = chain_amplitudes(tens.a0, tens.a1, w.n, np.array([0, 1], dtype=complex))
    amps = np.zeros(2 ** (w.n + 1), dtype=complex)
    amps[0::2] = amp0
    amps[1::2] = amp1
    amps = amps / np.linalg.norm(amps)
    return qc.PureState(amps, ("aux",) + w.labels)


def two_wire_bell_state(w, relabel=lambda l: ("b", l)) -> qc.PureState:
    """(Phi(0)Phi(0) + Phi(1)Phi(1))/sqrt(2) over two copies of the wire."""
    tens = w.tensors
    amp0 = chain_amplitudes(tens.a0, tens.a1, w.n, np.array([1, 0], dtype=complex))
    amp1 = chain_amplitudes(tens.a0, tens.a1, w.n, np.array([0, 1], dtype=complex))
    amps = (np.kron(amp0, amp0) + np.kron(amp1, amp1)) / sqrt(2)
    amps = amps / np.linalg.norm(amps)
    labels = w.labels + tuple(relabel(l) for l in w.labels)
    return qc.PureState(amps, labels)


def aux_wire_site_density(w, site: int) -> qc.DensityOperator:
    """Joint (aux, site) density operator of the aux-entangled wire state."""
    blocks = {}
    for j in (0, 1):
        for jp in (0, 1):
            boundary = np.zeros((2, 2), dtype=complex)
            boundary[j, jp] = 1.0
            rho = _unnormalized_site_block(w, site, boundary)
            blocks[(j, jp)] = rho
    dim = 4
    mat = np.zeros((dim, dim), dtype=complex)
    for (j, jp), blk in blocks.items():
        for s in (0, 1):
            for sp in (0, 1):
                mat[j + 2 * s, jp + 2 * sp] = 0.5 * blk[s, sp]
    mat = mat / np.trace(mat)
    return qc.DensityOperator(mat, ("aux", site))


def _unnormalized_site_block(w, site: int, boundary: np.ndarray) -> np.ndarray:
    a0, a1 = w.tensors.computational()
    env = boundary
    out = None
    for s in range(1, w.n):
        if s == site:
            env = np.stack(
                [
                    np.stack([np.einsum("ca,ab,db->cd", m, env, mm.conj()) for mm in (a0, a1)], axis=0)
                    for m in (a0, a1)
                ],
                axis=0,
            )
        elif env.ndim == 2:
            env = np.einsum("ca,ab,db->cd", a0, env, a0.conj()) + np.einsum(
                "ca,ab,db->cd", a1, env, a1.conj()
            )
        else:
            env = np.einsum("ca,stab,db->stcd", a0, env, a0.conj()) + np.einsum(
                "ca,stab,db->stcd", a1, env, a1.conj()
            )
    if site == w.n:
        out = env
    else:
        out = np.einsum("staa->st", env)
    return out


def wire_entropy_profile(w, sites=None) -> dict[int, float]:
    """Per-site entanglement entropy of the encoded (aux-entangled) wire."""
    sites = list(sites) if sites is not None else list(range(1, w.n + 1))
    boundary = np.eye(2, dtype=complex) / 2  # aux traced out
    out = {}
    for s in sites:
        rho = reduced_density_mpo(w, [s], boundary_density=boundary)
        out[s] = qc.von_neumann_entropy(rho)
    return out


def wire_mutual_info_profile(w, sites=None) -> dict[int, float]:
    """I(aux; site) for each requested site of the aux-entangled wire."""
    sites = list(sites) if sites is not None else list(range(1, w.n + 1))
    out = {}
    for s in sites:
        rho = aux_wire_site_density(w, s)
        out[s] = qc.mutual_information(rho, ["aux"], [s])
    return out
