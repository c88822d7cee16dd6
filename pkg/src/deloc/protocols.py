"""Executable measurement protocols on wires and encoded blocks.

Every protocol produces ProtocolTranscript objects, one per measurement
branch (enumerate mode) or one per run (sample mode). States are dense
qcore.PureState values; sites are removed from the state as the protocol
consumes them. Accumulated by-products are tracked exactly as 2x2
correlation-space frames and only ever applied to localized physical
qubits.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import sqrt

import numpy as np

from . import qcore as qc
from . import wire as wr
from .dicke import uploading_state


class ProtocolError(Exception):
    pass


class InvalidPayload(ProtocolError):
    pass


class WireExhausted(ProtocolError):
    pass


class StationInsufficient(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# run modes, transcripts, branch plumbing


@dataclass(frozen=True)
class RunMode:
    kind: str  # "enumerate" | "sample"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("enumerate", "sample"):
            raise ProtocolError(f"unknown run mode {self.kind!r}")
        if self.kind == "sample" and self.seed is None:
            raise ProtocolError("sample mode needs a seed")


ENUMERATE = RunMode("enumerate")


def sample_mode(seed: int) -> RunMode:
    return RunMode("sample", seed)


class _Chooser:
    def __init__(self, mode: RunMode):
        self.mode = mode
        self.rng = np.random.default_rng(mode.seed) if mode.kind == "sample" else None

    def take(self, outcomes):
        if not outcomes:
            raise ProtocolError("measurement produced no branches")
        if self.rng is None:
            return outcomes
        probs = np.array([o.probability for o in outcomes])
        probs = probs / probs.sum()
        return [outcomes[self.rng.choice(len(outcomes), p=probs)]]


@dataclass(frozen=True)
class Step:
    site: object
    basis: str
    outcome: int
    probability: float


@dataclass(frozen=True)
class ProtocolTranscript:
    steps: tuple
    byproducts: dict
    branch_probability: float
    result: object  # PureState / DensityOperator / None
    localized: tuple
    success: bool
    meta: dict = field(default_factory=dict)


def success_probability(transcripts) -> float:
    return float(sum(t.branch_probability for t in transcripts if t.success))


def total_probability(transcripts) -> float:
    return float(sum(t.branch_probability for t in transcripts))


def final_density(transcripts, labels, success_only=True, renormalize=True) -> qc.DensityOperator:
    """Probability mixture of branch results reduced to the given labels."""
    labels = tuple(labels)
    dim = 2 ** len(labels)
    acc = np.zeros((dim, dim), dtype=complex)
    total = 0.0
    for t in transcripts:
        if success_only and not t.success:
            continue
        st = t.result
        if isinstance(st, qc.PureState):
            extra = [l for l in st.labels if l not in labels]
            rho = qc.partial_trace(st, extra) if extra else st.to_density()
        else:
            rho = st
        acc += t.branch_probability * qc.reorder_density(rho, labels).matrix
        total += t.branch_probability
    if total < 1e-14:
        raise ProtocolError("no contributing branches")
    if renormalize:
        acc /= total
    return qc.DensityOperator(acc, labels)


@dataclass(frozen=True)
class WireContext:
    """Tensor and canonical-basis data shared by the wire protocols."""

    tens: wr.WireTensors
    cb: wr.CanonicalBasis
    tau: int

    @classmethod
    def for_wire(cls, w) -> "WireContext":
        return cls(w.tensors, wr.canonical_form(w), getattr(w, "tau", 2))

    @property
    def chi(self) -> np.ndarray:
        return np.column_stack([self.cb.chi0, self.cb.chi1])

    @property
    def pair0(self) -> np.ndarray:
        return np.column_stack([self.cb.varphi0, self.cb.varphi1])

    @property
    def m_cols(self) -> np.ndarray:
        return np.column_stack([self.cb.m0, self.cb.m1])

    def outcome_unitary(self, m_vec) -> np.ndarray:
        return sqrt(2) * self.tens.for_outcome(m_vec)


@dataclass(frozen=True)
class ResidualWire:
    sites: tuple
    boundary: object
    source: object


@dataclass(frozen=True)
class _Branch:
    state: qc.PureState
    prob: float
    steps: tuple
    frame: np.ndarray
    pair: np.ndarray | None = None
    minus_count: int = 0
    meta: dict = field(default_factory=dict)

    def step(self, **kw):
        return replace(self, **kw)


def _unitarize(m: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def orthogonalizing_filter(c0, c1) -> tuple[np.ndarray, np.ndarray, float]:
    """Two-element generalized measurement turning carriers (c0, c1) into |0>, |1>.

    Success probability is 1 - |<c0|c1>| independent of the carried
    amplitudes; the failure element is rank-1 and leaves the carrier span
    with equal moduli, so the payload survives in the complementary system.
    """
    t = abs(np.vdot(c0, c1))
    if t >= 1 - 1e-12:
        return np.zeros((2, 2), dtype=complex), np.eye(2, dtype=complex), 0.0
    m = np.column_stack([c0, c1])
    f_s = sqrt(1.0 - t) * np.linalg.inv(m)
    gram = np.eye(2) - f_s.conj().T @ f_s
    vals, vecs = np.linalg.eigh(gram)
    vals = np.clip(vals, 0.0, None)
    f_f = (vecs * np.sqrt(vals)) @ vecs.conj().T
    return f_s, f_f, 1.0 - t


def _x_measure(branch: _Branch, site, ctx: WireContext, chooser) -> list[_Branch]:
    outs = chooser.take(qc.measure(branch.state, [site], "X"))
    children = []
    for o in outs:
        m_vec = qc.X_BASIS[:, o.outcome_index]
        u = ctx.outcome_unitary(m_vec)
        kw = dict(
            state=o.post_state,
            prob=branch.prob * o.probability,
            steps=branch.steps + (Step(site, "X", o.outcome_index, o.probability),),
            frame=u @ branch.frame,
            minus_count=branch.minus_count + o.outcome_index,
        )
        if branch.pair is not None:
            kw["pair"] = u @ branch.pair
        children.append(branch.step(**kw))
    return children


def _x_sweep(branches, sites, ctx, chooser):
    for site in sites:
        nxt = []
        for b in branches:
            nxt.extend(_x_measure(b, site, ctx, chooser))
        branches = nxt
    return branches


def _wire_basis_measure(branch, tail_sites, ctx, corr_vectors, chooser, basis_name):
    """Projective measurement of the remainder in wire-basis states Phi(v_j).

    Removes the remainder sites; outcome j collapses them into the known
    functional wire Phi(v_j).
    """
    tail_sites = list(tail_sites)
    k = len(tail_sites)
    mat, rest = qc._moved_to_front(branch.state, tail_sites)
    rest_labels = tuple(branch.state.labels[p] for p in rest)
    outcomes = []
    total = 0.0
    for j, v in enumerate(corr_vectors):
        w_amps = wr.chain_amplitudes(ctx.tens.a0, ctx.tens.a1, k, np.asarray(v, dtype=complex))
        vec = w_amps.conj() @ mat
        p = float(np.vdot(vec, vec).real)
        total += p
        if p < 1e-14:
            continue
        outcomes.append(qc.MeasurementOutcome(j, p, qc.PureState(vec / sqrt(p), rest_labels)))
    if total < 1 - 1e-9:
        raise ProtocolError(f"remainder not supported on the wire subspace (weight {total})")
    out = []
    for o in chooser.take(outcomes):
        nb = branch.step(
            state=o.post_state,
            prob=branch.prob * o.probability,
            steps=branch.steps
            + (Step(tuple(tail_sites), basis_name, o.outcome_index, o.probability),),
        )
        out.append((nb, o.outcome_index))
    return out


# ---------------------------------------------------------------------------
# uploading


def upload_via_bell(word0: qc.PureState, word1: qc.PureState, payload: qc.PureState,
                    mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Teleport a physical qubit into the logical level of an encoded block."""
    if payload.num_qubits != 1:
        raise InvalidPayload("payload must be a single qubit")
    resource = uploading_state(word0, word1, aux="aux")
    pay_label = payload.labels[0]
    if pay_label in resource.labels:
        payload = qc.PureState(payload.amplitudes, ("payload",))
        pay_label = "payload"
    full = resource.tensor(payload)
    chooser = _Chooser(mode)
    outs = chooser.take(qc.bell_measurement(full, "aux", pay_label))
    dim = word0.amplitudes.size
    iso = np.column_stack([word0.amplitudes, word1.amplitudes])
    transcripts = []
    for o in outs:
        a, b = divmod(o.outcome_index, 2)
        pauli = np.linalg.matrix_power(qc.X, a) @ np.linalg.matrix_power(qc.Z, b)
        correction = iso @ np.linalg.inv(pauli) @ iso.conj().T + (np.eye(dim) - iso @ iso.conj().T)
        corrected = qc.apply_unitary(o.post_state, correction, list(o.post_state.labels))
        transcripts.append(
            ProtocolTranscript(
                steps=(Step(("aux", pay_label), "bell", o.outcome_index, o.probability),),
                byproducts={"logical_pauli": (a, b)},
                branch_probability=o.probability,
                result=corrected,
                localized=(),
                success=True,
                meta={"raw_result": o.post_state},
            )
        )
    return transcripts


def upload_from_node(w, payload: qc.PureState, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Upload a node's qubit into the correlation space of a fresh wire.

    A generalized Bell measurement couples the payload to the first wire
    site; when the two correlation-space images are not orthogonal, a
    filtering operation restores orthogonality probabilistically.
    """
    if payload.num_qubits != 1:
        raise InvalidPayload("payload must be a single qubit")
    ctx = WireContext.for_wire(w)
    state = wr.wire_state(w).tensor(qc.PureState(payload.amplitudes, ("payload",)))
    m_cols = ctx.m_cols
    basis = np.zeros((4, 4), dtype=complex)
    for a in (0, 1):
        for b in (0, 1):
            for j in (0, 1):
                vec = m_cols[:, j ^ a] * ((-1.0) ** (j * b))
                basis[0 + 2 * j, 2 * a + b] += vec[0] / sqrt(2)
                basis[1 + 2 * j, 2 * a + b] += vec[1] / sqrt(2)
    chooser = _Chooser(mode)
    outs = chooser.take(qc.measure(state, [1, "payload"], basis))
    transcripts = []
    for o in outs:
        a, b = divmod(o.outcome_index, 2)
        carriers = []
        for j in (0, 1):
            m_vec = m_cols[:, j ^ a] * ((-1.0) ** (j * b))
            carriers.append(sqrt(2) * ctx.tens.for_outcome(m_vec) @ w.left_boundary)
        branch = _Branch(
            state=o.post_state,
            prob=o.probability,
            steps=(Step((1, "payload"), "gen-bell", o.outcome_index, o.probability),),
            frame=np.eye(2, dtype=complex),
        )
        transcripts.extend(_finish_node_upload(branch, carriers, ctx, w))
    return transcripts


def _finish_node_upload(branch, carriers, ctx, w) -> list[ProtocolTranscript]:
    c0, c1 = carriers
    n0, n1 = np.linalg.norm(c0), np.linalg.norm(c1)
    tail = list(range(2, w.n + 1))

    def transcript(b, frame, ok):
        return ProtocolTranscript(
            steps=b.steps,
            byproducts={"frame": frame},
            branch_probability=b.prob,
            result=b.state,
            localized=(),
            success=ok,
            meta={"wire_sites": tuple(tail), "wire": w},
        )

    ov = abs(np.vdot(c0, c1)) / (n0 * n1)
    if ov < 1e-12:
        return [transcript(branch, np.column_stack([c0 / n0, c1 / n1]), True)]
    f_s, f_f, _ = orthogonalizing_filter(c0 / n0, c1 / n1)
    out = []
    for idx, op, ok in ((0, f_s, True), (1, f_f, False)):
        lifted = _apply_corr_op(branch.state, tail, ctx, op)
        if lifted is None:
            continue
        post, p = lifted
        nb = branch.step(
            state=post,
            prob=branch.prob * p,
            steps=branch.steps + (Step(tuple(tail), "corr-filter", idx, p),),
        )
        frame = None
        if ok:
            # success maps the (normalized) carriers onto the computational
            # correlation basis
            frame = np.eye(2, dtype=complex)
        out.append(transcript(nb, frame, ok))
    return out


def _apply_corr_op(state, tail_sites, ctx, corr_op):
    """Apply a correlation-space operator to the wire-remainder subspace."""
    tail_sites = list(tail_sites)
    k = len(tail_sites)
    mat, rest = qc._moved_to_front(state, tail_sites)
    rest_labels = tuple(state.labels[p] for p in rest)
    w_cols = np.column_stack(
        [
            wr.chain_amplitudes(ctx.tens.a0, ctx.tens.a1, k, np.array(v, dtype=complex))
            for v in ([1, 0], [0, 1])
        ]
    )
    comps = w_cols.conj().T @ mat
    leak = np.vdot(mat, mat).real - np.vdot(comps, comps).real
    if leak > 1e-9:
        raise ProtocolError("state leaks out of the wire subspace")
    new_comps = corr_op @ comps
    p = float(np.vdot(new_comps, new_comps).real)
    if p < 1e-14:
        return None
    new_mat = w_cols @ new_comps
    n = state.num_qubits
    pos = [state.position(s) for s in tail_sites]
    restp = [q2 for q2 in range(n) if q2 not in pos]
    psi = new_mat.T.reshape([2] * (n - k) + [2] * k)
    order_src = [n - 1 - q2 for q2 in restp[::-1]] + [n - 1 - q2 for q2 in pos[::-1]]
    vec = psi.transpose(np.argsort(order_src)).reshape(-1)
    return qc.PureState(vec / sqrt(p), state.labels), p


# ---------------------------------------------------------------------------
# downloading


def download(w, target_site: int = 1, mode: RunMode = ENUMERATE, attempts: int = 1,
             payload=None) -> list[ProtocolTranscript]:
    """Localize the correlation-space state at a physical site.

    The wire must be prepared in Phi(|psi>): pass `payload` or set the
    wire's left boundary. attempts > 1 gives open-destination downloading:
    after a heralded filter failure the landing site moves one step right.
    """
    if target_site < 1 or target_site > w.n:
        raise qc.InvalidSite(f"target site {target_site} outside wire")
    boundary = np.asarray(payload, dtype=complex) if payload is not None else w.left_boundary
    boundary = boundary / np.linalg.norm(boundary)
    state = wr.wire_state(w, boundary=boundary)
    ctx = WireContext.for_wire(w)
    chooser = _Chooser(mode)
    first = _Branch(state=state, prob=1.0, steps=(), frame=np.eye(2, dtype=complex))
    fronts = _x_sweep([first], list(w.labels)[: target_site - 1], ctx, chooser)
    transcripts = []
    for b in fronts:
        transcripts.extend(
            _download_attempts(b, list(w.labels)[target_site - 1 :], ctx, w, chooser, attempts)
        )
    return transcripts


def _download_attempts(branch, sites, ctx, w, chooser, attempts) -> list[ProtocolTranscript]:
    if len(sites) < 2:
        raise WireExhausted(f"{len(sites)} unmeasured sites left; need at least 2")
    target, rest = sites[0], sites[1:]
    cb = ctx.cb
    f_s, f_f, _ = orthogonalizing_filter(cb.carrier, cb.m1)
    out = []
    for o in chooser.take(qc.measure_kraus(branch.state, [f_s, f_f], [target])):
        nb = branch.step(
            state=o.post_state,
            prob=branch.prob * o.probability,
            steps=branch.steps + (Step(target, "filter", o.outcome_index, o.probability),),
        )
        if o.outcome_index == 0:
            out.extend(_download_success(nb, target, rest, ctx, w, chooser))
        else:
            out.extend(_download_failure(nb, target, rest, ctx, w, chooser, attempts))
    return out


def _download_success(branch, target, rest, ctx, w, chooser) -> list[ProtocolTranscript]:
    q_map = ctx.chi.conj().T @ branch.frame  # logical -> site-amplitude map
    nb = branch.step(pair=ctx.pair0.copy())
    texture = rest[: max(0, min(ctx.tau - 1, len(rest) - 1))]
    tail = rest[len(texture):]
    out = []
    for b in _x_sweep([nb], texture, ctx, chooser):
        sig = [
            (b.pair[:, 0] + b.pair[:, 1]) / sqrt(2),
            (b.pair[:, 0] - b.pair[:, 1]) / sqrt(2),
        ]
        for done, j in _wire_basis_measure(b, tail, ctx, sig, chooser, "decouple"):
            d = np.diag([1.0, (-1.0) ** j]).astype(complex)
            fix = _unitarize(np.linalg.inv(d @ q_map))
            corrected = qc.apply_unitary(done.state, fix, [target])
            out.append(
                ProtocolTranscript(
                    steps=done.steps,
                    byproducts={"frame": done.frame, "correction": fix},
                    branch_probability=done.prob,
                    result=corrected,
                    localized=(target,),
                    success=True,
                    meta={"residual": ResidualWire(tuple(tail), sig[j], w)},
                )
            )
    return out


def _download_failure(branch, target, rest, ctx, w, chooser, attempts):
    cb = ctx.cb
    _, f_f, _ = orthogonalizing_filter(cb.carrier, cb.m1)
    vals, vecs = np.linalg.eigh(f_f.conj().T @ f_f)
    w_vec = vecs[:, int(np.argmax(vals))]
    kappa0 = complex(np.vdot(w_vec, cb.carrier))
    kappa1 = complex(np.vdot(w_vec, cb.m1))
    mat, rest_pos = qc._moved_to_front(branch.state, [target])
    vec = w_vec.conj() @ mat
    nrm = np.linalg.norm(vec)
    if abs(nrm - 1.0) > 1e-9:
        raise ProtocolError("failure branch did not collapse the target site")
    rest_labels = tuple(branch.state.labels[p] for p in rest_pos)
    scale = abs(kappa0) if abs(kappa0) > 1e-14 else 1.0
    new_frame = (ctx.pair0 @ np.diag([kappa0, kappa1]) @ ctx.chi.conj().T @ branch.frame) / scale
    nb = branch.step(state=qc.PureState(vec / nrm, rest_labels), frame=new_frame)
    if attempts > 1 and len(rest) >= 2:
        return _download_attempts(nb, rest, ctx, w, chooser, attempts - 1)
    return [
        ProtocolTranscript(
            steps=nb.steps,
            byproducts={"frame": nb.frame},
            branch_probability=nb.prob,
            result=nb.state,
            localized=(),
            success=False,
            meta={"residual": ResidualWire(tuple(rest), None, w)},
        )
    ]


# ---------------------------------------------------------------------------
# transport, errors, losses


def transport(w, periods: int = 1, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """X-measure tau*periods sites, rotating the correlation state in place."""
    ctx = WireContext.for_wire(w)
    steps_needed = w.tau * periods
    if steps_needed > w.n - 2:
        raise WireExhausted("not enough sites to transport that far")
    chooser = _Chooser(mode)
    first = _Branch(state=wr.wire_state(w), prob=1.0, steps=(), frame=np.eye(2, dtype=complex))
    branches = _x_sweep([first], range(1, steps_needed + 1), ctx, chooser)
    return [
        ProtocolTranscript(
            steps=b.steps,
            byproducts={"frame": b.frame},
            branch_probability=b.prob,
            result=b.state,
            localized=(),
            success=True,
            meta={"front": steps_needed + 1, "wire": w},
        )
        for b in branches
    ]


@dataclass(frozen=True)
class TransportReport:
    fidelity: float
    success_probability: float
    density: qc.DensityOperator
    channel: qc.KrausChannel | None
    branches: int


def _loss_common_factor(ctx: WireContext) -> np.ndarray:
    """Known (outcome-independent) unitary factor of a traced-out site."""
    a0, a1 = ctx.tens.computational()
    base = a0 if np.linalg.norm(a0) > 1e-12 else a1
    return _unitarize(base)


def _bell_pipeline(w, periods, mode, error_site_ops=None, loss_sites=(), kraus_site=None,
                   kraus_ops=None) -> list[ProtocolTranscript]:
    """Upload -- transport -- download pipeline on the aux-entangled state."""
    error_site_ops = error_site_ops or {}
    loss_sites = set(loss_sites)
    ctx = WireContext.for_wire(w)
    chooser = _Chooser(mode)
    steps_needed = w.tau * periods
    target = steps_needed + 1
    if target + 1 > w.n:
        raise WireExhausted("wire too short for the requested transport")
    branches = [
        _Branch(state=wr.aux_wire_state(w), prob=1.0, steps=(), frame=np.eye(2, dtype=complex))
    ]
    for site in range(1, steps_needed + 1):
        nxt = []
        for b in branches:
            cur = [b]
            if site in error_site_ops:
                cur = [
                    bb.step(state=qc.apply_unitary(bb.state, error_site_ops[site], [site]))
                    for bb in cur
                ]
            if kraus_site == site:
                tmp = []
                for bb in cur:
                    for o in chooser.take(qc.measure_kraus(bb.state, kraus_ops, [site])):
                        tmp.append(
                            bb.step(
                                state=o.post_state,
                                prob=bb.prob * o.probability,
                                steps=bb.steps
                                + (Step(site, "noise", o.outcome_index, o.probability),),
                            )
                        )
                cur = tmp
            if site in loss_sites:
                for bb in cur:
                    nxt.append(
                        bb.step(
                            frame=_loss_common_factor(ctx) @ bb.frame,
                            steps=bb.steps + (Step(site, "lost", -1, 1.0),),
                        )
                    )
            else:
                for bb in cur:
                    nxt.extend(_x_measure(bb, site, ctx, chooser))
        branches = nxt
    remaining = [s for s in range(target, w.n + 1) if s not in loss_sites]
    transcripts = []
    for b in branches:
        transcripts.extend(_download_attempts(b, remaining, ctx, w, chooser, 1))
    return transcripts


def _bell_report(transcripts, with_channel: bool) -> TransportReport:
    succ = [t for t in transcripts if t.success]
    if not succ:
        raise ProtocolError("no successful download branch")
    labels = ("aux", succ[0].localized[0])
    rho = final_density(succ, labels)
    ref = qc.bell_phi_plus(labels)
    fid = qc.fidelity(rho, ref)
    channel = qc.kraus_from_map(ref, rho) if with_channel else None
    return TransportReport(
        fidelity=fid,
        success_probability=success_probability(transcripts),
        density=rho,
        channel=channel,
        branches=len(transcripts),
    )


def transport_with_error(w, error: str, site: int, periods: int = 2,
                         mode: RunMode = ENUMERATE) -> TransportReport:
    """Bell fidelity of the transport-download pipeline with one Pauli error."""
    if error not in ("X", "Y", "Z", "none"):
        raise ProtocolError(f"unknown error {error!r}")
    ops = {} if error == "none" else {site: qc.PAULI[error]}
    return _bell_report(_bell_pipeline(w, periods, mode, error_site_ops=ops), False)


def transport_with_losses(w, lost_sites, periods: int = 2,
                          mode: RunMode = ENUMERATE) -> TransportReport:
    """Fidelity and effective channel when sites are lost mid-transport."""
    lost = sorted(set(lost_sites))
    if any(s < 1 or s > w.tau * periods for s in lost):
        raise qc.InvalidSite("losses must occur inside the transport window")
    return _bell_report(_bell_pipeline(w, periods, mode, loss_sites=lost), True)


def transport_with_channel(w, kraus_ops, site: int, periods: int = 2,
                           mode: RunMode = ENUMERATE) -> TransportReport:
    """Arbitrary single-qubit CPTP error at one transported site."""
    return _bell_report(
        _bell_pipeline(w, periods, mode, kraus_site=site, kraus_ops=kraus_ops), False
    )


def transport_error_fidelity_exact(w, error: str = "Z") -> float:
    """Frame-algebra fidelity for a Pauli error on an X-measured site."""
    if error == "X":
        return 1.0
    mis = wr.phase_t(w.phi)  # Z and Y both reduce to the T(phi) misframe
    return float(abs(np.trace(mis) / 2.0) ** 2)


def transport_loss_fidelity_fast(w, lost_sites, periods: int = 2):
    """(fidelity, density) for losses via 2x2 frame algebra; no dense state.

    Enumerates the X outcomes of measured sites and the computational
    branches of lost sites; corrections use only the known common factors.
    Scales to long transport windows where the dense oracle cannot go.
    """
    lost = set(lost_sites)
    steps = w.tau * periods
    tens = w.tensors
    a = tens.computational()
    x_ops = [sqrt(2) * tens.for_outcome(qc.X_BASIS[:, i]) for i in (0, 1)]
    common = _loss_common_factor(WireContext.for_wire(w))
    acc = np.zeros((4, 4), dtype=complex)
    stack = [(1, np.eye(2, dtype=complex), np.eye(2, dtype=complex))]
    while stack:
        site, mat, known = stack.pop()
        if site > steps:
            fix = _unitarize(known)
            final = fix.conj().T @ mat
            v = np.zeros(4, dtype=complex)
            for aux_bit in (0, 1):
                for corr_bit in (0, 1):
                    v[aux_bit + 2 * corr_bit] = final[corr_bit, aux_bit] / sqrt(2)
            acc += np.outer(v, v.conj())
            continue
        if site in lost:
            for j in (0, 1):
                stack.append((site + 1, a[j] @ mat, common @ known))
        else:
            for i in (0, 1):
                stack.append((site + 1, x_ops[i] @ mat, x_ops[i] @ known))
    acc = acc / np.trace(acc)
    rho = qc.DensityOperator(acc, ("aux", "corr"))
    return qc.fidelity(rho, qc.bell_phi_plus(("aux", "corr"))), rho


# ---------------------------------------------------------------------------
# cutting


def cut_wire(w, site: int, direction: str = "right",
             mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Cut the chain at `site` into two functional wires.

    direction="right": the segment ending at `site` keeps the boundary
    information; a short gap is consumed and the sites beyond collapse
    into a fresh wire. direction="left": the prefix is measured away and
    the information continues rightward from `site`.
    """
    if site < 1 or site > w.n:
        raise qc.InvalidSite("cut site outside wire")
    ctx = WireContext.for_wire(w)
    chooser = _Chooser(mode)
    first = _Branch(state=wr.wire_state(w), prob=1.0, steps=(), frame=np.eye(2, dtype=complex))
    if direction == "right":
        return _cut_right(first, w, site, ctx, chooser)
    if direction == "left":
        return _cut_left(first, w, site, ctx, chooser)
    raise ProtocolError(f"unknown direction {direction!r}")


def _cut_right(branch, w, site, ctx, chooser) -> list[ProtocolTranscript]:
    rest = [s for s in w.labels if s > site]
    if len(rest) < 2:
        raise WireExhausted("nothing beyond the cut point")
    texture = rest[: max(0, min(ctx.tau - 1, len(rest) - 1))]
    tail = rest[len(texture):]
    out = []
    for b in _x_sweep([branch.step(pair=ctx.pair0.copy())], texture, ctx, chooser):
        sig = [
            (b.pair[:, 0] + b.pair[:, 1]) / sqrt(2),
            (b.pair[:, 0] - b.pair[:, 1]) / sqrt(2),
        ]
        for done, j in _wire_basis_measure(b, tail, ctx, sig, chooser, "decouple"):
            # the new end of the kept segment carries (carrier, +/- m1);
            # orthogonalizing it is what makes low-entanglement cuts heralded
            sign = (-1.0) ** j
            f_s, f_f, _ = orthogonalizing_filter(ctx.cb.carrier, sign * ctx.cb.m1)
            for o in chooser.take(qc.measure_kraus(done.state, [f_s, f_f], [site])):
                nb = done.step(
                    state=o.post_state,
                    prob=done.prob * o.probability,
                    steps=done.steps + (Step(site, "filter", o.outcome_index, o.probability),),
                )
                if o.outcome_index != 0:
                    out.append(
                        ProtocolTranscript(
                            steps=nb.steps, byproducts={}, branch_probability=nb.prob,
                            result=nb.state, localized=(), success=False, meta={},
                        )
                    )
                    continue
                seam_fix = ctx.chi  # maps |l> back to |chi_l>
                corrected = qc.apply_unitary(nb.state, seam_fix, [site])
                out.append(
                    ProtocolTranscript(
                        steps=nb.steps,
                        byproducts={"decouple_sign": j},
                        branch_probability=nb.prob,
                        result=corrected,
                        localized=(),
                        success=True,
                        meta={
                            "info_segment": tuple(s for s in w.labels if s <= site),
                            "fresh_segment": ResidualWire(tuple(tail), sig[j], w),
                        },
                    )
                )
    return out


def _cut_left(branch, w, site, ctx, chooser) -> list[ProtocolTranscript]:
    """Measure the prefix in X: the information transports past it."""
    prefix = [s for s in w.labels if s < site]
    out = []
    for b in _x_sweep([branch], prefix, ctx, chooser):
        out.append(
            ProtocolTranscript(
                steps=b.steps,
                byproducts={"frame": b.frame},
                branch_probability=b.prob,
                result=b.state,
                localized=(),
                success=True,
                meta={"info_segment": tuple(s for s in w.labels if s >= site),
                      "fresh_segment": None},
            )
        )
    return out


# ---------------------------------------------------------------------------
# double localization


def double_localization(w, k1: int, k2: int, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Localize a Bell pair on sites (k1, k2) of a fresh wire.

    Between-site measurements are X (transport); corrections on the two
    target qubits come from the nominal by-product bookkeeping, so branch
    deviations and wrong spacings show up as reported infidelity.
    """
    if not (1 <= k1 < k2 <= w.n):
        raise qc.InvalidSite("need 1 <= k1 < k2 <= n")
    if k2 + 1 > w.n:
        raise WireExhausted("no sites left after k2 to decouple")
    ctx = WireContext.for_wire(w)
    chooser = _Chooser(mode)
    first = _Branch(state=wr.wire_state(w), prob=1.0, steps=(), frame=np.eye(2, dtype=complex))
    branches = _x_sweep([first], range(1, k1), ctx, chooser)
    cb = ctx.cb
    f_s, f_f, _ = orthogonalizing_filter(cb.carrier, cb.m1)
    out = []
    for b in branches:
        q_vec = ctx.chi.conj().T @ b.frame @ w.left_boundary
        for o in chooser.take(qc.measure_kraus(b.state, [f_s, f_f], [k1])):
            nb = b.step(
                state=o.post_state,
                prob=b.prob * o.probability,
                steps=b.steps + (Step(k1, "filter", o.outcome_index, o.probability),),
                pair=ctx.pair0.copy(),
                minus_count=0,
            )
            if o.outcome_index != 0:
                out.append(
                    ProtocolTranscript(
                        steps=nb.steps, byproducts={}, branch_probability=nb.prob,
                        result=None, localized=(), success=False, meta={},
                    )
                )
                continue
            for bb in _x_sweep([nb], range(k1 + 1, k2), ctx, chooser):
                out.extend(_double_loc_finish(bb, w, k1, k2, ctx, chooser, q_vec))
    return out


def _double_loc_finish(branch, w, k1, k2, ctx, chooser, q_vec) -> list[ProtocolTranscript]:
    tail = [s for s in w.labels if s > k2]
    cb = ctx.cb
    # the nominal schedule assumes one full period between the targets;
    # actual-gap mismatches and non-commuting by-products show up as
    # reported infidelity rather than being rotated away
    g = wr.rotation_g(w.tau) if hasattr(w, "tau") else np.eye(2)
    u_book = np.linalg.matrix_power(g, w.tau - 1) @ np.linalg.matrix_power(
        qc.Z, branch.minus_count % 2
    )
    m_site = np.column_stack([cb.carrier, cb.m1])
    sig = [
        (cb.varphi0 + cb.varphi1) / sqrt(2),
        (cb.varphi0 - cb.varphi1) / sqrt(2),
    ]
    out = []
    for done, j in _wire_basis_measure(branch, tail, ctx, sig, chooser, "decouple"):
        d = np.diag([1.0, (-1.0) ** j]).astype(complex)
        w_book = m_site @ d @ ctx.chi.conj().T @ u_book @ ctx.pair0
        fix2 = _unitarize(np.linalg.inv(w_book))
        corrected = qc.apply_unitary(done.state, fix2, [k2])
        qn = q_vec / np.linalg.norm(q_vec)
        phases = np.array(
            [x.conjugate() / abs(x) if abs(x) > 1e-12 else 1.0 for x in qn], dtype=complex
        )
        corrected = qc.apply_unitary(corrected, np.diag(phases), [k1])
        ref = qc.bell_phi_plus((k1, k2))
        rest_labels = [l for l in corrected.labels if l not in (k1, k2)]
        rho = qc.partial_trace(corrected, rest_labels) if rest_labels else corrected.to_density()
        fid = qc.fidelity(qc.reorder_density(rho, (k1, k2)), ref)
        out.append(
            ProtocolTranscript(
                steps=done.steps,
                byproducts={"k2_correction": fix2, "minus_count": branch.minus_count},
                branch_probability=done.prob,
                result=corrected,
                localized=(k1, k2),
                success=True,
                meta={"bell_fidelity": fid,
                      "residual": ResidualWire(tuple(tail), sig[j], w)},
            )
        )
    return out


# ---------------------------------------------------------------------------
# merging


def _fuse(state, sites, kraus_list, new_label):
    """Many-sites -> one-site fusing generalized measurement."""
    mat, rest = qc._moved_to_front(state, list(sites))
    rest_labels = tuple(state.labels[p] for p in rest)
    outs = []
    for j, k in enumerate(kraus_list):
        fused = k @ mat  # (2, 2^rest)
        p = float(np.vdot(fused, fused).real)
        if p < 1e-14:
            continue
        amps = np.zeros(2 ** (len(rest_labels) + 1), dtype=complex)
        half = fused.shape[1]
        amps[:half] = fused[0]
        amps[half:] = fused[1]
        outs.append(
            qc.MeasurementOutcome(j, p, qc.PureState(amps / sqrt(p), rest_labels + (new_label,)))
        )
    total = sum(o.probability for o in outs)
    if total < 1 - 1e-9:
        raise ProtocolError(f"fusion lost probability weight ({total})")
    return outs


def merge_boundary(w1, w2, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Fuse the end of w1 with the start of w2 into one longer wire.

    Both outcomes of the fusing measurement succeed; the odd outcome
    carries a recorded flip frame. The byproducts include the seam
    rotation mapping the fused site to the plain combined-wire gauge.
    """
    if getattr(w1, "tau", None) != getattr(w2, "tau", None) or abs(w1.phi - w2.phi) > 1e-12:
        raise ProtocolError("merge requires wires from the same family")
    ctx = WireContext.for_wire(w1)
    chooser = _Chooser(mode)
    left = wr.wire_state(w1)
    right = wr.wire_state(w2, labels=tuple(("b", s) for s in w2.labels))
    state = left.tensor(right)
    seam = (w1.n, ("b", 1))
    chi = ctx.chi
    m_cols = ctx.m_cols
    kraus = []
    for flip in (0, 1):
        k = np.zeros((2, 4), dtype=complex)
        for i in (0, 1):
            k[i] = np.kron(m_cols[:, i ^ flip], chi[:, i]).conj()
        kraus.append(k)
    x_chi = np.outer(ctx.cb.chi0, ctx.cb.chi1.conj()) + np.outer(ctx.cb.chi1, ctx.cb.chi0.conj())
    transcripts = []
    for o in chooser.take(_fuse(state, seam, kraus, "r")):
        flip = o.outcome_index
        # gauge factors relating the fused site to the combined wire
        boundary_factors = np.array(
            [
                sqrt(2) * complex(np.vdot(chi[:, i ^ flip], w2.left_boundary))
                for i in (0, 1)
            ]
        )
        phases = np.array(
            [f.conjugate() / abs(f) if abs(f) > 1e-12 else 1.0 for f in boundary_factors]
        )
        seam_fix = m_cols @ np.diag(phases)
        # the odd outcome leaves a known X-type frame on the correlation flow
        corr_frame = np.eye(2, dtype=complex) if flip == 0 else x_chi
        transcripts.append(
            ProtocolTranscript(
                steps=(Step(seam, "fuse", flip, o.probability),),
                byproducts={
                    "seam_flip": flip,
                    "seam_rotation": seam_fix,
                    "seam_corr_frame": corr_frame,
                },
                branch_probability=o.probability,
                result=o.post_state,
                localized=("r",),
                success=True,
                meta={},
            )
        )
    return transcripts


def merge_star(wires, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Couple several fresh wires at their first sites into a central node."""
    ctxs = [WireContext.for_wire(w) for w in wires]
    chooser = _Chooser(mode)
    state = None
    for i, w in enumerate(wires):
        st = wr.wire_state(w, labels=tuple((i, s) for s in w.labels))
        state = st if state is None else state.tensor(st)
    first_sites = [(i, 1) for i in range(len(wires))]
    nw = len(wires)
    kraus = []
    for pattern in range(2**nw):
        k = np.zeros((2, 2**nw), dtype=complex)
        for i in (0, 1):
            vec = np.array([1.0], dtype=complex)
            for wi in range(nw - 1, -1, -1):
                flip = (pattern >> wi) & 1
                vec = np.kron(vec, ctxs[wi].m_cols[:, i ^ flip].conj())
            k[i] = vec
        kraus.append(k / sqrt(2 ** (nw - 1)))
    transcripts = []
    for o in chooser.take(_fuse(state, first_sites, kraus, "r")):
        transcripts.append(
            ProtocolTranscript(
                steps=(Step(tuple(first_sites), "fuse-star", o.outcome_index, o.probability),),
                byproducts={"pattern": o.outcome_index},
                branch_probability=o.probability,
                result=o.post_state,
                localized=("r",),
                success=True,
                meta={},
            )
        )
    return transcripts


def ghz_from_star(wires, mode: RunMode = ENUMERATE) -> list[ProtocolTranscript]:
    """Merge wires at a node and localize an (n+1)-party GHZ state."""
    ctxs = [WireContext.for_wire(w) for w in wires]
    chooser = _Chooser(mode)
    out = []
    for t in merge_star(wires, mode=mode):
        pattern = t.byproducts["pattern"]
        b0 = _Branch(
            state=t.result, prob=t.branch_probability, steps=t.steps,
            frame=np.eye(2, dtype=complex),
        )
        branches = [b0]
        phase_acc = [np.zeros(2, dtype=complex) + 1.0 for _ in range(1)]
        total_phases = np.ones(2, dtype=complex)
        for wi, w in enumerate(wires):
            cb = ctxs[wi].cb
            flip = (pattern >> wi) & 1
            # boundary factors sqrt(2)<chi_(i xor flip)|+>: per-component phases
            bf = np.array(
                [
                    sqrt(2) * complex(np.vdot(ctxs[wi].chi[:, i ^ flip], w.left_boundary))
                    for i in (0, 1)
                ]
            )
            total_phases = total_phases * bf
            tail = [(wi, s) for s in w.labels if s > 2]
            sig = [
                (cb.varphi0 + cb.varphi1) / sqrt(2),
                (cb.varphi0 - cb.varphi1) / sqrt(2),
            ]
            nxt = []
            for b in branches:
                for done, j in _wire_basis_measure(b, tail, ctxs[wi], sig, chooser, "decouple"):
                    d = np.diag([1.0, (-1.0) ** j]).astype(complex)
                    flip_m = np.eye(2) if flip == 0 else qc.X
                    align = ctxs[wi].chi.conj().T @ ctxs[wi].pair0
                    fix = _unitarize(np.linalg.inv(ctxs[wi].m_cols @ d @ align @ flip_m))
                    nxt.append(done.step(state=qc.apply_unitary(done.state, fix, [(wi, 2)])))
            branches = nxt
        phase_fix = np.diag(
            [p.conjugate() / abs(p) if abs(p) > 1e-12 else 1.0 for p in total_phases]
        )
        for b in branches:
            final = qc.apply_unitary(b.state, phase_fix, ["r"])
            out.append(
                ProtocolTranscript(
                    steps=b.steps,
                    byproducts={"pattern": pattern},
                    branch_probability=b.prob,
                    result=final,
                    localized=tuple((wi, 2) for wi in range(len(wires))) + ("r",),
                    success=True,
                    meta={},
                )
            )
    return out


def measure_center_x(transcript: ProtocolTranscript, mode: RunMode = ENUMERATE):
    """X-measure the fused center qubit after a GHZ extraction."""
    chooser = _Chooser(mode)
    results = []
    for o in chooser.take(qc.measure(transcript.result, ["r"], "X")):
        post = o.post_state
        if o.outcome_index == 1:
            post = qc.apply_unitary(post, qc.Z, [post.labels[0]])
        results.append(
            ProtocolTranscript(
                steps=transcript.steps + (Step("r", "X", o.outcome_index, o.probability),),
                byproducts=transcript.byproducts,
                branch_probability=transcript.branch_probability * o.probability,
                result=post,
                localized=tuple(l for l in transcript.localized if l != "r"),
                success=True,
                meta={},
            )
        )
    return results


# ---------------------------------------------------------------------------
# compensation stations


@dataclass(frozen=True)
class CompensationStation:
    """Bank of auxiliary wire lengths padding a site spacing to a period."""

    tau: int
    lengths: tuple

    def select(self, required_offset: int):
        off = required_offset % self.tau
        if off == 0:
            return None
        if off not in self.lengths:
            raise StationInsufficient(f"station lacks a wire of length {off}")
        return off


def compensation_station(required_offset: int, station: CompensationStation):
    """Return (selected_length, discarded_lengths); None selected = no-op."""
    sel = station.select(required_offset)
    return sel, tuple(l for l in station.lengths if l != sel)
