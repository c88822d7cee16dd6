"""Exact dense statevector/density-matrix engine over labeled qubits.

Conventions used by every other module:
  * site labels are arbitrary hashable ids; the *position* of a label in
    ``labels`` is its bit significance (first label = least significant bit),
  * all logarithms are base 2,
  * everything is a pure function of immutable inputs.

This module is deliberately small and brute-force: it is the ground truth
that closed-form results elsewhere are checked against.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

ATOL_NORM = 1e-12
ATOL_HERM = 1e-10
DEFAULT_DENSE_CAP = 20
ENV_DENSE_CAP = "DELOC_DENSE_CAP"


class QcoreError(Exception):
    pass


class InvalidSite(QcoreError):
    pass


class InvalidBasis(QcoreError):
    pass


class InvalidState(QcoreError):
    pass


class InvalidChannel(QcoreError):
    pass


def dense_cap() -> int:
    """Max number of qubits a dense object may hold (env-overridable)."""
    return int(os.environ.get(ENV_DENSE_CAP, DEFAULT_DENSE_CAP))


def _check_cap(num_qubits: int, minimum: int = 0) -> None:
    cap = dense_cap()
    if num_qubits > cap:
        raise InvalidState(f"{num_qubits} qubits exceeds dense cap {cap}")
    if num_qubits < minimum:
        raise InvalidState("need at least one qubit")


def _normalize_labels(labels, num_qubits: int) -> tuple:
    if labels is None:
        labels = tuple(range(1, num_qubits + 1))
    labels = tuple(labels)
    if len(labels) != num_qubits:
        raise InvalidSite(f"{len(labels)} labels for {num_qubits} qubits")
    if len(set(labels)) != len(labels):
        raise InvalidSite("duplicate site labels")
    return labels


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class PureState:
    """Complex amplitude vector over labeled qubits (first label = LSB)."""

    amplitudes: np.ndarray
    labels: tuple

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        n = int(np.log2(amps.size))
        if 2**n != amps.size:
            raise InvalidState("amplitude vector length is not a power of 2")
        _check_cap(n)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", _normalize_labels(self.labels, n))
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-9:
            raise InvalidState(f"state norm {norm} too far from 1")
        if abs(norm - 1.0) > ATOL_NORM:
            object.__setattr__(self, "amplitudes", amps / norm)

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def position(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidSite(f"unknown site {label!r}") from None

    def tensor(self, other: "PureState") -> "PureState":
        if set(self.labels) & set(other.labels):
            raise InvalidSite("tensor factors share labels")
        # other's labels become the high bits
        amps = np.kron(other.amplitudes, self.amplitudes)
        return PureState(amps, self.labels + other.labels)

    def to_density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.labels)

    def overlap(self, other: "PureState") -> complex:
        """<self|other>, matching sites by label."""
        if set(self.labels) != set(other.labels):
            raise InvalidSite("states live on different site sets")
        return complex(self.amplitudes.conj() @ reorder(other, self.labels).amplitudes)


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian PSD unit-trace matrix over labeled qubits."""

    matrix: np.ndarray
    labels: tuple

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        n = int(np.log2(mat.shape[0]))
        if mat.shape != (2**n, 2**n):
            raise InvalidState("density matrix must be square of dim 2^n")
        _check_cap(n, minimum=1)
        if np.max(np.abs(mat - mat.conj().T)) > ATOL_HERM:
            raise InvalidState("density matrix not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > ATOL_HERM:
            raise InvalidState(f"trace {tr} too far from 1")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "labels", _normalize_labels(self.labels, n))

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def position(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidSite(f"unknown site {label!r}") from None


def as_density(obj) -> DensityOperator:
    return obj.to_density() if isinstance(obj, PureState) else obj


def reorder(state: PureState, new_labels) -> PureState:
    """Same state with its labels listed in a different order."""
    new_labels = tuple(new_labels)
    if set(new_labels) != set(state.labels):
        raise InvalidSite("reorder must use the same label set")
    n = state.num_qubits
    src = [state.position(lb) for lb in new_labels]
    # axis k of the reshaped tensor is bit n-1-k
    psi = state.amplitudes.reshape([2] * n)
    perm = [n - 1 - src[n - 1 - k] for k in range(n)]
    return PureState(psi.transpose(perm).reshape(-1), new_labels)


def computational_state(bits, labels=None) -> PureState:
    """|b1 b2 ...> with bits listed in label order (first = LSB)."""
    bits = list(bits)
    n = len(bits)
    idx = sum(b << p for p, b in enumerate(bits))
    amps = np.zeros(2**n, dtype=complex)
    amps[idx] = 1.0
    return PureState(amps, _normalize_labels(labels, n))


def plus_state(labels=(1,)) -> PureState:
    labels = tuple(labels)
    n = len(labels)
    return PureState(np.full(2**n, 2 ** (-n / 2), dtype=complex), labels)


def single_qubit_state(vec, label=1) -> PureState:
    return PureState(np.asarray(vec, dtype=complex), (label,))


def bell_phi_plus(labels=(1, 2)) -> PureState:
    return PureState(np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2), labels)


def ghz_state(n: int, labels=None) -> PureState:
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = amps[-1] = 1 / np.sqrt(2)
    return PureState(amps, _normalize_labels(labels, n))


# ---------------------------------------------------------------------------
# Pauli matrices and friends

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

#: columns are the X eigenstates |+>, |->
X_BASIS = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
Z_BASIS = np.eye(2, dtype=complex)
Y_BASIS = np.array([[1, 1], [1j, -1j]], dtype=complex) / np.sqrt(2)
NAMED_BASES = {"X": X_BASIS, "Y": Y_BASIS, "Z": Z_BASIS}


def bell_basis() -> np.ndarray:
    """Columns |B_ab> = (X^a Z^b on the first measured site)|Phi+>, index 2a+b.

    With this convention a Bell measurement of (u, v) against a |Phi+>
    shared through u teleports the payload v up to by-product X^a Z^b.
    """
    cols = []
    phi = bell_phi_plus().amplitudes
    for a in (0, 1):
        for b in (0, 1):
            m = np.linalg.matrix_power(X, a) @ np.linalg.matrix_power(Z, b)
            cols.append(np.kron(I2, m) @ phi)
    return np.array(cols).T


def _moved_to_front(state: PureState, sites) -> tuple[np.ndarray, list]:
    """Amplitudes reshaped to (2^k, 2^(n-k)) with `sites` as the row index.

    Row index orders the requested sites with the first one least significant.
    Returns the matrix and the positions of the remaining labels.
    """
    n = state.num_qubits
    pos = [state.position(s) for s in sites]
    if len(set(pos)) != len(pos):
        raise InvalidSite("repeated site in measurement")
    rest = [p for p in range(n) if p not in pos]
    psi = state.amplitudes.reshape([2] * n)
    # axis for position p is n-1-p; build target order: rest (high) then sites
    order = [n - 1 - p for p in rest[::-1]] + [n - 1 - p for p in pos[::-1]]
    mat = psi.transpose(order).reshape(2 ** len(rest), 2 ** len(pos)).T
    return mat, rest


@dataclass(frozen=True)
class MeasurementOutcome:
    outcome_index: int
    probability: float
    post_state: object  # PureState or DensityOperator


def measure(state: PureState, sites, basis) -> list[MeasurementOutcome]:
    """Projective measurement of `sites` in an orthonormal basis.

    `basis` is a unitary whose columns are the basis states (row index:
    first measured site = LSB), or one of the names "X", "Y", "Z".
    Post-states are renormalized and no longer contain the measured sites.
    Branches with probability < 1e-14 are dropped.
    """
    sites = list(sites) if isinstance(sites, (list, tuple, set)) else [sites]
    if isinstance(basis, str):
        if basis not in NAMED_BASES:
            raise InvalidBasis(f"unknown basis {basis!r}")
        b = NAMED_BASES[basis]
        full = b
        for _ in sites[1:]:
            full = np.kron(b, full)
        basis = full
    basis = np.asarray(basis, dtype=complex)
    d = 2 ** len(sites)
    if basis.shape != (d, d) or np.max(np.abs(basis.conj().T @ basis - np.eye(d))) > ATOL_HERM:
        raise InvalidBasis("measurement basis is not unitary on the measured subspace")
    mat, rest = _moved_to_front(state, sites)
    branch_amps = basis.conj().T @ mat  # row j = unnormalized branch for outcome j
    outcomes = []
    rest_labels = tuple(state.labels[p] for p in rest)
    for j in range(d):
        vec = branch_amps[j]
        p = float(np.vdot(vec, vec).real)
        if p < 1e-14:
            continue
        outcomes.append(MeasurementOutcome(j, p, PureState(vec / np.sqrt(p), rest_labels)))
    return outcomes


def measure_kraus(state: PureState, operators, sites) -> list[MeasurementOutcome]:
    """Generalized measurement with Kraus operators acting on `sites`.

    Operators must satisfy sum K^dag K = I (1e-10). Post-states keep all
    sites. Zero-probability branches are dropped.
    """
    sites = list(sites) if isinstance(sites, (list, tuple, set)) else [sites]
    d = 2 ** len(sites)
    ops = [np.asarray(K, dtype=complex) for K in operators]
    tot = sum(K.conj().T @ K for K in ops)
    if np.max(np.abs(tot - np.eye(d))) > ATOL_HERM:
        raise InvalidChannel("Kraus operators do not sum to identity")
    mat, rest = _moved_to_front(state, sites)
    n = state.num_qubits
    outcomes = []
    for j, K in enumerate(ops):
        branched = K @ mat
        p = float(np.vdot(branched, branched).real)
        if p < 1e-14:
            continue
        # rebuild full ordering: rows are `sites` (LSB first), cols the rest
        psi = branched.T.reshape([2] * (n - len(sites)) + [2] * len(sites))
        pos = [state.position(s) for s in sites]
        order_src = [n - 1 - p2 for p2 in rest[::-1]] + [n - 1 - p2 for p2 in pos[::-1]]
        inv = np.argsort(order_src)
        vec = psi.transpose(inv).reshape(-1)
        outcomes.append(MeasurementOutcome(j, p, PureState(vec / np.sqrt(p), state.labels)))
    return outcomes


def bell_measurement(state: PureState, site_a, site_b) -> list[MeasurementOutcome]:
    """Bell measurement of two sites; outcome_index = 2a+b encodes X^a Z^b."""
    return measure(state, [site_a, site_b], bell_basis())


def apply_unitary(state: PureState, U, sites) -> PureState:
    sites = list(sites) if isinstance(sites, (list, tuple, set)) else [sites]
    U = np.asarray(U, dtype=complex)
    d = 2 ** len(sites)
    if U.shape != (d, d):
        raise InvalidBasis("operator dimension does not match site count")
    mat, rest = _moved_to_front(state, sites)
    n = state.num_qubits
    branched = U @ mat
    psi = branched.T.reshape([2] * (n - len(sites)) + [2] * len(sites))
    pos = [state.position(s) for s in sites]
    order_src = [n - 1 - p for p in rest[::-1]] + [n - 1 - p for p in pos[::-1]]
    inv = np.argsort(order_src)
    vec = psi.transpose(inv).reshape(-1)
    nrm = np.linalg.norm(vec)
    if nrm < ATOL_NORM:
        raise InvalidState("operator annihilated the state")
    return PureState(vec / nrm, state.labels)


def partial_trace(rho, sites) -> DensityOperator:
    """Trace out `sites`; remaining labels keep their original order."""
    rho = as_density(rho)
    sites = list(sites) if isinstance(sites, (list, tuple, set)) else [sites]
    if not sites:
        return rho
    pos = [rho.position(s) for s in sites]
    if len(set(pos)) != len(pos):
        raise InvalidSite("repeated site in partial trace")
    n = rho.num_qubits
    keep = [p for p in range(n) if p not in pos]
    if not keep:
        raise InvalidSite("cannot trace out every site")
    t = rho.matrix.reshape([2] * (2 * n))
    # axis of row-bit p is n-1-p; of column-bit p is 2n-1-p
    out_rows = [n - 1 - p for p in reversed(keep)]
    out_cols = [2 * n - 1 - p for p in reversed(keep)]
    tr_rows = [n - 1 - p for p in pos]
    tr_cols = [2 * n - 1 - p for p in pos]
    m, k = len(keep), len(pos)
    t = t.transpose(out_rows + out_cols + tr_rows + tr_cols)
    t = t.reshape(2**m, 2**m, 2**k, 2**k)
    mat = np.einsum("ijkk->ij", t)
    return DensityOperator(mat, tuple(rho.labels[p] for p in keep))


def von_neumann_entropy(rho) -> float:
    """Entropy in bits; eigenvalues below 1e-12 are skipped."""
    rho = as_density(rho)
    vals = np.linalg.eigvalsh(rho.matrix)
    if vals.min() < -ATOL_HERM:
        raise InvalidState(f"density operator has negative eigenvalue {vals.min()}")
    vals = np.clip(vals, 0.0, None)
    vals = vals[vals > 1e-12]
    return float(-np.sum(vals * np.log2(vals)))


def mutual_information(rho, part_q, part_t) -> float:
    """I(q;t) = S(q) + S(t) - S(q,t) in bits. Parts must partition the sites."""
    rho = as_density(rho)
    part_q = list(part_q) if isinstance(part_q, (list, tuple, set)) else [part_q]
    part_t = list(part_t) if isinstance(part_t, (list, tuple, set)) else [part_t]
    if set(part_q) & set(part_t):
        raise InvalidSite("parts overlap")
    if set(part_q) | set(part_t) != set(rho.labels):
        raise InvalidSite("parts must cover all sites")
    s_q = von_neumann_entropy(partial_trace(rho, part_t))
    s_t = von_neumann_entropy(partial_trace(rho, part_q))
    return s_q + s_t - von_neumann_entropy(rho)


def fidelity(rho, target: PureState) -> float:
    """<target|rho|target>, matching sites by label."""
    rho = as_density(rho)
    if set(rho.labels) != set(target.labels):
        raise InvalidSite("states live on different site sets")
    vec = reorder(target, rho.labels).amplitudes
    val = float((vec.conj() @ rho.matrix @ vec).real)
    if val > 1 + ATOL_HERM:
        raise InvalidState(f"fidelity {val} above 1")
    return min(val, 1.0)


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True)
class KrausChannel:
    """A CPTP map given by Kraus operators of equal dimension."""

    operators: tuple

    def __post_init__(self):
        ops = tuple(np.asarray(K, dtype=complex) for K in self.operators)
        if not ops:
            raise InvalidChannel("no Kraus operators")
        d = ops[0].shape[0]
        tot = sum(K.conj().T @ K for K in ops)
        if np.max(np.abs(tot - np.eye(d))) > ATOL_HERM:
            raise InvalidChannel("sum K^dag K != I")
        object.__setattr__(self, "operators", ops)

    @property
    def rank(self) -> int:
        return len(self.operators)

    def apply(self, rho, sites) -> DensityOperator:
        rho = as_density(rho)
        sites = list(sites) if isinstance(sites, (list, tuple, set)) else [sites]
        pos = [rho.position(s) for s in sites]
        n = rho.num_qubits
        out = np.zeros_like(rho.matrix)
        for K in self.operators:
            full = _embed(K, pos, n)
            out += full @ rho.matrix @ full.conj().T
        return DensityOperator(out, rho.labels)


def _embed(op: np.ndarray, positions, n: int) -> np.ndarray:
    """Embed an operator on the given bit positions into the full space."""
    k = len(positions)
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    mask = sum(1 << p for p in positions)
    rest_idx = np.array([i for i in range(dim) if i & mask == 0])
    for a in range(2**k):
        abits = sum(((a >> j) & 1) << positions[j] for j in range(k))
        for b in range(2**k):
            v = op[a, b]
            if v == 0:
                continue
            bbits = sum(((b >> j) & 1) << positions[j] for j in range(k))
            out[rest_idx | abits, rest_idx | bbits] += v
    return out


def choi_state(channel: KrausChannel, labels=("aux", "q")) -> DensityOperator:
    """(id (x) channel)(|Phi+><Phi+|) with the channel on the second label."""
    rho = bell_phi_plus(labels).to_density()
    return channel.apply(rho, [labels[1]])


def kraus_from_map(input_state: PureState, output: DensityOperator) -> KrausChannel:
    """Reconstruct the single-qubit channel from its image of |Phi+>.

    `input_state` must be the two-qubit |Phi+> reference (first label aux,
    second the channel qubit). The output is diagonalized and each
    eigenvector |m_i> with weight m_i yields a Kraus operator via
    K_i |Phi+> = sqrt(m_i)|m_i>.
    """
    if input_state.num_qubits != 2 or output.num_qubits != 2:
        raise InvalidState("kraus_from_map expects two-qubit states")
    ref = bell_phi_plus(input_state.labels)
    if abs(abs(ref.overlap(input_state)) - 1.0) > 1e-9:
        raise InvalidState("input reference is not |Phi+>")
    out = reorder_density(output, input_state.labels)
    vals, vecs = np.linalg.eigh(out.matrix)
    if vals.min() < -ATOL_HERM:
        raise InvalidState("output is not PSD")
    ops = []
    for i in range(len(vals)):
        m = max(vals[i], 0.0)
        if m < 1e-12:
            continue
        v = vecs[:, i]
        # amplitude index j + 2k  ->  matrix element K[k, j]
        K = np.sqrt(2 * m) * v.reshape(2, 2)
        ops.append(K)
    return KrausChannel(tuple(ops))


def reorder_density(rho: DensityOperator, new_labels) -> DensityOperator:
    new_labels = tuple(new_labels)
    if set(new_labels) != set(rho.labels):
        raise InvalidSite("reorder must use the same label set")
    n = rho.num_qubits
    src = [rho.position(lb) for lb in new_labels]
    t = rho.matrix.reshape([2] * (2 * n))
    perm_row = [n - 1 - src[n - 1 - k] for k in range(n)]
    perm = perm_row + [n + p for p in perm_row]
    return DensityOperator(t.transpose(perm).reshape(2**n, 2**n), new_labels)


def phase_flip_channel(q: float) -> KrausChannel:
    """rho -> (1-q) rho + q Z rho Z."""
    return KrausChannel((np.sqrt(1 - q) * I2, np.sqrt(q) * Z))
