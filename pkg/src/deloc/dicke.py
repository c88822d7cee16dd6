"""Dicke-state codewords and their closed-form storage metrics.

Closed forms are computed with log-gamma binomials so they stay usable well
beyond the dense cap; everything that fits densely is cross-checked against
the brute-force engine in :mod:`deloc.qcore`.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import lgamma, exp, sqrt, log2

import numpy as np

from . import qcore as qc

AUX = "aux"


class DickeError(Exception):
    pass


class InvalidExcitation(DickeError):
    pass


class EmptyDecomposition(DickeError):
    pass


class InvalidTrace(DickeError):
    pass


class InvalidGraph(DickeError):
    pass


def _lbinom(n: int, k: int) -> float:
    return lgamma(n + 1) - lgamma(k + 1) - lgamma(n - k + 1)


def binom(n: int, k: int) -> float:
    """C(n, k) as a float, zero outside the valid range."""
    if k < 0 or k > n or n < 0:
        return 0.0
    return exp(_lbinom(n, k))


@dataclass(frozen=True)
class DickeCode:
    """Codeword pair |n,k1>, |n,k2> of a single logical qubit."""

    n: int
    k1: int
    k2: int

    def __post_init__(self):
        if not (0 <= self.k1 < self.k2 <= self.n):
            raise InvalidExcitation(f"need 0 <= k1 < k2 <= n, got ({self.n},{self.k1},{self.k2})")


@dataclass(frozen=True)
class ConcatDickeCode:
    """N-fold concatenation of a base Dicke codeword pair."""

    base: DickeCode
    blocks: int

    def __post_init__(self):
        if self.blocks < 1:
            raise InvalidExcitation("need at least one block")

    @property
    def total_qubits(self) -> int:
        return self.base.n * self.blocks


def dicke_state(n: int, k: int, labels=None) -> qc.PureState:
    """Equal superposition of all n-bit strings with k ones."""
    if not (0 <= k <= n):
        raise InvalidExcitation(f"excitation {k} outside 0..{n}")
    amps = np.zeros(2**n, dtype=complex)
    coeff = 1.0 / sqrt(binom(n, k))
    for ones in combinations(range(n), k):
        amps[sum(1 << p for p in ones)] = coeff
    return qc.PureState(amps, labels if labels is not None else tuple(range(1, n + 1)))


def codeword_states(code: DickeCode, labels=None) -> tuple[qc.PureState, qc.PureState]:
    return dicke_state(code.n, code.k1, labels), dicke_state(code.n, code.k2, labels)


def uploading_state(word0: qc.PureState, word1: qc.PureState, aux=AUX) -> qc.PureState:
    """(|0>_aux |w0> + |1>_aux |w1>)/sqrt(2) with the aux qubit first."""
    if word0.labels != word1.labels:
        raise qc.InvalidSite("codewords must share labels")
    dim = word0.amplitudes.size
    amps = np.zeros(2 * dim, dtype=complex)
    amps[0::2] = word0.amplitudes / sqrt(2)
    amps[1::2] = word1.amplitudes / sqrt(2)
    return qc.PureState(amps, (aux,) + word0.labels)


def logical_bell_state(word0: qc.PureState, word1: qc.PureState, relabel) -> qc.PureState:
    """(|w0 w0'> + |w1 w1'>)/sqrt(2) over two blocks; relabel maps block-2 labels."""
    w0b = qc.PureState(word0.amplitudes, tuple(relabel(l) for l in word0.labels))
    w1b = qc.PureState(word1.amplitudes, tuple(relabel(l) for l in word1.labels))
    amps = (
        np.kron(w0b.amplitudes, word0.amplitudes) + np.kron(w1b.amplitudes, word1.amplitudes)
    ) / sqrt(2)
    return qc.PureState(amps, word0.labels + w0b.labels)


def dicke_decompose(n: int, k: int, j: int) -> list[tuple[int, float]]:
    """Split |n,k> across a j / (n-j) cut: terms (q, coeff) over |j,q>|n-j,k-q>."""
    if not (0 < j < n):
        raise EmptyDecomposition(f"cut size {j} outside 1..{n - 1}")
    if not (0 <= k <= n):
        raise InvalidExcitation(f"excitation {k} outside 0..{n}")
    q_lo = max(0, j + k - n)
    q_hi = min(j, k)
    pref = 0.5 * (lgamma(n + 1) - _lbinom(n, k) - _lbinom(n, j))
    terms = []
    for q in range(q_lo, q_hi + 1):
        lden = 0.5 * (
            lgamma(q + 1) + lgamma(j - q + 1) + lgamma(k - q + 1) + lgamma(n - k - j + q + 1)
        )
        terms.append((q, exp(pref - lden)))
    if not terms:
        raise EmptyDecomposition("no valid terms in decomposition")
    return terms


def trace_out_dicke(n: int, k1: int, k2: int, m: int) -> list[tuple[int, float]]:
    """Coefficients of Tr_m |n,k1><n,k2| over |n_f,k1-i><n_f,k2-i|, n_f = n-m."""
    if not (0 <= m < n):
        raise InvalidTrace(f"cannot trace {m} of {n} qubits")
    n_f = n - m
    terms = []
    for i in range(0, min(k1, k2) + 1):
        if k1 - i > n_f or k2 - i > n_f or i > m:
            continue
        c = binom(m, i) * sqrt(binom(n_f, k1 - i) * binom(n_f, k2 - i)) / sqrt(
            binom(n, k1) * binom(n, k2)
        )
        if c != 0.0:
            terms.append((i, c))
    return terms


def _ladder_weight(n: int, k: int, m: int, kappa: int) -> float:
    """Weight of |n_f,kappa><n_f,kappa| in Tr_m |n,k><n,k|."""
    i = k - kappa
    n_f = n - m
    if i < 0 or i > m or kappa < 0 or kappa > n_f:
        return 0.0
    return binom(m, i) * binom(n_f, kappa) / binom(n, k)


def cj_fidelity_closed(code: DickeCode, losses: int) -> float:
    """CJ fidelity after tracing `losses` block qubits, closed form.

    The reference is the best relabeled codeword pair (n_f, kappa1, kappa2)
    of the shrunken block; the freedom of relabeling the logical basis after
    losses is part of the figure of merit.
    """
    n, k1, k2 = code.n, code.k1, code.k2
    if losses >= n:
        raise InvalidTrace("cannot lose the whole block")
    if losses == 0:
        return 1.0
    n_f = n - losses
    cross = {(k1 - i, k2 - i): c for i, c in trace_out_dicke(n, k1, k2, losses)}
    best = 0.0
    for kap1 in range(n_f + 1):
        d1 = _ladder_weight(n, k1, losses, kap1)
        for kap2 in range(n_f + 1):
            if kap1 == kap2:
                continue
            d2 = _ladder_weight(n, k2, losses, kap2)
            f = 0.25 * (d1 + d2 + 2.0 * cross.get((kap1, kap2), 0.0))
            best = max(best, f)
    return best


def cj_fidelity_oracle(code: DickeCode, losses: int) -> float:
    """Dense oracle for cj_fidelity_closed: build, trace, maximize fidelity."""
    n = code.n
    if losses >= n:
        raise InvalidTrace("cannot lose the whole block")
    word0, word1 = codeword_states(code)
    state = uploading_state(word0, word1)
    if losses == 0:
        return 1.0
    lost = list(range(n - losses + 1, n + 1))
    gamma = qc.partial_trace(state, lost)
    n_f = n - losses
    best = 0.0
    for kap1 in range(n_f + 1):
        for kap2 in range(n_f + 1):
            if kap1 == kap2:
                continue
            ref = uploading_state(dicke_state(n_f, kap1), dicke_state(n_f, kap2))
            best = max(best, qc.fidelity(gamma, ref))
    return best


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * log2(p) - (1 - p) * log2(1 - p)


def dicke_entropy(code: DickeCode) -> float:
    """Single-particle entropy of entanglement of the encoded Bell state."""
    return binary_entropy((code.k1 + code.k2) / (2 * code.n))


def dicke_entropy_oracle(code: DickeCode) -> float:
    word0, word1 = codeword_states(code)
    state = uploading_state(word0, word1)
    keep_out = [l for l in state.labels if l != 1]
    return qc.von_neumann_entropy(qc.partial_trace(state, keep_out))


def dicke_mutual_info(code: DickeCode, party_set) -> float:
    """I(aux; party_set) of the uploading state, via the dense engine."""
    party_set = list(party_set)
    word0, word1 = codeword_states(code)
    state = uploading_state(word0, word1)
    for s in party_set:
        state.position(s)  # validates membership
    others = [l for l in word0.labels if l not in party_set]
    rho = qc.partial_trace(state, others) if others else state.to_density()
    return qc.mutual_information(rho, [AUX], party_set)


def concat_codewords(cfg: ConcatDickeCode) -> tuple[qc.PureState, qc.PureState]:
    """Concatenated codewords: N-fold products of the +/- base combinations."""
    base0, base1 = codeword_states(cfg.base)
    plus = qc.PureState((base0.amplitudes + base1.amplitudes) / sqrt(2), base0.labels)
    minus = qc.PureState((base0.amplitudes - base1.amplitudes) / sqrt(2), base0.labels)
    m = cfg.base.n
    p_amps = plus.amplitudes
    m_amps = minus.amplitudes
    prod_p, prod_m = p_amps, m_amps
    for _ in range(cfg.blocks - 1):
        prod_p = np.kron(prod_p, p_amps)
        prod_m = np.kron(prod_m, m_amps)
    labels = tuple(range(1, m * cfg.blocks + 1))
    w0 = qc.PureState((prod_p + prod_m) / sqrt(2), labels)
    w1 = qc.PureState((prod_p - prod_m) / sqrt(2), labels)
    return w0, w1


def graph_state(edges, n: int, labels=None) -> qc.PureState:
    """|G> = prod CZ_(k,l) |+>^n for a connected graph given by its edges."""
    edges = [tuple(e) for e in edges]
    verts = set()
    for a, b in edges:
        verts.update((a, b))
    if not verts <= set(range(1, n + 1)):
        raise InvalidGraph("edge endpoints outside 1..n")
    # connectivity check
    adj = {v: set() for v in range(1, n + 1)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {1}, [1]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    if len(seen) != n:
        raise InvalidGraph("graph is not connected")
    amps = np.full(2**n, 2 ** (-n / 2), dtype=complex)
    idx = np.arange(2**n)
    for a, b in edges:
        mask = ((idx >> (a - 1)) & 1) & ((idx >> (b - 1)) & 1)
        amps = np.where(mask == 1, -amps, amps)
    return qc.PureState(amps, labels if labels is not None else tuple(range(1, n + 1)))


def graph_codewords(edges, n: int, labels=None) -> tuple[qc.PureState, qc.PureState]:
    """Stabilizer codewords |G> and sigma_z^n |G>."""
    g = graph_state(edges, n, labels)
    idx = np.arange(2**n)
    parity = np.zeros(2**n, dtype=int)
    for p in range(n):
        parity ^= (idx >> p) & 1
    signs = np.where(parity == 1, -1.0, 1.0)
    return g, qc.PureState(g.amplitudes * signs, g.labels)
