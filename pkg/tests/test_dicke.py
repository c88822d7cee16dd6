import numpy as np
import pytest

from deloc import dicke as dk
from deloc import qcore as qc


def outer_partial_trace(bra_state, ket_state, positions_to_trace, n):
    """Partial trace of |ket><bra| computed by raw index arithmetic."""
    op = np.outer(ket_state, bra_state.conj()).reshape([2] * (2 * n))
    keep = [p for p in range(n) if p not in positions_to_trace]
    rows = [n - 1 - p for p in reversed(keep)]
    cols = [2 * n - 1 - p for p in reversed(keep)]
    trr = [n - 1 - p for p in positions_to_trace]
    trc = [2 * n - 1 - p for p in positions_to_trace]
    m, k = len(keep), len(positions_to_trace)
    t = op.transpose(rows + cols + trr + trc).reshape(2**m, 2**m, 2**k, 2**k)
    return np.einsum("ijkk->ij", t)


# -- dicke_state -------------------------------------------------------------

def test_dicke_zero_excitations_is_product():
    st = dk.dicke_state(3, 0)
    assert st.amplitudes[0] == pytest.approx(1.0)


def test_dicke_w2():
    st = dk.dicke_state(2, 1)
    assert np.allclose(st.amplitudes, np.array([0, 1, 1, 0]) / np.sqrt(2))


def test_dicke_4_2_has_six_equal_amplitudes():
    st = dk.dicke_state(4, 2)
    nz = st.amplitudes[np.abs(st.amplitudes) > 0]
    assert len(nz) == 6
    assert np.allclose(nz, 1 / np.sqrt(6))


def test_dicke_invalid_excitation():
    with pytest.raises(dk.InvalidExcitation):
        dk.dicke_state(3, 4)


# -- dicke_decompose ---------------------------------------------------------

def test_decompose_w2():
    terms = dict(dk.dicke_decompose(2, 1, 1))
    assert terms[0] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert terms[1] == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_decompose_zero_excitation_single_term():
    terms = dk.dicke_decompose(6, 0, 3)
    assert terms == [(0, pytest.approx(1.0, abs=1e-12))]


def test_decompose_4_2_2():
    terms = dict(dk.dicke_decompose(4, 2, 2))
    assert terms[0] == pytest.approx(np.sqrt(1 / 6), abs=1e-12)
    assert terms[1] == pytest.approx(np.sqrt(4 / 6), abs=1e-12)
    assert terms[2] == pytest.approx(np.sqrt(1 / 6), abs=1e-12)


@pytest.mark.parametrize("n,k,j", [(4, 2, 2), (5, 3, 2), (6, 1, 4), (7, 4, 3)])
def test_decompose_matches_overlap_oracle(n, k, j):
    # oracle: project |n,k> onto |j,q> (x) |n-j,k-q| term by term
    st = dk.dicke_state(n, k)
    total = 0.0
    for q, coeff in dk.dicke_decompose(n, k, j):
        left = dk.dicke_state(j, q)
        right = dk.dicke_state(n - j, k - q)
        prod = np.kron(right.amplitudes, left.amplitudes)
        overlap = np.vdot(prod, st.amplitudes)
        assert abs(overlap - coeff) < 1e-12
        total += coeff**2
    assert total == pytest.approx(1.0, abs=1e-12)


def test_decompose_bad_cut():
    with pytest.raises(dk.EmptyDecomposition):
        dk.dicke_decompose(4, 2, 0)


# -- trace_out_dicke ---------------------------------------------------------

def test_trace_out_w2():
    terms = dict(dk.trace_out_dicke(2, 1, 1, 1))
    assert terms[0] == pytest.approx(0.5, abs=1e-12)
    assert terms[1] == pytest.approx(0.5, abs=1e-12)


def test_trace_out_nothing():
    assert dk.trace_out_dicke(5, 2, 2, 0) == [(0, pytest.approx(1.0, abs=1e-12))]


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
def test_trace_out_offdiag_coefficient(n):
    terms = dict(dk.trace_out_dicke(n, 0, 1, 1))
    assert terms[0] == pytest.approx(np.sqrt((n - 1) / n), abs=1e-12)
    # oracle: explicit partial trace of |n,0><n,1|
    psi0 = dk.dicke_state(n, 0).amplitudes
    psi1 = dk.dicke_state(n, 1).amplitudes
    traced = outer_partial_trace(psi1, psi0, [n - 1], n)
    expect = terms[0] * np.outer(
        dk.dicke_state(n - 1, 0).amplitudes, dk.dicke_state(n - 1, 1).amplitudes.conj()
    )
    assert np.allclose(traced, expect, atol=1e-12)


@pytest.mark.parametrize("n,k,m", [(4, 1, 1), (5, 2, 2), (6, 3, 2)])
def test_trace_out_diagonal_is_density(n, k, m):
    terms = dk.trace_out_dicke(n, k, k, m)
    coeffs = [c for _, c in terms]
    assert all(c >= 0 for c in coeffs)
    assert sum(coeffs) == pytest.approx(1.0, abs=1e-12)


def test_trace_out_too_many():
    with pytest.raises(dk.InvalidTrace):
        dk.trace_out_dicke(3, 1, 2, 3)


# -- CJ fidelity -------------------------------------------------------------

def test_cj_no_loss_is_one():
    assert dk.cj_fidelity_closed(dk.DickeCode(6, 1, 3), 0) == 1.0


def test_cj_spot_value_10_0_1():
    expect = (1 + np.sqrt(9 / 10)) ** 2 / 4
    assert dk.cj_fidelity_closed(dk.DickeCode(10, 0, 1), 1) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.9494, abs=1e-4)
    # 11-qubit dense Choi-trace oracle
    assert dk.cj_fidelity_oracle(dk.DickeCode(10, 0, 1), 1) == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize("n", [3, 5, 7])
def test_cj_ghz_single_loss(n):
    assert dk.cj_fidelity_closed(dk.DickeCode(n, 0, n), 1) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_cj_closed_matches_oracle_small_grid(n):
    for k1 in range(n):
        for k2 in range(k1 + 1, n + 1):
            code = dk.DickeCode(n, k1, k2)
            for m in (1, 2):
                if m >= n:
                    continue
                closed = dk.cj_fidelity_closed(code, m)
                oracle = dk.cj_fidelity_oracle(code, m)
                assert closed == pytest.approx(oracle, abs=1e-10), (n, k1, k2, m)


def test_best_single_loss_pair_small():
    n = 5
    scores = {
        (k1, k2): dk.cj_fidelity_closed(dk.DickeCode(n, k1, k2), 1)
        for k1 in range(n)
        for k2 in range(k1 + 1, n + 1)
    }
    best = max(scores.values())
    winners = {pair for pair, v in scores.items() if abs(v - best) < 1e-12}
    assert winners == {(0, 1), (n - 1, n)}


# -- entropy -----------------------------------------------------------------

def test_entropy_ghz_is_one():
    assert dk.dicke_entropy(dk.DickeCode(6, 0, 6)) == pytest.approx(1.0, abs=1e-12)


def test_entropy_spot_value():
    code = dk.DickeCode(4, 0, 1)
    assert dk.dicke_entropy(code) == pytest.approx(0.543564, abs=1e-6)
    assert dk.dicke_entropy_oracle(code) == pytest.approx(dk.dicke_entropy(code), abs=1e-10)


@pytest.mark.parametrize("n,k,delta", [(6, 1, 2), (7, 2, 1), (8, 0, 3)])
def test_entropy_reflection_symmetry(n, k, delta):
    a = dk.dicke_entropy(dk.DickeCode(n, k, k + delta))
    b = dk.dicke_entropy(dk.DickeCode(n, n - k - delta, n - k))
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("n", [4, 5, 6, 7])
def test_entropy_matches_reduced_density_oracle(n):
    for k1 in range(min(3, n)):
        for k2 in range(k1 + 1, min(k1 + 3, n) + 1):
            code = dk.DickeCode(n, k1, k2)
            assert dk.dicke_entropy(code) == pytest.approx(
                dk.dicke_entropy_oracle(code), abs=1e-10
            )


# -- mutual information ------------------------------------------------------

def test_mutual_info_whole_block_is_two():
    code = dk.DickeCode(4, 0, 1)
    assert dk.dicke_mutual_info(code, [1, 2, 3, 4]) == pytest.approx(2.0, abs=1e-10)


def test_mutual_info_one_party_matches_direct_construction():
    code = dk.DickeCode(4, 0, 1)
    got = dk.dicke_mutual_info(code, [1])
    # independent 5-qubit construction
    st = dk.uploading_state(*dk.codeword_states(code))
    rho = qc.partial_trace(st, [2, 3, 4])
    assert got == pytest.approx(qc.mutual_information(rho, [dk.AUX], [1]), abs=1e-12)
    assert 0.0 < got < 1.0


# -- concatenated codewords --------------------------------------------------

def test_concat_smallest_case_is_ghz_basis():
    cfg = dk.ConcatDickeCode(dk.DickeCode(1, 0, 1), 2)
    w0, w1 = dk.concat_codewords(cfg)
    ghz_p = np.array([1, 0, 0, 1]) / np.sqrt(2)
    ghz_m = np.array([0, 1, 1, 0]) / np.sqrt(2)
    assert abs(abs(np.vdot(w0.amplitudes, ghz_p)) - 1) < 1e-12
    assert abs(abs(np.vdot(w1.amplitudes, ghz_m)) - 1) < 1e-12


@pytest.mark.parametrize("base,blocks", [((2, 0, 1), 2), ((2, 0, 2), 3), ((3, 1, 2), 2)])
def test_concat_orthonormal(base, blocks):
    cfg = dk.ConcatDickeCode(dk.DickeCode(*base), blocks)
    w0, w1 = dk.concat_codewords(cfg)
    assert np.linalg.norm(w0.amplitudes) == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(w1.amplitudes) == pytest.approx(1.0, abs=1e-10)
    assert abs(np.vdot(w0.amplitudes, w1.amplitudes)) < 1e-10


# -- graph codewords ---------------------------------------------------------

def test_graph_two_vertex():
    w0, w1 = dk.graph_codewords([(1, 2)], 2)
    assert np.allclose(w0.amplitudes, np.array([1, 1, 1, -1]) / 2, atol=1e-12)
    assert abs(np.vdot(w0.amplitudes, w1.amplitudes)) < 1e-12


@pytest.mark.parametrize("edges,n", [([(1, 2)], 2), ([(1, 2), (2, 3)], 3), ([(1, 2), (2, 3), (3, 4), (4, 1)], 4)])
def test_graph_single_qubit_entanglement_maximal(edges, n):
    w0, _ = dk.graph_codewords(edges, n)
    for site in range(1, n + 1):
        rho = qc.partial_trace(w0, [l for l in w0.labels if l != site])
        assert qc.von_neumann_entropy(rho) == pytest.approx(1.0, abs=1e-10)


def test_graph_disconnected_rejected():
    with pytest.raises(dk.InvalidGraph):
        dk.graph_codewords([(1, 2)], 3)


def test_graph_z_download_localizes_deterministically():
    edges, n = [(1, 2), (2, 3)], 3
    w0, w1 = dk.graph_codewords(edges, n)
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=2) + 1j * rng.normal(size=2)
    norm = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    a, b = a / norm, b / norm
    logical = qc.PureState(a * w0.amplitudes + b * w1.amplitudes, w0.labels)
    target = 3
    neighbors = {2}
    outs = qc.measure(logical, [1, 2], "Z")
    assert sum(o.probability for o in outs) == pytest.approx(1.0, abs=1e-10)
    for o in outs:
        s1 = o.outcome_index & 1
        s2 = (o.outcome_index >> 1) & 1
        c = sum(s for site, s in ((1, s1), (2, s2)) if site in neighbors) % 2
        parity = (s1 + s2) % 2
        plus_c = np.array([1, (-1) ** c]) / np.sqrt(2)
        minus_c = np.array([1, -((-1) ** c)]) / np.sqrt(2)
        expect = a * plus_c + b * (-1) ** parity * minus_c
        expect /= np.linalg.norm(expect)
        overlap = abs(np.vdot(expect, o.post_state.amplitudes))
        assert overlap == pytest.approx(1.0, abs=1e-10)
