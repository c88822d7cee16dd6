import numpy as np
import pytest

from deloc import qcore as qc


def test_partial_trace_bell_gives_maximally_mixed():
    rho = qc.partial_trace(qc.bell_phi_plus(), [2])
    assert rho.labels == (1,)
    assert np.allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)


def test_partial_trace_nothing_is_identity_case():
    rho = qc.bell_phi_plus().to_density()
    out = qc.partial_trace(rho, [])
    assert np.allclose(out.matrix, rho.matrix)


def test_partial_trace_w2_explicit():
    w2 = qc.PureState(np.array([0, 1, 1, 0]) / np.sqrt(2), (1, 2))
    out = qc.partial_trace(w2, [1])
    # direct 4x4 arithmetic: rho = I/2 on the remaining qubit
    assert np.allclose(out.matrix, np.eye(2) / 2, atol=1e-12)


def test_partial_trace_composes_and_is_order_independent():
    rng = np.random.default_rng(5)
    amps = rng.normal(size=16) + 1j * rng.normal(size=16)
    st = qc.PureState(amps / np.linalg.norm(amps), ("a", "b", "c", "d"))
    one = qc.partial_trace(qc.partial_trace(st, ["b"]), ["d"])
    both = qc.partial_trace(st, ["d", "b"])
    assert one.labels == both.labels
    assert np.allclose(one.matrix, both.matrix, atol=1e-12)


def test_partial_trace_unknown_site():
    with pytest.raises(qc.InvalidSite):
        qc.partial_trace(qc.bell_phi_plus(), [7])


def test_measure_x_basis_of_zero():
    st = qc.computational_state([0])
    outs = qc.measure(st, [1], "X")
    assert len(outs) == 2
    for o in outs:
        assert o.probability == pytest.approx(0.5, abs=1e-12)


def test_measure_z_on_plus_zero_leaves_partner_untouched():
    st = qc.plus_state((1,)).tensor(qc.computational_state([0], (2,)))
    outs = qc.measure(st, [1], "Z")
    assert [o.probability for o in outs] == pytest.approx([0.5, 0.5], abs=1e-12)
    for o in outs:
        assert o.post_state.labels == (2,)
        assert abs(o.post_state.amplitudes[0]) == pytest.approx(1.0, abs=1e-12)


def test_measure_probabilities_sum_to_one_and_recombine():
    rng = np.random.default_rng(11)
    amps = rng.normal(size=8) + 1j * rng.normal(size=8)
    st = qc.PureState(amps / np.linalg.norm(amps), (1, 2, 3))
    outs = qc.measure(st, [2], "Y")
    assert sum(o.probability for o in outs) == pytest.approx(1.0, abs=1e-10)
    # recombining the branches reproduces the dephased density operator
    basis = qc.Y_BASIS
    rho = st.to_density()
    dephased = np.zeros_like(rho.matrix)
    for j in range(2):
        proj = qc._embed(np.outer(basis[:, j], basis[:, j].conj()), [1], 3)
        dephased += proj @ rho.matrix @ proj
    recombined = np.zeros((4, 4), dtype=complex)
    for o in outs:
        recombined += o.probability * o.post_state.to_density().matrix
    assert np.allclose(recombined, qc.partial_trace(qc.DensityOperator(dephased, (1, 2, 3)), [2]).matrix, atol=1e-10)


def test_measure_invalid_basis():
    with pytest.raises(qc.InvalidBasis):
        qc.measure(qc.computational_state([0]), [1], np.array([[1, 1], [0, 1]]))


def test_bell_measurement_teleports():
    rng = np.random.default_rng(3)
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    v /= np.linalg.norm(v)
    payload = qc.single_qubit_state(v, 3)
    st = qc.bell_phi_plus((1, 2)).tensor(payload)
    outs = qc.bell_measurement(st, 2, 3)
    assert len(outs) == 4
    for o in outs:
        assert o.probability == pytest.approx(0.25, abs=1e-12)
        a, b = divmod(o.outcome_index, 2)
        corr = np.linalg.matrix_power(qc.X, a) @ np.linalg.matrix_power(qc.Z, b)
        got = o.post_state.amplitudes
        expect = corr @ v
        phase = expect @ got.conj()
        assert np.allclose(got * phase / abs(phase), expect, atol=1e-10)


def test_bell_self_measurement_deterministic():
    outs = qc.bell_measurement(qc.bell_phi_plus((1, 2)).tensor(qc.computational_state([0], (9,))), 1, 2)
    top = max(outs, key=lambda o: o.probability)
    assert top.outcome_index == 0
    assert top.probability == pytest.approx(1.0, abs=1e-12)


def test_entropy_values():
    assert qc.von_neumann_entropy(qc.DensityOperator(np.eye(2) / 2, (1,))) == pytest.approx(1.0, abs=1e-12)
    assert qc.von_neumann_entropy(qc.computational_state([0, 1])) == pytest.approx(0.0, abs=1e-12)
    rho = qc.DensityOperator(np.diag([1 / 8, 7 / 8]), (1,))
    h = -(1 / 8) * np.log2(1 / 8) - (7 / 8) * np.log2(7 / 8)
    assert qc.von_neumann_entropy(rho) == pytest.approx(h, abs=1e-12)
    assert h == pytest.approx(0.5436, abs=1e-4)


def test_entropy_unitary_invariant():
    rng = np.random.default_rng(8)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    u, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    a = qc.von_neumann_entropy(qc.DensityOperator(rho, (1, 2)))
    b = qc.von_neumann_entropy(qc.DensityOperator(u @ rho @ u.conj().T, (1, 2)))
    assert a == pytest.approx(b, abs=1e-10)


def test_mutual_information_product_and_bell():
    prod = qc.plus_state((1,)).tensor(qc.plus_state((2,)))
    assert qc.mutual_information(prod, [1], [2]) == pytest.approx(0.0, abs=1e-10)
    assert qc.mutual_information(qc.bell_phi_plus(), [1], [2]) == pytest.approx(2.0, abs=1e-10)


def test_mutual_information_ghz_uploading_state():
    # aux entangled with GHZ codewords: I(aux; one block qubit) = 1
    n = 4
    amps = np.zeros(2 ** (n + 1), dtype=complex)
    amps[0] = 1 / np.sqrt(2)
    amps[-1] = 1 / np.sqrt(2)
    st = qc.PureState(amps, ("aux", 1, 2, 3, 4))
    rho = qc.partial_trace(st, [2, 3, 4])
    assert qc.mutual_information(rho, ["aux"], [1]) == pytest.approx(1.0, abs=1e-10)


def test_fidelity_examples():
    phi = qc.bell_phi_plus()
    assert qc.fidelity(phi, phi) == pytest.approx(1.0, abs=1e-12)
    assert qc.fidelity(qc.DensityOperator(np.eye(4) / 4, (1, 2)), phi) == pytest.approx(0.25, abs=1e-12)
    minus = qc.PureState(np.array([1, 0, 0, -1]) / np.sqrt(2), (1, 2))
    assert qc.fidelity(minus, phi) == pytest.approx(0.0, abs=1e-12)


def test_kraus_from_identity_map():
    phi = qc.bell_phi_plus(("aux", "q"))
    ch = qc.kraus_from_map(phi, phi.to_density())
    assert ch.rank == 1
    k = ch.operators[0]
    assert np.allclose(k @ k.conj().T, np.eye(2), atol=1e-10)


def test_kraus_from_phase_flip_choi():
    phi = qc.bell_phi_plus(("aux", "q"))
    target = qc.phase_flip_channel(0.5)
    out = target.apply(phi, ["q"])
    ch = qc.kraus_from_map(phi, out)
    assert ch.rank == 2
    # reconstruction reproduces the output Choi state
    redo = ch.apply(phi, ["q"])
    assert np.allclose(redo.matrix, out.matrix, atol=1e-10)


def test_kraus_reconstruction_random_channel():
    rng = np.random.default_rng(21)
    # random CPTP qubit channel from a Stinespring isometry
    m = rng.normal(size=(8, 2)) + 1j * rng.normal(size=(8, 2))
    q, _ = np.linalg.qr(m)
    ops = [q[2 * i : 2 * i + 2, :] for i in range(4)]
    ch = qc.KrausChannel(tuple(ops))
    phi = qc.bell_phi_plus(("aux", "q"))
    out = ch.apply(phi, ["q"])
    rebuilt = qc.kraus_from_map(phi, out)
    redo = rebuilt.apply(phi, ["q"])
    assert np.allclose(redo.matrix, out.matrix, atol=1e-10)


def test_kraus_channel_completeness_enforced():
    with pytest.raises(qc.InvalidChannel):
        qc.KrausChannel((qc.X * 0.5,))


def test_apply_unitary_and_normalization():
    st = qc.computational_state([0, 0])
    st = qc.apply_unitary(st, qc.H, [1])
    st = qc.apply_unitary(st, np.kron(qc.X, qc.I2), [1, 2])  # CX-free sanity: X on site 2
    assert np.linalg.norm(st.amplitudes) == pytest.approx(1.0, abs=1e-12)


def test_dense_cap_enforced(monkeypatch):
    monkeypatch.setenv(qc.ENV_DENSE_CAP, "3")
    with pytest.raises(qc.InvalidState):
        qc.computational_state([0, 0, 0, 0])
    monkeypatch.delenv(qc.ENV_DENSE_CAP)
