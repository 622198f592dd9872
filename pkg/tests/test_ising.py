import itertools
import math

import numpy as np
import pytest

from oracles import dense_ising_unitary, dense_pauli
from qpdcv.ising import (
    LAYER_TYPES,
    IsingCircuitSpec,
    NoiseModel,
    PecRunner,
    Simulator,
    all_observables,
    build_circuit,
    build_qpd,
    epsilon_from_table_value,
    load_noise_params,
    observable_value,
    parse_noise_params,
    pauli_masks,
    sample_outcomes,
    shipped_noise,
    simulate_shot,
)
from qpdcv.qpd import gamma


def spec(q=4, n_trot=1, h=1.0, j=0.15, dt=0.5):
    return IsingCircuitSpec(q, n_trot, h, j, dt)


def test_spec_angles_and_validation():
    s = spec()
    assert s.theta_x == pytest.approx(1.0) and s.theta_z == pytest.approx(-0.15)
    with pytest.raises(ValueError):
        IsingCircuitSpec(1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        IsingCircuitSpec(4, 0, 1, 1, 1)


def test_epsilon_conversion():
    assert epsilon_from_table_value(0.0) == 0.0
    assert epsilon_from_table_value(0.000669974414) == pytest.approx((1 - math.exp(-0.001339948828)) / 2, rel=1e-12)
    assert epsilon_from_table_value(0.000669974414) == pytest.approx(6.6953e-4, rel=1e-4)


def test_shipped_tables():
    n4, n10 = shipped_noise(4), shipped_noise(10)
    assert n4.n_paulis == 39 and n10.n_paulis == 111
    assert n4.paulis[0] == "XIII"
    assert n4.epsilons[0, 0] == pytest.approx(epsilon_from_table_value(0.000669974414))
    with pytest.raises(ValueError):
        shipped_noise(7)


@pytest.mark.parametrize(
    "text",
    [
        "XIII 0.1",  # missing column
        "XAII 0.1 0.1",  # bad letter
        "XIII abc 0.1",  # non-numeric
        "XIIX 0.1 0.1",  # non-adjacent support
        "IIII 0.1 0.1",  # empty support
        "XIII -0.1 0.1",  # negative
        "XIII inf 0.1",  # eps would be 0.5
        "",  # no rows
    ],
)
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_noise_params(text)


def test_load_noise_file(tmp_path):
    p = tmp_path / "n.txt"
    p.write_text("# two qubits\nXI 0.01 0.02\nZZ 0 0.03\n")
    n = load_noise_params(p)
    assert n.paulis == ("XI", "ZZ") and n.epsilons[0, 1] == 0.0
    assert [t.pauli for t in n.terms_by_layer_type[1]] == ["XI", "ZZ"]


def test_pauli_masks():
    assert pauli_masks("XIII") == (0b1000, 0)
    assert pauli_masks("IYZI") == (0b0100, 0b0110)


def test_build_qpd_structure():
    noise = shipped_noise(4)
    pec = build_qpd(noise, spec())
    assert pec.m_total == 156
    assert pec.model.n_positions == 156 - int(np.sum(noise.epsilons == 0) * 2)
    for info, qm in zip(pec.positions, pec.model.q):
        eps = noise.epsilons[info.layer_type - 1, info.term]
        assert eps > 0
        assert info.layer_type == LAYER_TYPES[info.occurrence]
        np.testing.assert_allclose(qm, [(1 - eps) / (1 - 2 * eps), -eps / (1 - 2 * eps)])
        np.testing.assert_allclose(pec.model.p[pec.positions.index(info)], [1 - eps, eps])
    with pytest.raises(ValueError):
        build_qpd(noise, spec(q=5))


def test_gamma_multiplicative():
    noise = shipped_noise(4)
    g1 = gamma(build_qpd(noise, spec()).model)
    for n in (2, 5):
        assert gamma(build_qpd(noise, spec(n_trot=n)).model) == pytest.approx(g1**n, rel=1e-12)


def test_grouping_partitions_positions():
    noise = shipped_noise(4)
    pec = build_qpd(noise, spec(n_trot=2))
    for info, (kind, qb) in zip(pec.positions, pec.grouping):
        sup = [i for i, c in enumerate(noise.paulis[info.term]) if c != "I"]
        assert (kind, qb) == (("single", sup[0]) if len(sup) == 1 else ("pair", sup[0]))


def test_circuit_layers():
    layers = build_circuit(spec(n_trot=3))
    cn = [l for l in layers if l.kind == "cnot"]
    assert [l.layer_type for l in cn] == [1, 1, 2, 2] * 3
    assert [l.noisy_index for l in cn] == list(range(12))
    assert cn[0].qubits == ((0, 1), (2, 3)) and cn[2].qubits == ((1, 2),)


@pytest.mark.parametrize("n_trot", [1, 2, 3])
def test_noiseless_matches_dense_oracle(n_trot):
    s = spec(n_trot=n_trot)
    psi = Simulator(s).final_state("Z")[0]
    u = dense_ising_unitary(4, n_trot, s.theta_x, s.theta_z)
    np.testing.assert_allclose(psi, u[:, 0], atol=1e-10)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-10)


def test_pauli_application_matches_dense():
    sim = Simulator(spec(n_trot=1))
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi /= np.linalg.norm(psi)
    for pauli in ("XIII", "IYII", "IIZZ", "YXZI"):
        x, z = pauli_masks(pauli)
        got = sim.apply_pauli(psi[None], [x], [z])[0]
        ref = dense_pauli(pauli) @ psi
        phase = np.vdot(got, ref)
        assert abs(abs(phase) - 1) < 1e-12
        np.testing.assert_allclose(got * phase, ref, atol=1e-12)


def test_folding_paulis_is_exact():
    sim = Simulator(spec(n_trot=2))
    a, b = pauli_masks("XYII"), pauli_masks("IZZI")
    n = sim.dim
    st = sim.initial_state(1)
    seq = sim.apply_pauli(sim.apply_pauli(st, [a[0]], [a[1]]), [b[0]], [b[1]])
    fold = sim.apply_pauli(st, [a[0] ^ b[0]], [a[1] ^ b[1]])
    np.testing.assert_allclose(np.abs(seq) ** 2, np.abs(fold) ** 2, atol=1e-14)
    assert n == 16


def test_double_insertion_cancels():
    sim = Simulator(spec(n_trot=2))
    x = np.zeros((1, 8), dtype=np.int64)
    z = np.zeros_like(x)
    xm, zm = pauli_masks("IXII")
    x2, z2 = x.copy(), z.copy()
    x2[0, 3] ^= xm ^ xm
    z2[0, 3] ^= zm ^ zm
    np.testing.assert_allclose(sim.final_state("Y", (x2, z2)), sim.final_state("Y", (x, z)))


@pytest.mark.parametrize("n_trot", [1, 2, 3])
def test_zero_coupling_analytic(n_trot):
    runner = PecRunner(spec(n_trot=n_trot, j=0.0), shipped_noise(4))
    ez = runner.exact_expectations("Z")
    ey = runner.exact_expectations("Y")
    assert ez[0] == pytest.approx(math.cos(n_trot * 1.0), abs=1e-10)
    assert ey[0] == pytest.approx(-math.sin(n_trot * 1.0), abs=1e-10)


def test_observables():
    assert np.allclose(all_observables(np.ones(4)), 1.0)
    bits = np.array([1, -1])
    assert observable_value(bits, 1) == 0.0
    assert observable_value(bits, 2) == -1.0
    assert observable_value(bits, "nn") == -1.0
    rng = np.random.default_rng(0)
    b = rng.choice([-1, 1], 4)
    for k in range(1, 5):
        brute = np.mean([np.prod(b[list(c)]) for c in itertools.combinations(range(4), k)])
        assert observable_value(b, f"w{k}") == pytest.approx(brute)
    with pytest.raises(ValueError):
        observable_value(b, 5)


def test_sample_outcomes_guard():
    probs = np.array([[0.5, 0.5 - 1e-17, 0.0]])
    assert sample_outcomes(probs, np.array([1.0 - 1e-18]))[0] <= 2


def two_qubit_noise(eps=(0.02, 0.03, 0.01)):
    e = np.array([eps, eps])
    return NoiseModel(("XI", "IY", "ZZ"), e)


def test_shot_mean_converges_noiseless():
    noise = two_qubit_noise((0.0, 0.0, 0.0))
    runner = PecRunner(spec(q=2, n_trot=2), noise)
    exact = runner.exact_expectations("Z")
    rec = runner.run_instance(None, 4096, ("Z",), np.random.default_rng(1))
    sd = np.sqrt((1 - exact**2) / 4096)
    assert np.all(np.abs(rec.mean["Z"] - exact) <= 4 * sd + 1e-12)


def test_trivial_circuit_all_plus():
    runner = PecRunner(IsingCircuitSpec(4, 2, 0.0, 0.0, 0.5), shipped_noise(4).scaled(0.0))
    rec = runner.run_instance(None, 8, ("Z",), np.random.default_rng(0))
    np.testing.assert_array_equal(rec.mean["Z"], 1.0)
    np.testing.assert_array_equal(rec.var["Z"], 0.0)


def test_run_instance_deterministic():
    runner = PecRunner(spec(n_trot=2), shipped_noise(4))
    idx = np.zeros(runner.pec.model.n_positions, dtype=int)
    idx[::7] = 1
    a = runner.run_instance(idx, 32, ("Y", "Z"), np.random.default_rng(3))
    b = runner.run_instance(idx, 32, ("Y", "Z"), np.random.default_rng(3))
    for basis in "YZ":
        np.testing.assert_array_equal(a.mean[basis], b.mean[basis])
        np.testing.assert_array_equal(a.var[basis], b.var[basis])
    with pytest.raises(ValueError):
        runner.run_instance(idx, 1, ("Z",), np.random.default_rng(0))


def test_simulate_shot_outputs_bits():
    runner = PecRunner(spec(n_trot=1), shipped_noise(4))
    bits = simulate_shot(runner, None, "Y", np.random.default_rng(0))
    assert bits.shape == (4,) and set(np.unique(bits)) <= {-1, 1}


def _exact_frame_expectation(runner, x, z, basis):
    psi = runner.sim.final_state(basis, (x, z), batch=x.shape[0])
    return (np.abs(psi) ** 2) @ runner.outcome_values


def test_pec_cancels_noise_exactly():
    """Sum over every insertion pattern and every noise pattern, weighted by
    quasiprobability times noise probability, equals the noiseless value."""
    noise = NoiseModel(("XI", "ZZ"), np.array([[0.05, 0.0], [0.08, 0.1]]))
    runner = PecRunner(spec(q=2, n_trot=1, j=0.4), noise)
    model = runner.pec.model
    m = model.n_positions
    n_layers = runner.pec.n_layers
    term_x, term_z = noise.masks()
    rows_x, rows_z, coef = [], [], []
    slots = [(l, t) for l in range(n_layers) for t in range(2)]
    eps = runner.layer_eps
    live = [s for s in slots if eps[s] > 0]
    for ins in itertools.product((0, 1), repeat=m):
        qk = math.prod(model.q[i][k] for i, k in enumerate(ins))
        px, pz = runner.insertion_frames(np.array(ins))
        for fired in itertools.product((0, 1), repeat=len(live)):
            pr = math.prod(eps[s] if f else 1 - eps[s] for s, f in zip(live, fired))
            x, z = px.copy(), pz.copy()
            for (l, t), f in zip(live, fired):
                if f:
                    x[l] ^= term_x[t]
                    z[l] ^= term_z[t]
            rows_x.append(x)
            rows_z.append(z)
            coef.append(qk * pr)
    for basis in "YZ":
        vals = _exact_frame_expectation(runner, np.array(rows_x), np.array(rows_z), basis)
        np.testing.assert_allclose(np.array(coef) @ vals, runner.exact_expectations(basis), atol=1e-12)


def test_noise_sampling_matches_exact_noisy_value():
    noise = NoiseModel(("XI", "IY", "ZZ"), np.array([[0.1, 0.05, 0.2], [0.15, 0.1, 0.05]]))
    runner = PecRunner(spec(q=2, n_trot=1, j=0.4), noise)
    eps = runner.layer_eps
    term_x, term_z = noise.masks()
    slots = [(l, t) for l in range(runner.pec.n_layers) for t in range(3)]
    xs, zs, pr = [], [], []
    for fired in itertools.product((0, 1), repeat=len(slots)):
        x = np.zeros(runner.pec.n_layers, dtype=np.int64)
        z = np.zeros_like(x)
        p = 1.0
        for (l, t), f in zip(slots, fired):
            p *= eps[l, t] if f else 1 - eps[l, t]
            if f:
                x[l] ^= term_x[t]
                z[l] ^= term_z[t]
        xs.append(x)
        zs.append(z)
        pr.append(p)
    exact = np.array(pr) @ _exact_frame_expectation(runner, np.array(xs), np.array(zs), "Z")
    n = 40_000
    vals = runner.shot_observables(None, "Z", n, np.random.default_rng(5))
    sd = vals.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(vals.mean(axis=0) - exact) <= 4 * sd + 1e-12)
