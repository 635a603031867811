import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinqubit.benchmarking import (
    IRB_GATES,
    NATIVE_GATES,
    RBConfig,
    RBDecayFit,
    bootstrap_ci,
    build_clifford_group,
    decay_curve,
    default_lengths,
    fit_rb_decay,
    generate_rb_sequence,
    irb_gate_fidelity,
    run_irb,
    run_rb,
)
from spinqubit.qubit import UP_STATE, QubitParams, apply_gate, gate_matrix, p_up

G = build_clifford_group()
Q = QubitParams()
CLEAN = Q.replace(noise_model="none")
SHORT = (1, 4, 16, 64, 256)


class TestCliffordGroup:
    def test_size_and_closure(self):
        assert len(G) == 24
        assert G.check_closure()
        for a in range(24):
            for b in range(24):
                assert np.allclose(G[G.compose(a, b)].matrix, G[b].matrix @ G[a].matrix)

    def test_identity_and_inverses(self):
        assert G[0].gates == ()
        assert np.allclose(G[0].matrix, np.eye(3))
        for e in G.elements:
            assert G.compose(e.index, G.inverse[e.index]) == 0

    def test_compilations_reproduce_elements(self):
        for e in G.elements:
            m = np.eye(3)
            for g in e.gates:
                m = gate_matrix(g) @ m
            assert np.allclose(m, e.matrix, atol=1e-12)

    def test_mean_gate_count(self):
        assert G.mean_gates == pytest.approx(44 / 24)
        assert max(len(e.gates) for e in G.elements) <= 3

    def test_native_gates_are_elements(self):
        for g in NATIVE_GATES:
            assert G[G.gate_index[g]].gates == (g,)

    def test_non_clifford(self):
        with pytest.raises(ValueError):
            G.index_of(np.diag([1.0, 1.0, -1.0]))


class TestSequences:
    @given(st.integers(1, 4096), st.integers(0, 2**32 - 1), st.sampled_from([None, *IRB_GATES]))
    def test_recovery_inverts(self, m, seed, interleaved):
        seq = generate_rb_sequence(m, np.random.default_rng(seed), interleaved, G)
        assert len(seq.cliffords) == m
        mat = np.eye(3)
        for g in seq.gates(G):
            mat = gate_matrix(g) @ mat
        assert np.allclose(mat, np.eye(3), atol=1e-6)

    def test_length_one_has_two_cliffords(self):
        seq = generate_rb_sequence(1, np.random.default_rng(0))
        ends = [s for s in seq.steps(G) if s[1]]
        assert len(ends) == 2

    def test_identity_is_a_noop_step(self):
        from spinqubit.benchmarking import RBSequence

        steps = RBSequence((0,), 0, None).steps(G)
        assert steps == [("", True, False), ("", True, False)]

    def test_interleaved_flagged(self):
        seq = generate_rb_sequence(5, np.random.default_rng(1), "X2")
        flagged = [s for s in seq.steps(G) if s[2]]
        assert len(flagged) == 5 and all(s[0] == "X2" for s in flagged)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            generate_rb_sequence(0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            generate_rb_sequence(3, np.random.default_rng(0), "Z")


class TestFit:
    def test_exact_curve(self):
        m = np.array(SHORT)
        y = 0.5 * 0.99**m + 0.5
        fit = fit_rb_decay(m, y, np.full(m.size, 0.01), 100)
        assert fit.decay == pytest.approx(0.99, abs=1e-8)
        assert fit.clifford_fidelity == pytest.approx(0.995, abs=1e-8)
        assert np.allclose(decay_curve(m, fit), y, atol=1e-8)

    def test_flat_data(self):
        fit = fit_rb_decay(np.array(SHORT), np.ones(5), np.zeros(5), 10)
        assert fit.decay == 1.0 and fit.offset == 1.0

    def test_irb_arithmetic(self):
        assert irb_gate_fidelity(0.997, 0.993) == pytest.approx(0.997993981945838, abs=1e-14)
        assert irb_gate_fidelity(0.997, 0.995) == pytest.approx(0.998996990972919, abs=1e-14)
        assert irb_gate_fidelity(0.99, 0.99) == 1.0

    def test_zero_variance_bootstrap(self):
        m = np.array(SHORT)
        per = np.repeat((0.5 * 0.98**m + 0.5)[:, None], 20, axis=1)
        boot = bootstrap_ci(m, per, 100, np.random.default_rng(0))
        assert np.std(boot) < 1e-9

    def test_identical_sequences_use_count_floor(self):
        m = np.array(SHORT)
        y = 0.5 * 0.98**m + 0.5
        fit = fit_rb_decay(m, y, np.zeros(5), 20, shots=50)
        assert fit.fit_ok and fit.decay == pytest.approx(0.98, abs=1e-6)

    def test_bootstrap_minimum(self):
        with pytest.raises(ValueError):
            bootstrap_ci(np.array(SHORT), np.ones((5, 4)), 50, np.random.default_rng(0))

    def test_default_lengths(self):
        assert default_lengths() == tuple(2**i for i in range(13))

    @pytest.mark.parametrize(
        "changes",
        [
            {"sequence_lengths": (4, 2)},
            {"sequence_lengths": ()},
            {"sequences_per_length": 1},
            {"shots_per_sequence": 0},
            {"readout_channel": "scope"},
            {"depolarizing": 1.5},
            {"bootstrap_resamples": 10},
        ],
    )
    def test_config_validation(self, changes):
        with pytest.raises(ValueError):
            RBConfig(SHORT).replace(**changes)


class TestRun:
    def test_noiseless_flat_to_4096(self):
        res = run_rb(RBConfig(default_lengths(), 20, 50, bootstrap_resamples=100), CLEAN)
        assert np.all(res.per_sequence == 1.0)
        assert res.fit.decay == 1.0

    def test_depolarizing_recovered(self):
        cfg = RBConfig(SHORT, 60, 100, depolarizing=0.99, bootstrap_resamples=100, seed=3)
        res = run_rb(cfg, Q)
        assert abs(res.fit.decay - 0.99) < 3 * res.fit.decay_std
        assert res.fit.amplitude == pytest.approx(0.5, abs=0.05)
        assert res.fit.offset == pytest.approx(0.5, abs=0.05)

    def test_interleaved_depolarizing_multiplies(self):
        cfg = RBConfig(SHORT, 60, 100, depolarizing=0.99, bootstrap_resamples=100, seed=4)
        res = run_irb("X", cfg.replace(depolarizing_interleaved=0.995, ideal_interleaved=True), Q)
        assert abs(res.gate_decay - 0.995) < 3 * math.hypot(res.reference.fit.decay_std, res.interleaved.fit.decay_std)

    def test_perfect_interleaved_gate_is_invisible(self):
        cfg = RBConfig(SHORT, 60, 100, depolarizing=0.99, ideal_interleaved=True, bootstrap_resamples=100, seed=5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_irb("Y2", cfg, Q)
        spread = math.hypot(res.reference.fit.decay_std, res.interleaved.fit.decay_std)
        assert abs(res.p_int - res.p_ref) < 3 * spread

    def test_bootstrap_matches_repeat_scatter(self):
        decays, stds = [], []
        for seed in range(30):
            cfg = RBConfig(SHORT, 20, 20, depolarizing=0.99, bootstrap_resamples=100, seed=seed)
            fit = run_rb(cfg, Q).fit
            decays.append(fit.decay)
            stds.append(fit.decay_std)
        assert np.mean(stds) == pytest.approx(np.std(decays, ddof=1), rel=0.3)

    def test_scatter_shrinks_with_shots(self):
        base = RBConfig((64,), 100, 10, depolarizing=0.99, bootstrap_resamples=100, seed=6)
        few = run_rb(base, Q).scatter_std[0]
        many = run_rb(base.replace(shots_per_sequence=1000), Q).scatter_std[0]
        assert many < few / 5

    def test_workers_do_not_change_results(self):
        cfg = RBConfig((1, 4, 16, 64, 256), 10, 20, bootstrap_resamples=100, seed=7)
        a = run_rb(cfg, Q, workers=1)
        b = run_rb(cfg, Q, workers=3)
        np.testing.assert_array_equal(a.per_sequence, b.per_sequence)
        np.testing.assert_array_equal(a.fit.bootstrap_decay, b.fit.bootstrap_decay)

    def test_vectorized_matches_sequential(self):
        # replay the same seeds through apply_gate one shot at a time
        p = Q.replace(noise_model="quasistatic")
        cfg = RBConfig((3, 7), 4, 5, interleaved_gate="-Y", bootstrap_resamples=100, seed=8)
        res = run_rb(cfg, p)
        for li, m in enumerate(cfg.sequence_lengths):
            streams = np.random.SeedSequence([cfg.seed, li]).spawn(cfg.sequences_per_length + 2)
            seqs = [generate_rb_sequence(m, np.random.default_rng(streams[j]), "-Y", G) for j in range(4)]
            det = np.random.default_rng(streams[4]).normal(0.0, p.sigma_f, (4, 5))
            prob = np.empty((4, 5))
            for j, seq in enumerate(seqs):
                for s in range(5):
                    v = UP_STATE
                    for g in seq.gates(G):
                        v = apply_gate(v, g, p, det[j, s])
                    prob[j, s] = p_up(v)
            outcome = np.random.default_rng(streams[5]).random((4, 5)) < np.clip(prob, 0, 1)
            assert np.array_equal(outcome.mean(axis=1), res.per_sequence[li])

    def test_calibrated_noise_decays(self):
        cfg = RBConfig((1, 64, 512), 20, 50, bootstrap_resamples=100, seed=9)
        res = run_rb(cfg, Q)
        assert res.mean[0] > 0.99
        assert res.mean[-1] < res.mean[0]
        assert 0.99 < res.gate_fidelity_estimate <= 1.0

    def test_trace_readout_channel(self):
        cfg = RBConfig((1, 2), 4, 20, readout_channel="trace", bootstrap_resamples=100, seed=10)
        res = run_rb(cfg, CLEAN)
        # Elzerman readout of spin-up succeeds ~99% of the time
        assert res.per_sequence.mean() > 0.9


def test_fit_dataclass_std_nan_without_bootstrap():
    assert math.isnan(RBDecayFit(0.5, 0.99, 0.5).decay_std)
