import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from spinqubit.physics import PhysicalParams, RateSet, derive_rates, relaxation_error
from spinqubit.traces import (
    DOWN,
    EMPTY,
    TRACE_DUMP_SCHEMA,
    UP,
    Spin,
    StatePath,
    filtered_signal,
    generate_batch,
    ideal_signal,
    n_samples_for,
    prepare_and_read_shot,
    preparation_pattern,
    read_trace_dump,
    render_trace,
    sample_path,
    sample_shot_path,
    write_trace_dump,
)

P = PhysicalParams()
STEP_1US = 0.998132557268292  # 1 - exp(-2π), mpmath
STEP_01US = 1 - math.exp(-0.2 * math.pi)


class TestStatePath:
    def test_rejects_unordered_times(self):
        with pytest.raises(ValueError):
            StatePath(UP, ((5.0, EMPTY), (5.0, DOWN)), 10.0)

    def test_rejects_forbidden_edge(self):
        with pytest.raises(ValueError):
            StatePath(DOWN, ((1.0, UP),), 10.0)

    def test_rejects_self_transition(self):
        with pytest.raises(ValueError):
            StatePath(UP, ((1.0, UP),), 10.0)

    def test_queries(self):
        path = StatePath(UP, ((2.0, EMPTY), (5.0, DOWN)), 10.0)
        assert path.state_at(1.0) == UP and path.state_at(3.0) == EMPTY and path.state_at(9.0) == DOWN
        assert path.first_entry(EMPTY) == 2.0 and path.first_entry(UP) is None
        assert path.time_in(EMPTY) == 3.0
        assert sum(e - s for s, e, _ in path.segments()) == 10.0


class TestSamplePath:
    def test_single_exit_is_exponential(self):
        rates = RateSet(up_out=20e3, down_in=0.0, down_out=0.0, up_in=0.0, relax=0.0)
        rng = np.random.default_rng(0)
        draws = []
        for _ in range(10_000):
            path = sample_path(rates, UP, 1e4, rng)
            assert len(path.transitions) == 1 and path.transitions[0][1] == EMPTY
            draws.append(path.transitions[0][0])
        mean, sem = np.mean(draws), 50.0 / math.sqrt(len(draws))
        assert abs(mean - 50.0) < 3 * sem

    def test_device_first_transition(self):
        rates = derive_rates(P)
        rng = np.random.default_rng(1)
        firsts = []
        for _ in range(10_000):
            path = sample_path(rates, UP, 670.0, rng)
            if path.transitions:
                firsts.append(path.transitions[0][0])
        expected = 1e6 / (rates.up_out + rates.relax)
        assert expected == pytest.approx(50.0, rel=3e-3)
        # truncation at 670 µs removes e^{-13.4} of the mass
        assert abs(np.mean(firsts) - expected) < 3 * expected / math.sqrt(len(firsts))

    def test_branching_ratio(self):
        rates = RateSet(up_out=0.0, down_in=9e3, down_out=0.0, up_in=1e3, relax=0.0)
        rng = np.random.default_rng(2)
        n = 10_000
        ups = sum(sample_path(rates, EMPTY, 1e6, rng).transitions[0][1] == UP for _ in range(n))
        assert abs(ups / n - 0.1) < 3 * math.sqrt(0.1 * 0.9 / n)

    def test_stationary_distribution(self):
        rates = RateSet(up_out=20e3, down_in=15e3, down_out=4e3, up_in=6e3, relax=2e3)
        # balance equations: πQ = 0 with Σπ = 1
        q = np.zeros((3, 3))
        q[UP, EMPTY], q[UP, DOWN] = rates.up_out, rates.relax
        q[DOWN, EMPTY] = rates.down_out
        q[EMPTY, UP], q[EMPTY, DOWN] = rates.up_in, rates.down_in
        q -= np.diag(q.sum(axis=1))
        a = np.vstack([q.T, np.ones(3)])
        pi = np.linalg.lstsq(a, np.r_[0, 0, 0, 1.0], rcond=None)[0]
        rng = np.random.default_rng(3)
        fractions = np.array(
            [sample_path(rates, EMPTY, 5e4, rng).time_in(EMPTY) / 5e4 for _ in range(24)]
        )
        # 24 × 5e4 µs = 1.2e6 µs simulated
        assert abs(fractions.mean() - pi[EMPTY]) < 3 * fractions.std(ddof=1) / math.sqrt(fractions.size)

    def test_no_exits_means_no_transitions(self):
        rates = RateSet(0.0, 0.0, 0.0, 0.0, 0.0)
        assert sample_path(rates, DOWN, 100.0, np.random.default_rng(0)).transitions == ()

    def test_duration_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_path(derive_rates(P), UP, 0.0, np.random.default_rng(0))


class TestRender:
    def test_constant_path_noise_off(self):
        path = StatePath(DOWN, (), 50.0)
        trace = render_trace(path, P, None, noise=False)
        assert trace.samples.size == 50
        assert np.all(trace.samples == P.sensor_level_occupied)

    def test_sample_count_is_ceiling(self):
        assert n_samples_for(670.5, 1.0) == 671
        assert n_samples_for(680.0, 1.0) == 680

    def test_noise_matches_snr(self):
        path = StatePath(DOWN, (), 1e6)
        trace = render_trace(path, P, np.random.default_rng(4))
        assert trace.samples.std() == pytest.approx(P.noise_sigma, rel=0.01)
        assert trace.samples.std() == pytest.approx(0.14 / 12.5, rel=0.01)

    def test_doubling_snr_halves_noise(self):
        path = StatePath(DOWN, (), 2e5)
        s1 = render_trace(path, P, np.random.default_rng(5)).samples.std()
        s2 = render_trace(path, P.replace(sensor_snr=25.0), np.random.default_rng(5)).samples.std()
        assert s2 == pytest.approx(s1 / 2, rel=1e-12)

    def test_filter_step_response(self):
        sep = P.sensor_level_empty - P.sensor_level_occupied
        long = StatePath(DOWN, ((10.0, EMPTY), (11.0, DOWN)), 30.0)
        y = filtered_signal(long, P)
        assert (y[10] - P.sensor_level_occupied) / sep == pytest.approx(STEP_1US, abs=1e-3)
        short = StatePath(DOWN, ((10.9, EMPTY), (11.0, DOWN)), 30.0)
        y = filtered_signal(short, P)
        peak = (y.max() - P.sensor_level_occupied) / sep
        assert peak == pytest.approx(STEP_01US, abs=1e-3)
        assert peak < 0.5

    @given(st.lists(st.floats(0.5, 99.5), min_size=0, max_size=12, unique=True))
    def test_unfiltered_noiseless_reconstructs_path(self, times):
        times = sorted(times)
        states, s = [], DOWN
        for _ in times:
            s = EMPTY if s != EMPTY else DOWN
            states.append(s)
        path = StatePath(DOWN, tuple(zip(times, states)), 100.0)
        y = ideal_signal(path, P)
        for k, v in enumerate(y):
            expected = P.sensor_level_empty if path.state_at(k + 1.0) == EMPTY else P.sensor_level_occupied
            assert v == expected


class TestShots:
    def test_bit_reproducible(self):
        a = prepare_and_read_shot(P, Spin.UP, 670, np.random.default_rng(9))
        b = prepare_and_read_shot(P, Spin.UP, 670, np.random.default_rng(9))
        assert np.array_equal(a.samples, b.samples)
        assert a.hidden_path == b.hidden_path
        assert a.samples.size == 680 and a.settle_samples == 10

    def test_down_without_thermal_never_empties(self):
        rates = derive_rates(P).without_thermal()
        rng = np.random.default_rng(10)
        for _ in range(200):
            t = prepare_and_read_shot(P, Spin.DOWN, 670, rng, rates=rates, noise=False)
            assert t.hidden_path.transitions == ()
            assert np.all(t.samples == P.sensor_level_occupied)

    def test_up_tunnels_unless_relaxed(self):
        rng = np.random.default_rng(11)
        n = 50_000
        tunneled = sum(sample_shot_path(P, Spin.UP, 680.0, rng).first_entry(EMPTY) is not None for _ in range(n))
        rates = derive_rates(P)
        loss = relaxation_error(rates.t_up_out, P.settle_time, P.t1_relaxation * 1e3)
        assert abs(tunneled / n - (1 - loss)) < 4 * math.sqrt(loss / n)

    def test_settle_window_has_no_tunneling(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            path = sample_shot_path(P, Spin.UP, 680.0, rng)
            t = path.first_entry(EMPTY)
            assert t is None or t > P.settle_time


class TestBatch:
    def test_interleaved_pattern_counts(self):
        spins = preparation_pattern("interleaved", 10_000)
        assert spins.count(Spin.UP) == 5000 and spins.count(Spin.DOWN) == 5000
        assert spins[:2] == [Spin.UP, Spin.DOWN]

    def test_pattern_validation(self):
        with pytest.raises(ValueError):
            preparation_pattern("sideways", 3)
        with pytest.raises(ValueError):
            preparation_pattern(["up"], 3)

    def test_same_seed_same_batch_any_workers(self):
        a = generate_batch(P, 40, base_seed=7)
        b = generate_batch(P, 40, base_seed=7)
        c = generate_batch(P, 40, base_seed=7, workers=3)
        for x, y, z in zip(a, b, c):
            assert np.array_equal(x.samples, y.samples) and np.array_equal(x.samples, z.samples)

    def test_shot_depends_only_on_index(self):
        full = generate_batch(P, 20, base_seed=8)
        tail = generate_batch(P, 10, ["up", "down"] * 5, base_seed=8, first_index=10)
        for x, y in zip(full[10:], tail):
            assert np.array_equal(x.samples, y.samples)

    def test_disjoint_seeds_independent(self):
        counts = []
        for seed in (100, 200):
            batch = generate_batch(P, 2000, "up", base_seed=seed, read_window=100.0)
            hits = sum(t.hidden_path.first_entry(EMPTY) is not None for t in batch)
            counts.append([hits, len(batch) - hits])
        _, pvalue, _, _ = stats.chi2_contingency(counts)
        assert pvalue > 1e-3
        first = generate_batch(P, 3, base_seed=100)
        second = generate_batch(P, 3, base_seed=200)
        assert not np.array_equal(first[0].samples, second[0].samples)

    def test_trace_dump_round_trip(self, tmp_path):
        batch = generate_batch(P, 6, base_seed=3, read_window=100.0)
        path, sidecar = write_trace_dump(tmp_path / "b.f32", batch, P, base_seed=3, read_window=100.0)
        data, meta = read_trace_dump(path)
        assert path.stat().st_size == 6 * 110 * 4
        assert meta["schema"] == TRACE_DUMP_SCHEMA and meta["byte_order"] == "little"
        assert meta["prepared"] == ["up", "down"] * 3
        assert meta["seeds"][4] == [3, 4]
        assert np.array_equal(data, np.vstack([t.samples for t in batch]).astype(np.float32))
