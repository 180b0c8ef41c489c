import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiadla.faults import (ClusterParams, FaultModel, FaultSet, PeFault,
                           inject_seu, pe_error_rate, sample_clustered_faults,
                           sample_random_faults)
from fiadla.fxp import FxpTensor
from fiadla.rng import Rng

DIMS = (32, 16)


class TestPeErrorRate:
    def test_zero_rate(self):
        assert pe_error_rate(0.0, 64) == 0.0

    def test_closed_form_1e3(self):
        # 1 - (1 - 1e-3)^64, evaluated two independent ways
        direct = 1.0 - (1.0 - 1e-3) ** 64
        got = pe_error_rate(1e-3, 64)
        assert abs(got - direct) < 1e-12
        assert abs(got - 0.0620) < 5e-4

    def test_closed_form_1e7(self):
        assert abs(pe_error_rate(1e-7, 64) - 6.4e-6) < 1e-9

    def test_monte_carlo_cross_check(self):
        # sample 64 bits at ber, count PEs with any bit set
        rng = Rng(404)
        trials = 200_000
        ber = 1e-3
        bits = rng.bernoulli(trials * 64, ber).reshape(trials, 64)
        frac = bits.any(axis=1).mean()
        expect = pe_error_rate(ber, 64)
        stderr = math.sqrt(expect * (1 - expect) / trials)
        assert abs(frac - expect) < 4 * stderr

    def test_identity_at_one_bit(self):
        for ber in (0.0, 0.1, 0.5, 1.0):
            assert pe_error_rate(ber, 1) == pytest.approx(ber)

    @given(st.floats(1e-9, 0.2), st.floats(1.01, 2.0))
    @settings(max_examples=100, deadline=None)
    def test_strictly_increasing_in_ber(self, lo, factor):
        # separated rates below the float-saturation region near 1.0
        hi = min(lo * factor, 0.25)
        if hi <= lo:
            return
        assert pe_error_rate(lo, 64) < pe_error_rate(hi, 64)

    @given(st.integers(1, 256), st.integers(1, 256))
    @settings(max_examples=100, deadline=None)
    def test_increasing_in_reg_bits(self, n, m):
        if n == m:
            return
        lo, hi = sorted((n, m))
        assert pe_error_rate(1e-3, lo) < pe_error_rate(1e-3, hi)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            pe_error_rate(-0.1, 64)
        with pytest.raises(ValueError):
            pe_error_rate(1.1, 64)


class TestRandomFaults:
    def test_rate_zero_empty(self):
        assert sample_random_faults(DIMS, 0.0, Rng(1)).fault_pe_num == 0

    def test_rate_one_all_faulty(self):
        fs = sample_random_faults(DIMS, 1.0, Rng(1))
        assert fs.fault_pe_num == DIMS[0] * DIMS[1]

    def test_binomial_mean_100000_trials(self):
        rng = Rng(2024)
        trials = 100_000
        rate = 0.03125
        counts = np.fromiter(
            (sample_random_faults(DIMS, rate, rng.spawn("t", t)).fault_pe_num
             for t in range(trials)), dtype=np.int64, count=trials)
        n = DIMS[0] * DIMS[1]
        sigma = math.sqrt(n * rate * (1 - rate))
        assert abs(counts.mean() - n * rate) < 3 * sigma / math.sqrt(trials)

    def test_cell_marginals_uniform_chi_square(self):
        from scipy.stats import chi2
        rng = Rng(99)
        trials = 100_000
        rate = 0.03125
        n = DIMS[0] * DIMS[1]
        hits = np.zeros(n)
        for t in range(trials):
            fs = sample_random_faults(DIMS, rate, rng.spawn("t", t))
            for r, c in fs.faulty_pes:
                hits[r * DIMS[1] + c] += 1
        expected = trials * rate
        stat = ((hits - expected) ** 2 / expected).sum()
        assert chi2.sf(stat, df=n - 1) > 0.001

    def test_same_seed_bit_identical(self):
        a = sample_random_faults(DIMS, 0.05, Rng(7))
        b = sample_random_faults(DIMS, 0.05, Rng(7))
        assert a.pe_faults == b.pe_faults

    def test_bit_assignment_within_register_widths(self):
        fs = sample_random_faults(DIMS, 1.0, Rng(5))
        from fiadla.faults import REGISTER_WIDTH
        for f in fs.pe_faults:
            assert 0 <= f.bit_index < REGISTER_WIDTH[f.register]
            assert f.kind in ("stuck_at_0", "stuck_at_1")


class TestClusteredFaults:
    def test_rate_zero_empty(self):
        fs = sample_clustered_faults(DIMS, 0.0, ClusterParams(), Rng(1))
        assert fs.fault_pe_num == 0

    def test_radius_below_one_rejected(self):
        with pytest.raises(ValueError):
            ClusterParams(radius=0.5)

    def test_huge_radius_statistically_random(self):
        # spread radius beyond the array diagonal makes placement uniform
        from scipy.stats import chi2
        rng = Rng(31337)
        trials = 20_000
        rate = 0.03125
        n = DIMS[0] * DIMS[1]
        params = ClusterParams(radius=40.0)
        hits = np.zeros(n)
        for t in range(trials):
            fs = sample_clustered_faults(DIMS, rate, params, rng.spawn("t", t))
            for r, c in fs.faulty_pes:
                hits[r * DIMS[1] + c] += 1
        expected = hits.sum() / n
        stat = ((hits - expected) ** 2 / expected).sum()
        assert chi2.sf(stat, df=n - 1) > 0.001

    def test_tight_radius_clusters_tighter_than_random(self):
        def mean_pairwise(fs: FaultSet) -> float:
            pes = fs.faulty_pes
            if len(pes) < 2:
                return 0.0
            total = count = 0
            for i in range(len(pes)):
                for j in range(i + 1, len(pes)):
                    total += math.dist(pes[i], pes[j])
                    count += 1
            return total / count

        rng = Rng(606)
        params = ClusterParams(radius=2.0)
        clustered = random = 0.0
        trials = 10_000
        used = 0
        for t in range(trials):
            fc = sample_clustered_faults(DIMS, 0.03, params, rng.spawn("c", t))
            fr = sample_random_faults(DIMS, 0.03, rng.spawn("r", t))
            if len(fc) >= 2 and len(fr) >= 2:
                clustered += mean_pairwise(fc)
                random += mean_pairwise(fr)
                used += 1
        assert used > trials // 2
        assert clustered / used < random / used * 0.75

    def test_expected_count_matches_rate(self):
        rng = Rng(14)
        trials = 5000
        rate = 0.05
        counts = [sample_clustered_faults(DIMS, rate, ClusterParams(),
                                          rng.spawn("t", t)).fault_pe_num
                  for t in range(trials)]
        n = DIMS[0] * DIMS[1]
        sigma = math.sqrt(n * rate * (1 - rate))
        assert abs(np.mean(counts) - n * rate) < 4 * sigma / math.sqrt(trials)


class TestInjectSeu:
    def _tensor(self, values, frac=5):
        return FxpTensor(np.array(values, dtype=np.int8), frac)

    def test_ber_zero_identity(self):
        t = self._tensor([1, -3, 100])
        out, log = inject_seu(t, 0.0, Rng(1))
        assert out.bit_equal(t)
        assert log == []

    def test_ber_one_bitwise_not(self):
        t = self._tensor([1, 0, -128, 127])
        out, log = inject_seu(t, 1.0, Rng(1))
        assert out.data.tolist() == [-2, -1, 127, -128]
        assert len(log) == 4 * 8

    def test_sign_bit_flip_of_one(self):
        t = self._tensor([1])
        # force only bit 7 by reconstructing from the flip log contract
        data = t.data.view(np.uint8) ^ np.uint8(0x80)
        assert data.view(np.int8).tolist() == [-127]

    def test_original_unmodified(self):
        t = self._tensor([5, 6, 7])
        before = t.data.copy()
        inject_seu(t, 1.0, Rng(2))
        assert np.array_equal(t.data, before)

    def test_flip_log_reconstructs_output(self):
        rng = Rng(88)
        t = FxpTensor((rng.bulk_u64(64) % 255 - 127).astype(np.int8), 5)
        out, log = inject_seu(t, 0.05, Rng(3))
        rebuilt = t.data.copy()
        for idx, bit in log:
            rebuilt[idx] = np.int8(
                np.uint8(rebuilt[idx].view(np.uint8)) ^ np.uint8(1 << bit))
        assert np.array_equal(rebuilt, out.data)

    def test_flip_frequency_within_3_sigma_over_1e7_bits(self):
        n_elements = 1_250_000  # 1e7 bits
        t = FxpTensor(np.zeros(n_elements, dtype=np.int8), 0)
        ber = 1e-3
        _, log = inject_seu(t, ber, Rng(321))
        n_bits = n_elements * 8
        sigma = math.sqrt(n_bits * ber * (1 - ber))
        assert abs(len(log) - n_bits * ber) < 3 * sigma

    def test_deterministic(self):
        t = self._tensor(list(range(-60, 60)))
        a, la = inject_seu(t, 0.01, Rng(55))
        b, lb = inject_seu(t, 0.01, Rng(55))
        assert a.bit_equal(b) and la == lb


class TestFaultSetPlumbing:
    def test_row_major_iteration_order(self):
        fs = FaultSet((
            PeFault(3, 1, "input_a", 0, "stuck_at_0"),
            PeFault(0, 5, "product", 2, "stuck_at_1"),
            PeFault(0, 2, "accumulator", 31, "stuck_at_1"),
        ))
        assert fs.faulty_pes == ((0, 2), (0, 5), (3, 1))

    def test_faulty_pes_is_projection(self):
        fs = FaultSet((
            PeFault(1, 1, "input_a", 0, "stuck_at_0"),
            PeFault(1, 1, "product", 3, "stuck_at_1"),
        ))
        assert fs.fault_pe_num == 1
        assert len(fs.faults_at(1, 1)) == 2

    def test_json_roundtrip(self):
        fs = sample_random_faults(DIMS, 0.1, Rng(12))
        fs2 = FaultSet.from_json(fs.to_json())
        assert fs2.pe_faults == fs.pe_faults

    def test_transient_needs_cycle(self):
        with pytest.raises(ValueError):
            PeFault(0, 0, "product", 1, "transient")
        PeFault(0, 0, "product", 1, "transient", cycle=5)

    def test_bounds_check(self):
        fs = FaultSet((PeFault(40, 0, "input_a", 0, "stuck_at_0"),))
        with pytest.raises(ValueError):
            fs.check_within(*DIMS)

    def test_fault_model_consistency(self):
        m = FaultModel(kind="random", bit_error_rate=1e-3)
        assert m.pe_rate == pytest.approx(pe_error_rate(1e-3))
        with pytest.raises(ValueError):
            FaultModel(kind="random", bit_error_rate=1e-3, pe_rate=0.5)
        with pytest.raises(ValueError):
            FaultModel(kind="nope", pe_rate=0.1)
