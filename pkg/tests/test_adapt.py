"""Variance adaptivity: block statistics, merge candidate gates, pooled
downsampling against a brute-force concatenated-observations oracle."""

import numpy as np
import pytest

from tsdfusion.adapt import (apply_merges, block_mean_variance, downsample_block,
                             select_merge_candidates)
from tsdfusion.hashgrid import BlockPayload
from tsdfusion.integrate import Voxel, update_voxel

from conftest import make_table


def make_payload(level=0, weight=None, tsdf=None, s2=None):
    n = 512 if level == 0 else 64
    return BlockPayload(
        coord=(0, 0, 0), level=level,
        tsdf=np.zeros(n) if tsdf is None else np.asarray(tsdf, dtype=np.float64),
        weight=np.zeros(n) if weight is None else np.asarray(weight, dtype=np.float64),
        s2=np.zeros(n) if s2 is None else np.asarray(s2, dtype=np.float64),
        color=np.zeros((n, 3), dtype=np.float32),
    )


class TestBlockMeanVariance:
    def test_unobserved_block_is_sentinel(self):
        assert block_mean_variance(np.zeros(512), np.zeros(512)) == np.inf

    def test_zero_variance_block(self):
        w = np.full(512, 3.0)
        assert block_mean_variance(w, np.zeros(512)) == 0.0

    def test_mixed_block_matches_hand_computation(self):
        rng = np.random.default_rng(1)
        w = rng.integers(0, 6, size=512).astype(float)
        s2 = rng.uniform(0, 1e-4, size=512)
        eligible = w >= 2
        expected = np.mean(s2[eligible] / w[eligible])
        assert block_mean_variance(w, s2) == pytest.approx(expected, rel=1e-12)

    def test_under_fraction_gate_is_sentinel(self):
        w = np.zeros(512)
        w[:20] = 5.0  # 20 < 5% of 512 (25.6)
        assert block_mean_variance(w, np.zeros(512)) == np.inf
        w[:26] = 5.0  # 26 >= 25.6
        assert block_mean_variance(w, np.zeros(512)) == 0.0


class TestSelectCandidates:
    def test_fresh_table_empty(self):
        t = make_table()
        assert select_merge_candidates(t, 1e-5) == []

    def test_quiet_observed_block_selected(self):
        t = make_table()
        h = t.insert((2, 3, 4), 0)
        heap = t.heaps[0]
        heap.weight[h * 512:(h + 1) * 512] = 5.0
        assert select_merge_candidates(t, 1e-5) == [(2, 3, 4)]

    def test_noisy_block_not_selected(self):
        t = make_table()
        h = t.insert((2, 3, 4), 0)
        heap = t.heaps[0]
        heap.weight[h * 512:(h + 1) * 512] = 5.0
        heap.s2[h * 512:(h + 1) * 512] = 5.0 * 1e-3  # variance 1e-3 each
        assert select_merge_candidates(t, 1e-5) == []

    def test_min_weight_gate(self):
        t = make_table()
        h = t.insert((1, 1, 1), 0)
        heap = t.heaps[0]
        heap.weight[h * 512:(h + 1) * 512] = 2.0  # mean weight 2 < 3
        assert select_merge_candidates(t, 1e-5) == []

    def test_level1_blocks_never_candidates(self):
        t = make_table()
        h = t.insert((1, 1, 1), 1)
        heap = t.heaps[1]
        heap.weight[h * 64:(h + 1) * 64] = 5.0
        assert select_merge_candidates(t, 1e-5) == []


class TestDownsampleBlock:
    def test_uniform_children(self):
        w = np.full(512, 1.0)
        d = np.full(512, 0.02)
        out = downsample_block(make_payload(weight=w, tsdf=d))
        assert out.level == 1
        assert np.allclose(out.tsdf, 0.02)
        assert np.allclose(out.weight, 8.0)
        assert np.allclose(out.s2, 0.0, atol=1e-18)

    def test_two_sample_mean(self):
        w = np.zeros(512)
        d = np.zeros(512)
        # children of coarse voxel (0,0,0) are fine voxels (0..1, 0..1, 0..1)
        idx1 = (0 * 8 + 0) * 8 + 0
        idx2 = (0 * 8 + 0) * 8 + 1
        w[idx1] = w[idx2] = 1.0
        d[idx1], d[idx2] = 0.01, 0.03
        out = downsample_block(make_payload(weight=w, tsdf=d))
        assert out.tsdf[0] == pytest.approx(0.02)
        assert out.weight[0] == 2.0

    def test_weight_conserved(self):
        rng = np.random.default_rng(9)
        w = rng.integers(0, 8, size=512).astype(float)
        out = downsample_block(make_payload(weight=w))
        assert out.weight.sum() == pytest.approx(w.sum())

    def test_all_zero_children_zeroed(self):
        out = downsample_block(make_payload())
        assert np.all(out.tsdf == 0) and np.all(out.weight == 0) and np.all(out.s2 == 0)

    def test_wrong_level_raises(self):
        with pytest.raises(ValueError):
            downsample_block(make_payload(level=1))

    def test_pooled_stats_match_concatenated_observations_oracle(self):
        """Feed known observation sequences through the scalar update, then
        downsample; the coarse voxel must match two-pass statistics of the
        concatenated observation multiset to 1e-9 relative."""
        rng = np.random.default_rng(21)
        for _ in range(20):
            w = np.zeros(512)
            d = np.zeros(512)
            s2 = np.zeros(512)
            all_obs = {}
            for child in range(8):
                idx = ((child >> 2 & 1) * 8 + (child >> 1 & 1)) * 8 + (child & 1)
                n_obs = int(rng.integers(0, 6))
                obs = rng.normal(0.01, 0.02, size=n_obs)
                v = Voxel()
                for o in obs:
                    v = update_voxel(v, float(o))
                w[idx], d[idx], s2[idx] = v.weight, v.tsdf, v.s2
                all_obs[idx] = obs
            out = downsample_block(make_payload(weight=w, tsdf=d, s2=s2))
            concat = np.concatenate([all_obs[i] for i in sorted(all_obs)]) \
                if all_obs else np.zeros(0)
            if len(concat) == 0:
                assert out.weight[0] == 0
                continue
            mean = concat.sum() / len(concat)
            m2 = ((concat - mean) ** 2).sum()
            assert out.weight[0] == len(concat)
            assert out.tsdf[0] == pytest.approx(mean, rel=1e-9, abs=1e-15)
            assert out.s2[0] == pytest.approx(m2, rel=1e-9, abs=1e-15)


class TestApplyMerges:
    def _observed_quiet_table(self):
        t = make_table()
        for c in [(0, 0, 0), (1, 0, 0), (5, 5, 5)]:
            h = t.insert(c, 0)
            heap = t.heaps[0]
            heap.weight[h * 512:(h + 1) * 512] = 5.0
            heap.tsdf[h * 512:(h + 1) * 512] = 0.01
        return t

    def test_merged_block_findable_at_level1(self):
        t = self._observed_quiet_table()
        stats = apply_merges(t, 1e-5)
        assert stats.merged == 3
        for c in [(0, 0, 0), (1, 0, 0), (5, 5, 5)]:
            assert t.find(c)[1] == 1

    def test_rerun_is_idempotent(self):
        t = self._observed_quiet_table()
        apply_merges(t, 1e-5)
        assert apply_merges(t, 1e-5).merged == 0

    def test_heap_accounting_conserved(self):
        t = self._observed_quiet_table()
        n0, n1 = t.heaps[0].occupied, t.heaps[1].occupied
        merged = apply_merges(t, 1e-5).merged
        assert t.heaps[0].occupied == n0 - merged
        assert t.heaps[1].occupied == n1 + merged

    def test_weight_conserved_through_merge(self):
        def live_weight(table):
            total = 0.0
            for lvl in range(2):
                heap = table.heaps[lvl]
                w = heap.weight.reshape(heap.capacity, heap.nvox)
                total += w[heap.live].sum()
            return total

        t = self._observed_quiet_table()
        total_before = live_weight(t)
        apply_merges(t, 1e-5)
        assert live_weight(t) == pytest.approx(total_before)

    def test_single_live_entry_per_coord(self):
        t = self._observed_quiet_table()
        apply_merges(t, 1e-5)
        for c in [(0, 0, 0), (1, 0, 0), (5, 5, 5)]:
            found = t.find(c)
            assert found is not None
            # the coordinate appears exactly once across both heaps
            count = sum(int((t.heaps[lvl].coords[t.heaps[lvl].live] == np.array(c)).all(axis=1).sum())
                        for lvl in range(2))
            assert count == 1
