"""Reconstruction metrics against an O(n^2) brute-force nearest-neighbor
oracle, plus the degenerate and boundary cases the definitions pin down."""

import numpy as np
import pytest

from tsdfusion.meshing import Mesh
from tsdfusion.metrics import eval_reconstruction, mesh_surface_area, sample_mesh_points


def points_as_mesh(points) -> Mesh:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    return Mesh(vertices=points, normals=np.tile([0.0, 0.0, 1.0], (n, 1)),
                colors=np.zeros((n, 3)), triangles=np.zeros((0, 3), dtype=np.int64))


def brute_force_metrics(samples, reference, threshold):
    samples = np.asarray(samples)
    reference = np.asarray(reference)
    d_sr = np.sqrt(((samples[:, None, :] - reference[None]) ** 2).sum(-1)).min(1)
    d_rs = np.sqrt(((reference[:, None, :] - samples[None]) ** 2).sum(-1)).min(1)
    acc = d_sr.mean()
    comp = d_rs.mean()
    p = (d_sr <= threshold).mean()
    r = (d_rs <= threshold).mean()
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return {"acc": acc, "comp": comp, "chamfer_l1": 0.5 * (acc + comp),
            "precision": p, "recall": r, "fscore": f}


class TestDegenerateCases:
    def test_identical_point_sets(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (100, 3))
        out = eval_reconstruction(points_as_mesh(pts), pts, f_threshold=0.1)
        assert out["acc"] == 0.0
        assert out["comp"] == 0.0
        assert out["chamfer_l1"] == 0.0
        assert out["fscore"] == 1.0

    def test_threshold_comparator_is_leq(self):
        """Reference shifted by exactly the threshold along one axis must
        still count (<= comparator pinned)."""
        # 0.125 is binary-exact, so the distance equals the threshold exactly
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        shifted = pts + np.array([0.125, 0.0, 0.0])
        out = eval_reconstruction(points_as_mesh(pts), shifted, f_threshold=0.125)
        assert out["fscore"] == 1.0
        out2 = eval_reconstruction(points_as_mesh(pts), shifted, f_threshold=0.125 - 1e-12)
        assert out2["fscore"] == 0.0

    def test_empty_inputs_error(self):
        pts = np.zeros((5, 3))
        with pytest.raises(ValueError):
            eval_reconstruction(points_as_mesh(np.zeros((0, 3))), pts, 0.1)
        with pytest.raises(ValueError):
            eval_reconstruction(points_as_mesh(pts), np.zeros((0, 3)), 0.1)


class TestAgainstBruteForce:
    def test_random_point_sets_match_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n1 = int(rng.integers(2, 300))
            n2 = int(rng.integers(2, 300))
            a = rng.uniform(-1, 1, (n1, 3))
            b = rng.uniform(-1, 1, (n2, 3))
            thr = float(rng.uniform(0.05, 0.5))
            got = eval_reconstruction(points_as_mesh(a), b, f_threshold=thr)
            want = brute_force_metrics(a, b, thr)
            for key in ("acc", "comp", "chamfer_l1", "precision", "recall", "fscore"):
                assert got[key] == pytest.approx(want[key], rel=1e-9, abs=1e-12)


class TestMeshSampling:
    def _unit_square_mesh(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        t = np.array([[0, 1, 2], [0, 2, 3]])
        return Mesh(vertices=v, normals=np.tile([0., 0., 1.], (4, 1)),
                    colors=np.zeros((4, 3)), triangles=t)

    def test_area(self):
        assert mesh_surface_area(self._unit_square_mesh()) == pytest.approx(1.0)

    def test_samples_lie_on_surface_and_count_scales_with_area(self):
        mesh = self._unit_square_mesh()
        pts = sample_mesh_points(mesh, samples_per_m2=1000, max_samples=10**6, seed=3)
        assert len(pts) == 1000
        assert np.allclose(pts[:, 2], 0.0)
        assert np.all((pts[:, :2] >= 0) & (pts[:, :2] <= 1))

    def test_sampling_honors_cap(self):
        mesh = self._unit_square_mesh()
        pts = sample_mesh_points(mesh, samples_per_m2=10**9, max_samples=5000)
        assert len(pts) == 5000

    def test_sampling_is_deterministic(self):
        mesh = self._unit_square_mesh()
        a = sample_mesh_points(mesh, seed=7)
        b = sample_mesh_points(mesh, seed=7)
        assert np.array_equal(a, b)

    def test_triangle_free_mesh_uses_vertices(self):
        pts = np.random.default_rng(2).uniform(0, 1, (50, 3))
        out = sample_mesh_points(points_as_mesh(pts))
        assert np.array_equal(out, pts)
