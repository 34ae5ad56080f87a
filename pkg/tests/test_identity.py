"""Spherical interpolation, identity merging, and the identity cache."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import CountingRecognition
from oracles import naive_slerp

from morphbench.corpus import SubjectRecord
from morphbench.errors import BackendError, IntegrityError
from morphbench.identity import (AntipodalError, IdentityMatrix,
                                 IdentityStore, extract_identity,
                                 image_list_hash, merge_identities,
                                 representative_embedding, slerp)


def unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


class TestSlerp:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            d = int(rng.integers(2, 33))
            a = rng.normal(size=d)
            b = rng.normal(size=d)
            lam = float(rng.uniform(0, 1))
            expected = naive_slerp(list(map(float, a)), list(map(float, b)), lam)
            got = slerp(a, b, lam)
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_endpoints_exact(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            a = unit(rng, 8)
            b = unit(rng, 8)
            np.testing.assert_allclose(slerp(a, b, 0.0), a, atol=1e-12)
            np.testing.assert_allclose(slerp(a, b, 1.0), b, atol=1e-12)

    def test_unit_sphere_closure(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a = unit(rng, 16)
            b = unit(rng, 16)
            lam = float(rng.uniform(0, 1))
            out = slerp(a, b, lam)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            a = unit(rng, 6)
            b = unit(rng, 6)
            lam = float(rng.uniform(0, 1))
            np.testing.assert_allclose(slerp(a, b, lam), slerp(b, a, 1.0 - lam),
                                       atol=1e-10)

    def test_midpoint_of_orthogonal_axes(self):
        out = slerp(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        np.testing.assert_allclose(out, [np.sqrt(0.5), np.sqrt(0.5)],
                                   atol=1e-12)

    def test_parallel_fallback_interpolates_norm(self):
        u = np.array([0.6, 0.8])
        out = slerp(2.0 * u, 3.0 * u, 0.25)
        # same direction, norm (1-lam)*2 + lam*3 = 2.25
        np.testing.assert_allclose(out, 2.25 * u, atol=1e-12)

    def test_parallel_fallback_keeps_endpoints(self):
        u = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(slerp(u, u, 0.0), u, atol=0)
        np.testing.assert_allclose(slerp(u, u, 1.0), u, atol=0)

    def test_nearly_parallel_stays_finite_and_unit(self):
        u = np.array([1.0, 0.0])
        v = np.array([1.0, 1e-9])
        v = v / np.linalg.norm(v)
        out = slerp(u, v, 0.5)
        assert np.all(np.isfinite(out))
        assert abs(np.linalg.norm(out) - 1.0) < 1e-9

    def test_antipodal_raises(self):
        u = np.array([0.0, 1.0, 0.0])
        with pytest.raises(AntipodalError):
            slerp(u, -u, 0.5)

    def test_lam_out_of_range(self):
        u = np.array([1.0, 0.0])
        v = np.array([0.0, 1.0])
        for lam in (-0.1, 1.1):
            with pytest.raises(ValueError, match="lam"):
                slerp(u, v, lam)

    def test_invalid_inputs(self):
        u = np.array([1.0, 0.0])
        with pytest.raises(ValueError):
            slerp(u, np.array([1.0, 0.0, 0.0]), 0.5)
        with pytest.raises(ValueError):
            slerp(u, np.array([0.0, 0.0]), 0.5)
        with pytest.raises(ValueError):
            slerp(u, np.array([np.nan, 1.0]), 0.5)


class TestIdentityMatrix:
    def test_validation(self):
        with pytest.raises(ValueError):
            IdentityMatrix("s", np.zeros((0, 4)), [])
        with pytest.raises(ValueError):
            IdentityMatrix("s", np.array([[1.0, np.inf]]), ["i"])
        with pytest.raises(ValueError):
            IdentityMatrix("s", np.zeros((1, 4)), ["i"])  # zero row
        with pytest.raises(ValueError):
            IdentityMatrix("s", np.ones((2, 4)), ["only-one"])

    def test_merge_is_rowwise_slerp(self):
        rng = np.random.default_rng(21)
        rows1 = np.stack([unit(rng, 8) for _ in range(5)])
        rows2 = np.stack([unit(rng, 8) for _ in range(5)])
        m1 = IdentityMatrix("s1", rows1, [f"a{i}" for i in range(5)])
        m2 = IdentityMatrix("s2", rows2, [f"b{i}" for i in range(5)])

        merged = merge_identities(m1, m2, 0.3)

        assert merged.subject_id == "s1__s2"
        assert merged.source_image_ids == [f"a{i}+b{i}" for i in range(5)]
        for i in range(5):
            np.testing.assert_allclose(merged.rows[i],
                                       slerp(rows1[i], rows2[i], 0.3),
                                       atol=1e-12)

    def test_merge_default_is_midpoint(self):
        rng = np.random.default_rng(22)
        rows1 = np.stack([unit(rng, 4) for _ in range(2)])
        rows2 = np.stack([unit(rng, 4) for _ in range(2)])
        m1 = IdentityMatrix("x", rows1, ["i0", "i1"])
        m2 = IdentityMatrix("y", rows2, ["j0", "j1"])
        np.testing.assert_allclose(merge_identities(m1, m2).rows,
                                   merge_identities(m1, m2, 0.5).rows)

    def test_merge_shape_mismatch_names_subjects(self):
        m1 = IdentityMatrix("s1", np.eye(2), ["a", "b"])
        m2 = IdentityMatrix("s2", np.eye(3), ["a", "b", "c"])
        with pytest.raises(ValueError, match="s1.*s2"):
            merge_identities(m1, m2)

    def test_merge_row_error_names_row(self):
        u = np.array([1.0, 0.0])
        m1 = IdentityMatrix("s1", np.stack([u, u]), ["a", "b"])
        m2 = IdentityMatrix("s2", np.stack([u, -u]), ["a", "b"])
        with pytest.raises(AntipodalError, match="row 1"):
            merge_identities(m1, m2)

    def test_representative_embedding(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = IdentityMatrix("s", rows, ["a", "b"])
        rep = representative_embedding(m)
        np.testing.assert_allclose(rep, [np.sqrt(0.5), np.sqrt(0.5)],
                                   atol=1e-12)

    def test_representative_embedding_cancellation(self):
        rows = np.array([[1.0, 0.0], [-1.0, 0.0]])
        m = IdentityMatrix("s", rows, ["a", "b"])
        with pytest.raises(ValueError, match="cancel"):
            representative_embedding(m)


class TestIdentityStore:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(31)
        rows = rng.normal(size=(7, 16))
        matrix = IdentityMatrix("subj", rows, [f"i{k}" for k in range(7)])
        store = IdentityStore(tmp_path / "ident")

        store.save(matrix, "stub")
        key = store.key("subj", "stub", matrix.source_image_ids)
        loaded = store.load(key)

        assert loaded.subject_id == "subj"
        assert loaded.source_image_ids == matrix.source_image_ids
        assert loaded.rows.dtype == np.float64
        assert np.array_equal(loaded.rows, matrix.rows)

    def test_same_content_saves_are_idempotent(self, tmp_path):
        rows = np.eye(3)
        matrix = IdentityMatrix("s", rows, ["a", "b", "c"])
        store = IdentityStore(tmp_path)
        p1 = store.save(matrix, "stub")
        p2 = store.save(matrix, "stub")
        assert p1 == p2

    def test_collision_with_different_content_raises(self, tmp_path):
        store = IdentityStore(tmp_path)
        ids = ["a", "b", "c"]
        store.save(IdentityMatrix("s", np.eye(3), ids), "stub")
        with pytest.raises(IntegrityError, match="collision"):
            store.save(IdentityMatrix("s", 2 * np.eye(3), ids), "stub")

    def test_corrupt_payload_detected(self, tmp_path):
        store = IdentityStore(tmp_path)
        matrix = IdentityMatrix("s", np.eye(2), ["a", "b"])
        path = store.save(matrix, "stub")
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        key = store.key("s", "stub", ["a", "b"])
        with pytest.raises(IntegrityError, match="corrupt"):
            store.load(key)

    def test_dotted_subject_ids_keep_sidecar_pairing(self, tmp_path):
        store = IdentityStore(tmp_path)
        matrix = IdentityMatrix("s.01.x", np.eye(2), ["a.1", "b.2"])
        store.save(matrix, "stub")
        key = store.key("s.01.x", "stub", ["a.1", "b.2"])
        loaded = store.load(key)
        assert np.array_equal(loaded.rows, np.eye(2))
        assert (tmp_path / f"{key}.identity.sha256").is_file()

    def test_image_list_hash_is_order_sensitive(self):
        assert image_list_hash(["a", "b"]) != image_list_hash(["b", "a"])
        assert len(image_list_hash(["a"])) == 16


class TestExtractIdentity:
    def subject(self):
        return SubjectRecord(subject_id="s0", gender="unknown")

    def test_rows_in_input_order(self, image_factory):
        paths = [image_factory(seed=i) for i in range(3)]
        backend = CountingRecognition()
        matrix = extract_identity(self.subject(), paths, backend)
        assert matrix.n == 3
        assert matrix.d == backend.embedding_dim
        for i, p in enumerate(paths):
            np.testing.assert_allclose(matrix.rows[i], backend.embed(p))

    def test_cache_hit_skips_backend(self, tmp_path, image_factory):
        paths = [image_factory(seed=i) for i in range(2)]
        store = IdentityStore(tmp_path / "cache")
        backend = CountingRecognition()

        first = extract_identity(self.subject(), paths, backend,
                                 image_ids=["a", "b"], store=store)
        calls_after_first = backend.calls
        second = extract_identity(self.subject(), paths, backend,
                                  image_ids=["a", "b"], store=store)

        assert calls_after_first == 2
        assert backend.calls == calls_after_first
        assert np.array_equal(first.rows, second.rows)

    def test_backend_failure_names_image(self, image_factory):
        paths = [image_factory(seed=1), image_factory(seed=2)]

        class Exploding(CountingRecognition):
            def embed(self, path):
                if self.calls == 1:
                    raise RuntimeError("boom")
                return super().embed(path)

        with pytest.raises(BackendError, match="'img-b' \\(position 1\\)"):
            extract_identity(self.subject(), paths, Exploding(),
                             image_ids=["img-a", "img-b"])

    def test_wrong_shape_is_backend_error(self, image_factory):
        path = image_factory(seed=3)

        class WrongShape(CountingRecognition):
            def embed(self, _):
                return np.zeros(self.embedding_dim + 1)

        with pytest.raises(BackendError, match="shape"):
            extract_identity(self.subject(), [path], WrongShape())

    def test_needs_at_least_one_image(self):
        with pytest.raises(ValueError, match="at least one"):
            extract_identity(self.subject(), [], CountingRecognition())
