import hashlib
import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulm.autodiff import Tensor, backward, reduce_sum, mul
from ulm.catalog import CATALOG
from ulm.dataset import DataError
from ulm.embeddings import (EmbeddingTable, load_table, pseudo_table, value_embed,
                            value_embed_batch, write_table)

FER = next(f for f in CATALOG if f.code == "FER")


class TestPseudoTable:
    def test_deterministic(self):
        a, b = pseudo_table(dim=64, seed=0), pseudo_table(dim=64, seed=0)
        for fid in a.entries:
            np.testing.assert_array_equal(a[fid], b[fid])

    def test_seed_changes_vectors(self):
        a, b = pseudo_table(dim=64, seed=0), pseudo_table(dim=64, seed=1)
        assert not np.allclose(a[FER.id], b[FER.id])

    @pytest.mark.parametrize("dim", [8, 17, 64, 300])
    def test_unit_norm(self, dim):
        t = pseudo_table(dim=dim)
        assert t.provenance == "pseudo" and t.dim == dim
        for vec in t.entries.values():
            assert abs(np.linalg.norm(vec) - 1.0) < 1e-12

    def test_near_orthogonal(self):
        t = pseudo_table(dim=64, seed=0)
        worst = max(abs(float(t[a] @ t[b])) for a, b in itertools.combinations(t.entries, 2))
        assert worst < 0.5

    def test_matches_hand_expansion(self):
        """Recompute the seeded hash expansion with struct instead of int.from_bytes."""
        digest = hashlib.sha256(f"0\x00{FER.label}\x000".encode()).digest()
        digest += hashlib.sha256(f"0\x00{FER.label}\x001".encode()).digest()
        words = struct.unpack("<8Q", digest)
        raw = np.array([(w >> 11) * 2.0**-52 - 1.0 for w in words])
        np.testing.assert_allclose(pseudo_table(dim=8, seed=0)[FER.id], raw / np.linalg.norm(raw),
                                   rtol=0, atol=1e-15)

    def test_small_dim_rejected(self):
        with pytest.raises(ValueError):
            pseudo_table(dim=7)


class TestTableFile:
    def test_round_trip(self, tmp_path):
        t = pseudo_table(dim=64)
        write_table(t, tmp_path / "e.tsv")
        back = load_table(tmp_path / "e.tsv")
        assert back.dim == 64 and back.provenance == "file"
        for fid in t.entries:
            np.testing.assert_array_equal(back[fid], t[fid])

    def test_missing_label(self, tmp_path):
        write_table(pseudo_table(dim=8), tmp_path / "e.tsv")
        lines = (tmp_path / "e.tsv").read_text(encoding="utf-8").splitlines()
        kept = [ln for ln in lines if not ln.startswith(FER.label)]
        (tmp_path / "e.tsv").write_text("\n".join(kept) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="FER"):
            load_table(tmp_path / "e.tsv")

    def test_ragged(self, tmp_path):
        write_table(pseudo_table(dim=8), tmp_path / "e.tsv")
        lines = (tmp_path / "e.tsv").read_text(encoding="utf-8").splitlines()
        lines[3] = lines[3].rsplit("\t", 1)[0]
        (tmp_path / "e.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="ragged"):
            load_table(tmp_path / "e.tsv")

    def test_zero_vector_rejected(self):
        with pytest.raises(DataError, match="all-zero"):
            EmbeddingTable(2, {1: np.zeros(2)}, "file")


class TestValueEmbed:
    table = EmbeddingTable(2, {1: np.array([2.0, -4.0])}, "file")

    def test_zero_value_gives_shift(self):
        B = np.array([0.3, -0.7])
        np.testing.assert_array_equal(value_embed(1, 0.0, self.table, B), B)

    def test_unit_value_gives_label(self):
        np.testing.assert_array_equal(value_embed(1, 1.0, self.table, np.zeros(2)), [2.0, -4.0])

    def test_worked_arithmetic(self):
        np.testing.assert_array_equal(value_embed(1, 0.5, self.table, np.ones(2)), [2.0, -1.0])

    def test_unknown_feature(self):
        with pytest.raises(KeyError):
            value_embed(5, 0.5, self.table, np.ones(2))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            value_embed(1, float("inf"), self.table, np.ones(2))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([f.id for f in CATALOG]))
    def test_affine_in_value(self, a, b, fid):
        t = pseudo_table(dim=16)
        B = np.linspace(-1, 1, 16)
        diff = value_embed(fid, a, t, B) - value_embed(fid, b, t, B)
        np.testing.assert_allclose(diff, (a - b) * t[fid], atol=1e-12)

    def test_shift_gradient_sums_positions(self):
        rng = np.random.default_rng(0)
        labels = rng.normal(size=(3, 5, 4))
        values = rng.uniform(0.1, 0.9, (3, 5))
        upstream = rng.normal(size=(3, 5, 4))
        B = Tensor(np.zeros(4), requires_grad=True)
        loss = reduce_sum(mul(value_embed_batch(labels, values, B), Tensor(upstream)))
        grads = backward(loss, [B])
        np.testing.assert_allclose(grads[0], upstream.sum(axis=(0, 1)), atol=1e-12)
