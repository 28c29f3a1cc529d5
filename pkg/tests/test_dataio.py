import numpy as np
import pytest

from iqscore import (
    EmbeddingSet,
    LabeledEmbeddingSet,
    NoiseConfig,
    SamplingConfig,
    dedup_within_identity,
    inject_uniform_flip_noise,
    l2_normalize_rows,
    read_embedding_file,
    stratified_sample,
    write_embedding_file,
)
from iqscore.dataio import derive_labels_path
from iqscore.errors import (
    FormatError,
    LabelCountMismatch,
    NoEligibleIdentity,
    NonFiniteValue,
    NotNormalized,
    SingleIdentity,
)

from conftest import make_labeled, random_unit_set


def _roundtrip(tmp_path, labeled, name="set"):
    emb = tmp_path / f"{name}.iqem"
    write_embedding_file(labeled, emb, "binary")
    return read_embedding_file(emb, "binary")


class TestBinaryFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        labeled = random_unit_set(17, 5, seed=0, labels_of=[0, 7, 9])
        back = _roundtrip(tmp_path, labeled)
        np.testing.assert_array_equal(back.embeddings.data, labeled.embeddings.data)
        np.testing.assert_array_equal(back.labels, labeled.labels)

    def test_roundtrip_minimal(self, tmp_path):
        labeled = make_labeled([[2.5]], [3], normalized=False)
        back = _roundtrip(tmp_path, labeled)
        assert back.n == 1 and back.d == 1
        np.testing.assert_array_equal(back.embeddings.data, labeled.embeddings.data)

    def test_noncontiguous_labels_preserved(self, tmp_path):
        labeled = make_labeled(np.eye(3), [0, 7, 9])
        back = _roundtrip(tmp_path, labeled)
        np.testing.assert_array_equal(back.labels, [0, 7, 9])

    def test_labels_path_derivation(self):
        assert derive_labels_path("x/y.iqem") == "x/y.iqlb"
        assert derive_labels_path("x/y.bin") == "x/y.bin.iqlb"

    def test_truncated_payload(self, tmp_path):
        labeled = make_labeled(np.eye(4), [0, 0, 1, 1])
        emb = tmp_path / "t.iqem"
        write_embedding_file(labeled, emb, "binary")
        raw = emb.read_bytes()
        emb.write_bytes(raw[:-4])
        with pytest.raises(FormatError):
            read_embedding_file(emb, "binary")

    def test_oversized_payload(self, tmp_path):
        labeled = make_labeled(np.eye(2), [0, 1])
        emb = tmp_path / "t.iqem"
        write_embedding_file(labeled, emb, "binary")
        emb.write_bytes(emb.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_embedding_file(emb, "binary")

    def test_bad_magic_and_version(self, tmp_path):
        labeled = make_labeled(np.eye(2), [0, 1])
        emb = tmp_path / "t.iqem"
        write_embedding_file(labeled, emb, "binary")
        raw = bytearray(emb.read_bytes())
        raw[:4] = b"NOPE"
        emb.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_embedding_file(emb, "binary")
        raw[:4] = b"IQEM"
        raw[4] = 9
        emb.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_embedding_file(emb, "binary")

    def test_label_count_mismatch(self, tmp_path):
        a = make_labeled(np.eye(3), [0, 1, 2])
        b = make_labeled(np.eye(2), [0, 1])
        write_embedding_file(a, tmp_path / "a.iqem", "binary")
        write_embedding_file(b, tmp_path / "b.iqem", "binary")
        with pytest.raises(LabelCountMismatch):
            read_embedding_file(tmp_path / "a.iqem", "binary",
                                labels_path=tmp_path / "b.iqlb")

    def test_nonfinite_payload_rejected(self, tmp_path):
        labeled = make_labeled(np.eye(2), [0, 1])
        emb = tmp_path / "t.iqem"
        write_embedding_file(labeled, emb, "binary")
        raw = bytearray(emb.read_bytes())
        raw[24:28] = np.array([np.nan], dtype="<f4").tobytes()
        emb.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteValue):
            read_embedding_file(emb, "binary")


class TestCsvFormat:
    def test_string_labels_first_appearance(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("1.0,0.0,A\n0.0,1.0,B\n0.5,0.5,A\n")
        labeled = read_embedding_file(p, "csv")
        assert labeled.n == 3 and labeled.d == 2
        np.testing.assert_array_equal(labeled.labels, [0, 1, 0])
        assert labeled.label_names == ("A", "B")

    def test_header_autodetected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("f0,f1,label\n1.0,0.0,A\n0.0,1.0,B\n")
        labeled = read_embedding_file(p, "csv")
        assert labeled.n == 2
        np.testing.assert_array_equal(labeled.labels, [0, 1])

    def test_integer_labels(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("1.0,0.0,5\n0.0,1.0,5\n")
        labeled = read_embedding_file(p, "csv")
        np.testing.assert_array_equal(labeled.labels, [0, 0])
        assert labeled.label_names == ("5",)

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("1.0,0.0,A\n0.0,B\n")
        with pytest.raises(FormatError):
            read_embedding_file(p, "csv")

    def test_non_numeric_feature_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("1.0,0.0,A\noops,1.0,B\n")
        with pytest.raises(FormatError):
            read_embedding_file(p, "csv")

    def test_csv_roundtrip(self, tmp_path):
        labeled = random_unit_set(6, 3, seed=4, labels_of=[0, 1, 2])
        p = tmp_path / "x.csv"
        write_embedding_file(labeled, p, "csv")
        back = read_embedding_file(p, "csv")
        np.testing.assert_array_equal(back.embeddings.data, labeled.embeddings.data)
        np.testing.assert_array_equal(back.labels, labeled.labels)


class TestDedup:
    def test_identical_rows_dropped(self):
        labeled = make_labeled([[1, 0], [1, 0]], [0, 0])
        kept, log = dedup_within_identity(labeled, 0.9999)
        assert kept.n == 1
        assert log[0].dropped_row == 1 and log[0].kept_row == 0
        assert log[0].similarity >= 0.9999

    def test_orthogonal_rows_kept(self):
        labeled = make_labeled([[1, 0], [0, 1]], [0, 0])
        kept, log = dedup_within_identity(labeled, 0.9999)
        assert kept.n == 2 and log == []

    def test_greedy_scan_example(self):
        labeled = make_labeled([[1, 0], [1, 0], [0, 1]], [0, 0, 0])
        kept, log = dedup_within_identity(labeled, 0.9999)
        np.testing.assert_array_equal(kept.embeddings.data, [[1, 0], [0, 1]])
        assert len(log) == 1
        assert (log[0].dropped_row, log[0].kept_row) == (1, 0)

    def test_cross_identity_never_compared(self):
        labeled = make_labeled([[1, 0], [1, 0]], [0, 1])
        kept, log = dedup_within_identity(labeled, 0.9999)
        assert kept.n == 2 and log == []

    def test_requires_normalized(self):
        emb = EmbeddingSet(np.eye(2, dtype=np.float32) * 2)
        labeled = LabeledEmbeddingSet(emb, np.array([0, 0], dtype=np.int64))
        with pytest.raises(NotNormalized):
            dedup_within_identity(labeled, 0.9999)

    def test_first_row_of_identity_never_dropped(self):
        labeled = random_unit_set(50, 4, seed=9, labels_of=[0, 1, 2, 3])
        kept, log = dedup_within_identity(labeled, 0.8)
        firsts = {int(rows[0]) for rows in labeled.identity_index.values()}
        dropped = {r.dropped_row for r in log}
        assert not (firsts & dropped)
        assert kept.n + len(log) == labeled.n


class TestStratifiedSample:
    def test_forced_cardinality(self):
        labeled = random_unit_set(6, 4, seed=1, labels_of=[0, 1])
        subset, manifest = stratified_sample(
            labeled, SamplingConfig(target_identities=2, per_identity=1, seed=3))
        assert subset.n == 2
        assert len(np.unique(subset.labels)) == 2
        assert len(manifest.entries) == 2

    def test_target_clamped_to_available(self):
        labeled = random_unit_set(50, 4, seed=2, labels_of=list(range(5)))
        subset, manifest = stratified_sample(
            labeled, SamplingConfig(target_identities=1000, per_identity=10, seed=0))
        assert subset.n == 50
        assert len(manifest.entries) == 5

    def test_per_identity_clamped(self):
        labeled = random_unit_set(9, 4, seed=3, labels_of=[0, 1, 2])
        subset, _ = stratified_sample(
            labeled, SamplingConfig(target_identities=3, per_identity=10, seed=0))
        assert subset.n == 9

    def test_same_seed_bit_identical(self):
        labeled = random_unit_set(200, 8, seed=4, labels_of=list(range(40)))
        cfg = SamplingConfig(target_identities=20, per_identity=3, seed=77)
        s1, m1 = stratified_sample(labeled, cfg)
        s2, m2 = stratified_sample(labeled, cfg)
        assert m1.entries == m2.entries
        assert s1.embeddings.data.tobytes() == s2.embeddings.data.tobytes()
        assert s1.labels.tobytes() == s2.labels.tobytes()

    def test_different_seed_differs(self):
        labeled = random_unit_set(400, 8, seed=5, labels_of=list(range(100)))
        cfg_a = SamplingConfig(target_identities=20, per_identity=2, seed=1)
        cfg_b = SamplingConfig(target_identities=20, per_identity=2, seed=2)
        _, m1 = stratified_sample(labeled, cfg_a)
        _, m2 = stratified_sample(labeled, cfg_b)
        assert m1.entries != m2.entries

    def test_grouped_by_identity_in_selection_order(self):
        labeled = random_unit_set(60, 4, seed=6, labels_of=list(range(12)))
        subset, manifest = stratified_sample(
            labeled, SamplingConfig(target_identities=12, per_identity=5, seed=8))
        expected = np.concatenate([np.full(len(rows), lab)
                                   for lab, rows in manifest.entries])
        np.testing.assert_array_equal(subset.labels, expected)
        for _, rows in manifest.entries:
            assert list(rows) == sorted(rows)

    def test_small_identities_excluded(self):
        rows = np.eye(4, dtype=np.float32)
        labeled = LabeledEmbeddingSet(
            l2_normalize_rows(EmbeddingSet(rows)), np.array([0, 0, 1, 2], dtype=np.int64))
        subset, manifest = stratified_sample(
            labeled, SamplingConfig(target_identities=10, per_identity=5, seed=0,
                                    min_identity_size=2))
        assert set(np.unique(subset.labels)) == {0}
        assert manifest.excluded_small == 2

    def test_no_eligible_identity(self):
        labeled = make_labeled(np.eye(3), [0, 1, 2])
        with pytest.raises(NoEligibleIdentity):
            stratified_sample(labeled, SamplingConfig(min_identity_size=2))

    def test_dedup_applied_before_draw(self):
        # identity 0 has three copies of one direction plus one distinct row;
        # drawing 2 can only ever return the two distinct directions
        labeled = make_labeled([[1, 0], [1, 0], [1, 0], [0, 1]], [0, 0, 0, 0])
        for seed in range(10):
            subset, manifest = stratified_sample(
                labeled, SamplingConfig(target_identities=1, per_identity=2, seed=seed))
            assert subset.n == 2
            assert manifest.dedup_dropped == 2
            sims = subset.embeddings.data @ subset.embeddings.data.T
            assert sims[0, 1] < 0.9999


class TestNoiseInjection:
    def test_zero_ratio_identity(self):
        labeled = random_unit_set(30, 4, seed=7, labels_of=[0, 1, 2])
        noisy, log = inject_uniform_flip_noise(labeled, NoiseConfig(0.0, seed=1))
        np.testing.assert_array_equal(noisy.labels, labeled.labels)
        assert log.flips == []

    def test_full_ratio_flips_everything(self):
        labeled = random_unit_set(40, 4, seed=8, labels_of=[0, 1, 2, 3])
        noisy, log = inject_uniform_flip_noise(labeled, NoiseConfig(1.0, seed=2))
        assert (noisy.labels != labeled.labels).all()
        assert len(log.flips) == labeled.n

    def test_closed_set_and_log_consistency(self):
        labeled = random_unit_set(300, 4, seed=9, labels_of=[1, 4, 6])
        noisy, log = inject_uniform_flip_noise(labeled, NoiseConfig(0.5, seed=3))
        assert set(np.unique(noisy.labels)) <= set(np.unique(labeled.labels))
        for f in log.flips:
            assert f.new_label != f.old_label
            assert labeled.labels[f.row] == f.old_label
            assert noisy.labels[f.row] == f.new_label
        untouched = np.setdiff1d(np.arange(labeled.n), [f.row for f in log.flips])
        np.testing.assert_array_equal(noisy.labels[untouched], labeled.labels[untouched])

    def test_single_identity_rejected(self):
        labeled = random_unit_set(5, 4, seed=10, labels_of=[0])
        with pytest.raises(SingleIdentity):
            inject_uniform_flip_noise(labeled, NoiseConfig(0.5, seed=0))
        inject_uniform_flip_noise(labeled, NoiseConfig(0.0, seed=0))

    def test_embeddings_untouched_and_deterministic(self):
        labeled = random_unit_set(100, 4, seed=11, labels_of=[0, 1, 2, 3, 4])
        n1, l1 = inject_uniform_flip_noise(labeled, NoiseConfig(0.3, seed=5))
        n2, l2 = inject_uniform_flip_noise(labeled, NoiseConfig(0.3, seed=5))
        assert n1.embeddings.data.tobytes() == labeled.embeddings.data.tobytes()
        np.testing.assert_array_equal(n1.labels, n2.labels)
        assert [f.to_dict() for f in l1.flips] == [f.to_dict() for f in l2.flips]


class TestConfigValidation:
    def test_sampling_config(self):
        with pytest.raises(ValueError):
            SamplingConfig(target_identities=0)
        with pytest.raises(ValueError):
            SamplingConfig(dedup_threshold=0.0)
        with pytest.raises(ValueError):
            SamplingConfig(dedup_threshold=1.5)

    def test_noise_config(self):
        with pytest.raises(ValueError):
            NoiseConfig(-0.1)
        with pytest.raises(ValueError):
            NoiseConfig(1.1)
