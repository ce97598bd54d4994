"""Corpus parsing, leave-one-out splitting, and batching."""

import numpy as np
import pytest

from seqfilt import data
from seqfilt.train import make_synthetic


def write_corpus(tmp_path, lines, name="interactions.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_repeats_allowed(self, tmp_path):
        path = write_corpus(tmp_path, ["1 5 9 5"])
        corpus = data.load_corpus(path, min_interactions=3)
        # ids are remapped densely: 5 -> 1, 9 -> 2
        assert corpus.sequences == [[1, 2, 1]]
        assert corpus.num_items == 2
        assert corpus.item_map == {5: 1, 9: 2}

    def test_empty_file(self, tmp_path):
        path = write_corpus(tmp_path, [""])
        with pytest.raises(data.DataError, match="empty"):
            data.load_corpus(path)

    def test_malformed_line_reports_number(self, tmp_path):
        path = write_corpus(tmp_path, ["1 2 3 4", "2 5 x 6"])
        with pytest.raises(data.DataError, match=":2"):
            data.load_corpus(path, min_interactions=3)

    def test_nonpositive_item_rejected(self, tmp_path):
        path = write_corpus(tmp_path, ["1 2 0 4"])
        with pytest.raises(data.DataError):
            data.load_corpus(path, min_interactions=3)

    def test_duplicate_user_rejected(self, tmp_path):
        path = write_corpus(tmp_path, ["1 2 3 4", "1 5 6 7"])
        with pytest.raises(data.DataError, match="duplicate"):
            data.load_corpus(path, min_interactions=3)

    def test_short_users_dropped_and_counted(self, tmp_path):
        path = write_corpus(
            tmp_path,
            ["1 4 5 6 7 8", "2 9 9", "3 10 11 12 13 14 15"],
        )
        corpus = data.load_corpus(path, min_interactions=5)
        assert corpus.users == [1, 3]
        assert corpus.report.dropped_users == 1
        assert corpus.report.min_interactions == 5

    def test_report_statistics(self, tmp_path):
        path = write_corpus(tmp_path, ["1 2 4 6", "2 2 2 4 8"])
        corpus = data.load_corpus(path, min_interactions=3)
        rep = corpus.report
        assert rep.num_users == 2
        assert rep.num_items == 4  # {2, 4, 6, 8}
        assert rep.num_interactions == 7
        assert rep.avg_length == pytest.approx(3.5)
        assert rep.sparsity == pytest.approx(1.0 - 7 / 8)
        assert "Sparsity" in rep.summary()

    def test_remap_is_dense_and_sorted(self, tmp_path):
        path = write_corpus(tmp_path, ["1 100 7 42", "2 7 100 100"])
        corpus = data.load_corpus(path, min_interactions=3)
        assert corpus.item_map == {7: 1, 42: 2, 100: 3}
        assert corpus.num_items == 3


class TestSplit:
    def test_four_item_sequence(self):
        corpus = data.Corpus([1], [[10, 11, 12, 13]], 13)
        split = data.split_loo(corpus)
        assert split.prefixes == [[10, 11]]
        assert split.valid_targets == [12]
        assert split.test_targets == [13]

    def test_three_item_sequence(self):
        corpus = data.Corpus([1], [[1, 2, 3]], 3)
        split = data.split_loo(corpus)
        assert split.prefixes == [[1]]
        assert split.valid_targets == [2]
        assert split.test_targets == [3]

    def test_single_user_single_test_example(self):
        corpus = data.Corpus([9], [[1, 2, 3, 4, 5]], 5)
        split = data.split_loo(corpus)
        contexts, targets = data.eval_instances(split, "test")
        assert len(contexts) == 1 and len(targets) == 1

    def test_round_trip_reconstruction(self, rng):
        corpus = make_synthetic(25, 9, 7, rng)
        split = data.split_loo(corpus)
        rebuilt = [
            p + [v, t]
            for p, v, t in zip(split.prefixes, split.valid_targets, split.test_targets)
        ]
        assert rebuilt == corpus.sequences

    def test_no_leakage_into_training_targets(self, rng):
        corpus = make_synthetic(40, 11, 9, rng)
        split = data.split_loo(corpus)
        contexts, targets = data.train_examples(split)
        by_user = {}
        idx = 0
        for user, prefix in enumerate(split.prefixes):
            for j in range(1, len(prefix)):
                assert contexts[idx] == prefix[:j]
                assert targets[idx] == prefix[j]
                idx += 1
        assert idx == len(contexts)

    def test_test_context_includes_valid_item(self):
        corpus = data.Corpus([1], [[1, 2, 3, 4]], 4)
        split = data.split_loo(corpus)
        contexts, targets = data.eval_instances(split, "test")
        assert contexts[0] == [1, 2, 3]
        assert targets[0] == 4
        contexts, targets = data.eval_instances(split, "valid")
        assert contexts[0] == [1, 2]
        assert targets[0] == 3


class TestBatches:
    def test_left_padding(self):
        batches = list(data.make_batches([[4, 5, 6]], [7], max_len=5, batch_size=4))
        ids, targets = batches[0]
        assert np.array_equal(ids[0], [0, 0, 4, 5, 6])
        assert targets[0] == 7

    def test_truncation_keeps_most_recent(self):
        batches = list(
            data.make_batches([[1, 2, 3, 4, 5, 6, 7]], [8], max_len=5, batch_size=1)
        )
        ids, _ = batches[0]
        assert np.array_equal(ids[0], [3, 4, 5, 6, 7])

    def test_shuffle_deterministic_per_seed(self):
        contexts = [[i] for i in range(1, 33)]
        targets = list(range(1, 33))
        a = [
            t.tolist()
            for _, t in data.make_batches(
                contexts, targets, 4, 8, np.random.default_rng(3)
            )
        ]
        b = [
            t.tolist()
            for _, t in data.make_batches(
                contexts, targets, 4, 8, np.random.default_rng(3)
            )
        ]
        assert a == b

    def test_padding_is_contiguous_prefix(self, rng):
        corpus = make_synthetic(30, 8, 6, rng)
        split = data.split_loo(corpus)
        contexts, targets = data.train_examples(split)
        for ids, tg in data.make_batches(contexts, targets, 7, 16, rng):
            assert np.all((tg >= 1) & (tg <= 8))
            for row in ids:
                nz = np.flatnonzero(row)
                if nz.size:
                    assert np.all(row[nz[0] :] > 0)
