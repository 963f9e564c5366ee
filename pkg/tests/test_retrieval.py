import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orderalign.loss import order_penalty
from orderalign.retrieval import (IMAGE_TO_TEXT, TEXT_TO_IMAGE, SimilarityMatrix,
                                  bidirectional_report, kfold_report, query_ranks, rank_matrix,
                                  rank_stats, recall_at_k, report)


def oracle_ranks(i2t, t2i, caption_image):
    """Sort every candidate list explicitly and scan for the first ground truth."""
    n_img, n_txt = t2i.shape
    i2t_ranks = []
    for i in range(n_img):
        order = sorted(range(n_txt), key=lambda j: (-i2t[i, j], j))
        i2t_ranks.append(next(pos for pos, j in enumerate(order, 1) if caption_image[j] == i))
    t2i_ranks = []
    for j in range(n_txt):
        order = sorted(range(n_img), key=lambda i: (-t2i[i, j], i))
        t2i_ranks.append(order.index(caption_image[j]) + 1)
    return np.array(i2t_ranks), np.array(t2i_ranks)


def random_instance(r, n_img, per_image, quantize=False):
    caption_image = np.repeat(np.arange(n_img), per_image)
    r.shuffle(caption_image)
    scores = r.standard_normal((n_img, caption_image.size))
    i2t = r.standard_normal((n_img, caption_image.size))
    if quantize:
        # force many ties
        scores, i2t = np.round(scores), np.round(i2t)
    return SimilarityMatrix(scores, caption_image, i2t)


class TestRanks:
    def test_single_pair(self):
        sim = SimilarityMatrix([[0.0]], [0])
        for d in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            r = report(sim, d)
            assert (r.r_at_1, r.r_at_10, r.med_r, r.mean_r) == (100.0, 100.0, 1.0, 1.0)

    def test_constant_scores_use_index_order(self):
        sim = SimilarityMatrix(np.zeros((3, 3)), [0, 1, 2])
        assert query_ranks(sim, TEXT_TO_IMAGE).tolist() == [1, 2, 3]
        assert query_ranks(sim, IMAGE_TO_TEXT).tolist() == [1, 2, 3]

    def test_three_by_three_from_penalties(self):
        texts = np.array([[0.2, 0.1], [0.9, 0.1], [0.1, 0.9]])
        images = np.array([[0.1, 0.1], [0.5, 0.0], [0.0, 1.0]])
        sim = rank_matrix(texts, images, [0, 1, 2])
        for i in range(3):
            for j in range(3):
                assert sim.scores[i, j] == order_penalty(texts[j], images[i])
                assert sim.i2t_scores[i, j] == order_penalty(images[i], texts[j])
        i2t, t2i = oracle_ranks(sim.i2t_scores, sim.scores, [0, 1, 2])
        assert query_ranks(sim, IMAGE_TO_TEXT).tolist() == i2t.tolist()
        assert query_ranks(sim, TEXT_TO_IMAGE).tolist() == t2i.tolist()

    def test_symmetric_order_shares_scores(self, rng):
        t, v = np.abs(rng.standard_normal((4, 3))), np.abs(rng.standard_normal((4, 3)))
        sim = rank_matrix(t, v, range(4), symmetric_argument_order=True)
        assert np.array_equal(sim.scores, sim.i2t_scores)

    def test_multi_caption_best_rank(self):
        # image 0 owns captions 1 and 2; caption 2 is its top match
        scores = np.array([[0.0, 0.1, 0.9], [0.5, 0.0, 0.0]])
        sim = SimilarityMatrix(scores, [1, 0, 0])
        assert query_ranks(sim, IMAGE_TO_TEXT).tolist() == [1, 1]

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("quantize", [False, True])
    def test_matches_oracle(self, seed, quantize):
        r = np.random.default_rng(seed)
        sim = random_instance(r, int(r.integers(1, 12)), int(r.integers(1, 4)), quantize)
        i2t, t2i = oracle_ranks(sim.i2t_scores, sim.scores, sim.caption_image)
        assert np.array_equal(query_ranks(sim, IMAGE_TO_TEXT), i2t)
        assert np.array_equal(query_ranks(sim, TEXT_TO_IMAGE), t2i)

    def test_uncovered_image_rejected(self):
        with pytest.raises(ValueError, match="without a ground-truth"):
            SimilarityMatrix(np.zeros((2, 2)), [0, 0])

    def test_unknown_direction(self):
        with pytest.raises(ValueError, match="unknown direction"):
            query_ranks(SimilarityMatrix([[0.0]], [0]), "both")


class TestMetrics:
    def test_perfect_diagonal(self):
        sim = SimilarityMatrix(np.eye(12), np.arange(12))
        for r in bidirectional_report(sim).values():
            assert (r.r_at_1, r.r_at_10, r.med_r, r.mean_r) == (100.0, 100.0, 1.0, 1.0)

    def test_ground_truth_always_last(self):
        n = 15
        sim = SimilarityMatrix(-np.eye(n), np.arange(n))
        for d in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            assert recall_at_k(sim, 1, d) == 0.0
            assert recall_at_k(sim, 10, d) == 0.0
            assert rank_stats(sim, d) == (float(n), float(n))

    def test_ranks_one_and_three(self):
        # image 0 finds its caption first; image 1's caption sits behind both others
        i2t = np.array([[1.0, 0.0, 0.0], [0.9, 0.5, 0.8]])
        sim = SimilarityMatrix(np.zeros((2, 3)), [0, 1, 0], i2t)
        assert query_ranks(sim, IMAGE_TO_TEXT).tolist() == [1, 3]
        assert rank_stats(sim, IMAGE_TO_TEXT) == (2.0, 2.0)
        assert recall_at_k(sim, 1, IMAGE_TO_TEXT) == 50.0

    def test_r10_clamped_to_candidates(self):
        sim = SimilarityMatrix(np.zeros((3, 3)), [0, 1, 2])
        assert report(sim, TEXT_TO_IMAGE).r_at_10 == 100.0
        with pytest.raises(ValueError, match="out of range"):
            recall_at_k(sim, 10, TEXT_TO_IMAGE)

    def test_kfold_mean(self):
        a = SimilarityMatrix(np.eye(4), np.arange(4))
        b = SimilarityMatrix(-np.eye(4), np.arange(4))
        rep = kfold_report([a, b])
        for d in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            m = rep.mean[d]
            assert m.r_at_1 == 50.0
            assert m.med_r == pytest.approx((1 + 4) / 2)
            assert m.mean_r == pytest.approx((1 + 4) / 2)
        assert len(rep.records()) == 6
        assert "mean" in rep.to_table()

    def test_kfold_json(self, tmp_path):
        import json
        rep = kfold_report([SimilarityMatrix(np.eye(3), np.arange(3))])
        rep.write_json(tmp_path / "r.json")
        rows = json.loads((tmp_path / "r.json").read_text())
        assert rows[-1]["fold"] == "mean" and rows[-1]["r_at_1"] == 100.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 15), st.integers(1, 3))
    def test_recall_monotone_in_k(self, seed, n_img, per):
        sim = random_instance(np.random.default_rng(seed), n_img, per, quantize=True)
        for d in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            n = sim.num_texts if d == IMAGE_TO_TEXT else sim.num_images
            values = [recall_at_k(sim, k, d) for k in range(1, n + 1)]
            assert values == sorted(values)
            assert values[-1] == 100.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 3))
    def test_ranks_invariant_under_increasing_maps(self, seed, n_img, per):
        sim = random_instance(np.random.default_rng(seed), n_img, per, quantize=True)
        mapped = SimilarityMatrix(np.exp(sim.scores) * 3 - 1, sim.caption_image,
                                  np.arctan(sim.i2t_scores))
        for d in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            assert np.array_equal(query_ranks(sim, d), query_ranks(mapped, d))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 3))
    def test_query_permutation_invariance(self, seed, n_img, per):
        # permuting the queries (without ties) permutes ranks, leaving the metrics unchanged
        r = np.random.default_rng(seed)
        sim = random_instance(r, n_img, per)
        pt = r.permutation(sim.num_texts)
        pi = r.permutation(sim.num_images)
        inv = np.argsort(pi)
        permuted = SimilarityMatrix(sim.scores[pi][:, pt], inv[sim.caption_image[pt]],
                                    sim.i2t_scores[pi][:, pt])
        assert bidirectional_report(sim) == bidirectional_report(permuted)
