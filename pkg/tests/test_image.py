import struct

import numpy as np
import pytest

from orderalign.gradcheck import check_gradients
from orderalign.image import (FEATURE_DIM, FeatureFileError, ImageFeatures, ImageProjector,
                              build_projector, embed_image, embed_images, load_features,
                              save_features, save_features_text)
from orderalign.tensor import Tensor


def random_feats(rng, n):
    return [ImageFeatures(f"id{i}", rng.standard_normal(FEATURE_DIM)) for i in range(n)]


class TestEmbedImage:
    def test_selector_rows(self, rng):
        feat = np.abs(rng.standard_normal(FEATURE_DIM)) + 0.1
        W = np.zeros((3, FEATURE_DIM))
        for row, col in enumerate((5, 17, 400)):
            W[row, col] = 1.0
        out = embed_image(ImageProjector(Tensor(W)), ImageFeatures("x", feat)).data
        sel = feat[[5, 17, 400]]
        np.testing.assert_allclose(out, sel / np.linalg.norm(sel), atol=1e-15)

    def test_unit_norm_nonnegative(self, rng):
        proj = build_projector(64, seed=3)
        for f in random_feats(rng, 5):
            e = embed_image(proj, f).data
            assert np.all(e >= 0)
            assert abs(np.linalg.norm(e) - 1) <= 1e-12

    def test_negating_weights_is_invariant(self, rng):
        proj = build_projector(32, seed=0)
        neg = ImageProjector(Tensor(-proj.w_image.data))
        f = random_feats(rng, 1)[0]
        assert np.array_equal(embed_image(proj, f).data, embed_image(neg, f).data)

    @pytest.mark.parametrize("scale", [0.01, 3.0, 1e4])
    def test_positive_scaling_is_invariant(self, rng, scale):
        proj = build_projector(32, seed=0)
        v = rng.standard_normal(FEATURE_DIM)
        np.testing.assert_allclose(embed_image(proj, v * scale).data, embed_image(proj, v).data,
                                   atol=1e-12)

    def test_batched_matches_single(self, rng):
        proj = build_projector(16, seed=1)
        X = rng.standard_normal((4, FEATURE_DIM))
        batched = embed_images(proj, X).data
        for i in range(4):
            np.testing.assert_allclose(batched[i], embed_image(proj, X[i]).data, atol=1e-12)

    def test_degenerate_norm_rejected(self):
        proj = ImageProjector(Tensor(np.zeros((4, FEATURE_DIM))))
        with pytest.raises(FloatingPointError):
            embed_image(proj, np.ones(FEATURE_DIM))

    def test_weight_gradient_finite_differences(self, rng):
        proj = build_projector(24, seed=2)
        X = rng.standard_normal((3, FEATURE_DIM))
        probe = rng.standard_normal((3, 24))

        def build(tape):
            out = embed_images(proj, X, tape)
            value = Tensor([np.sum(out.data * probe)])
            if tape is not None:
                def _backward(g):
                    out.grad += g[0] * probe
                tape.record("probe", (out,), value, _backward)
            return value

        r = check_gradients("W_i", build, [proj.w_image], 100, rng)
        assert r.passed, r.max_rel_error


class TestFeatureFile:
    def test_two_records_in_order(self, rng, tmp_path):
        feats = random_feats(rng, 2)
        save_features(tmp_path / "f.oaf", feats)
        back = load_features(tmp_path / "f.oaf")
        assert [f.image_id for f in back] == ["id0", "id1"]

    def test_round_trip_bitwise(self, rng, tmp_path):
        feats = random_feats(rng, 5)
        feats.append(ImageFeatures("ünïcode id", rng.standard_normal(FEATURE_DIM)))
        path = tmp_path / "f.oaf"
        save_features(path, feats)
        back = load_features(path)
        for a, b in zip(feats, back):
            assert a.image_id == b.image_id
            assert a.vector.tobytes() == b.vector.tobytes()
        save_features(tmp_path / "g.oaf", back)
        assert path.read_bytes() == (tmp_path / "g.oaf").read_bytes()

    def test_header_layout(self, rng, tmp_path):
        save_features(tmp_path / "f.oaf", random_feats(rng, 3))
        raw = (tmp_path / "f.oaf").read_bytes()
        assert raw[:4] == b"OAF1"
        assert struct.unpack_from("<II", raw, 4) == (3, FEATURE_DIM)
        assert struct.unpack_from("<I", raw, 12) == (3,)
        assert raw[16:19] == b"id0"
        assert len(raw) == 12 + 3 * (4 + 3 + 8 * FEATURE_DIM)

    def test_text_variant(self, rng, tmp_path):
        feats = random_feats(rng, 2)
        save_features_text(tmp_path / "f.txt", feats)
        back = load_features(tmp_path / "f.txt")
        for a, b in zip(feats, back):
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_short_record_rejected_in_text(self, tmp_path):
        line = "good " + " ".join(["1.0"] * FEATURE_DIM) + "\nbad " + " ".join(["1.0"] * 4095) + "\n"
        (tmp_path / "f.txt").write_text(line)
        with pytest.raises(FeatureFileError, match=r"record 1 \('bad'\).*4095"):
            load_features(tmp_path / "f.txt")

    def test_short_vector_rejected(self):
        with pytest.raises(ValueError, match="4096"):
            ImageFeatures("x", np.zeros(4095))

    def test_wrong_header_dim(self, tmp_path):
        (tmp_path / "f.oaf").write_bytes(b"OAF1" + struct.pack("<II", 0, 4095))
        with pytest.raises(FeatureFileError, match="4095"):
            load_features(tmp_path / "f.oaf")

    def test_truncated_binary(self, rng, tmp_path):
        save_features(tmp_path / "f.oaf", random_feats(rng, 2))
        raw = (tmp_path / "f.oaf").read_bytes()
        (tmp_path / "g.oaf").write_bytes(raw[:-8])
        with pytest.raises(FeatureFileError, match="record 1"):
            load_features(tmp_path / "g.oaf")

    def test_duplicate_ids(self, rng, tmp_path):
        v = rng.standard_normal(FEATURE_DIM)
        lines = ["same " + " ".join(repr(float(x)) for x in v)] * 2
        (tmp_path / "f.txt").write_text("\n".join(lines))
        with pytest.raises(FeatureFileError, match="record 1: duplicate"):
            load_features(tmp_path / "f.txt")
