from __future__ import annotations

import numpy as np
import pytest

from onomaret.embstore import SyntheticSpec, generate_synthetic, make_pack, vector_matrix
from onomaret.model import ModelDims, init_model, project_audio, project_image
from onomaret.retrieval import (
    A2I,
    I2A,
    RankedList,
    RetrievalError,
    cosine_similarity,
    rank_candidates,
    rank_matrix,
    read_ranked_jsonl,
    retrieve,
    write_ranked_jsonl,
    zero_shot_retrieve,
)

from oracles import assert_valid_descending_order


class TestCosine:
    def test_identical_vectors(self):
        a = np.array([0.3, -1.2, 0.7])
        assert cosine_similarity(a, a.copy()) == pytest.approx(1.0)

    def test_orthogonal_unit_vectors(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_scale_invariance(self):
        a = np.array([2.0, -1.0, 0.5])
        assert cosine_similarity(a, 3.0 * a) == pytest.approx(1.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(RetrievalError, match="zero-norm"):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(RetrievalError, match="equal length"):
            cosine_similarity(np.ones(3), np.ones(4))


class TestRankCandidates:
    def test_single_candidate_is_rank_one(self):
        rl = rank_candidates(
            np.array([1.0, 0.0]), np.array([[-1.0, 0.0]]), ["only"], [0],
            query_id="q", query_class=0, direction=I2A,
        )
        assert [c.id for c in rl.candidates] == ["only"]
        assert rl.candidates[0].score == pytest.approx(-1.0)

    def test_exact_match_wins_over_orthogonals(self):
        query = np.array([1.0, 0.0, 0.0])
        cands = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        rl = rank_candidates(query, cands, ["a", "b", "c"], [0, 1, 2],
                             query_id="q", query_class=1, direction=I2A)
        assert rl.candidates[0].id == "b"
        assert rl.candidates[0].score == pytest.approx(1.0)

    def test_matches_brute_force_sort(self, gen):
        query = gen.normal(size=5)
        cands = gen.normal(size=(10, 5))
        rl = rank_candidates(query, cands, [f"c{i}" for i in range(10)], list(range(10)),
                             query_id="q", query_class=0, direction=A2I)
        # independent cosines + sort
        scored = []
        for i in range(10):
            dot = sum(float(query[k]) * float(cands[i, k]) for k in range(5))
            qn = sum(float(v) ** 2 for v in query) ** 0.5
            cn = sum(float(v) ** 2 for v in cands[i]) ** 0.5
            scored.append((-(dot / (qn * cn)), i))
        expected = [f"c{i}" for _, i in sorted(scored)]
        assert [c.id for c in rl.candidates] == expected

    def test_scores_non_increasing(self, gen):
        rl = rank_candidates(gen.normal(size=4), gen.normal(size=(20, 4)),
                             [str(i) for i in range(20)], [0] * 20,
                             query_id="q", query_class=0, direction=I2A)
        scores = [c.score for c in rl.candidates]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_tie_break_by_input_index(self):
        vec = np.array([1.0, 1.0])
        cands = np.stack([vec, vec, vec])  # bit-identical rows: exact ties
        rl = rank_candidates(vec, cands, ["first", "second", "third"], [0, 0, 0],
                             query_id="q", query_class=0, direction=I2A)
        assert [c.id for c in rl.candidates] == ["first", "second", "third"]

    def test_empty_candidates_rejected(self):
        with pytest.raises(RetrievalError, match="non-empty"):
            rank_candidates(np.ones(2), np.zeros((0, 2)), [], [],
                            query_id="q", query_class=0, direction=I2A)

    def test_width_mismatch_rejected(self):
        with pytest.raises(RetrievalError, match="width"):
            rank_candidates(np.ones(3), np.ones((2, 4)), ["a", "b"], [0, 0],
                            query_id="q", query_class=0, direction=I2A)


class TestRetrieve:
    def test_own_pair_first_on_identity_instance(self):
        # One pair per class, zero noise, no rotation, and an audio head equal
        # to the image head: projected sets coincide, so each query's own pair
        # must top its list with score 1.
        spec = SyntheticSpec(20, 8, 1, 0.0, 0.0, identity_rotation=True, noise_seed=3)
        image, audio = generate_synthetic(spec)
        dims = ModelDims(input_dim=8, hidden_dim=6, joint_dim=5, class_count=20)
        m = init_model(dims, seed=0)
        m.audio_projector = (m.image_projector[0].copy(), m.image_projector[1].copy())
        ranked = retrieve(m, image, audio, I2A)
        for rl, img_rec in zip(ranked, image.records):
            assert rl.query_id == img_rec.id
            assert rl.candidates[0].class_id == rl.query_class
            assert rl.candidates[0].score == pytest.approx(1.0)

    def test_matches_brute_force_projection_recompute(self, gen):
        spec = SyntheticSpec(4, 8, 3, 0.1, 0.2, cross_modal_rotation_seed=1, noise_seed=2)
        image, audio = generate_synthetic(spec)
        dims = ModelDims(input_dim=8, hidden_dim=6, joint_dim=5, class_count=4)
        m = init_model(dims, seed=7)
        ranked = retrieve(m, image, audio, I2A)
        qproj = project_image(m, vector_matrix(image))
        cproj = project_audio(m, vector_matrix(audio))
        for qi, rl in enumerate(ranked):
            oracle = {
                audio.records[ci].id: cosine_similarity(qproj[qi], cproj[ci])
                for ci in range(len(audio))
            }
            assert_valid_descending_order(rl, oracle, tol=1e-12)
            for cand in rl.candidates:
                assert cand.score == pytest.approx(oracle[cand.id], abs=1e-12)

    def test_direction_modality_mismatch(self):
        spec = SyntheticSpec(2, 4, 1, 0.0, 0.0, identity_rotation=True)
        image, audio = generate_synthetic(spec)
        dims = ModelDims(input_dim=4, hidden_dim=3, joint_dim=2, class_count=2)
        m = init_model(dims, seed=0)
        with pytest.raises(RetrievalError, match="modality"):
            retrieve(m, audio, image, I2A)

    def test_unknown_direction(self):
        spec = SyntheticSpec(2, 4, 1, 0.0, 0.0, identity_rotation=True)
        image, audio = generate_synthetic(spec)
        dims = ModelDims(input_dim=4, hidden_dim=3, joint_dim=2, class_count=2)
        with pytest.raises(RetrievalError, match="direction"):
            retrieve(init_model(dims, 0), image, audio, "X2Y")


class TestZeroShot:
    def test_identical_packs_retrieve_perfectly(self, gen):
        from onomaret.embstore import EmbeddingRecord

        vectors = gen.normal(size=(6, 5))
        image_records, audio_records = [], []
        for i in range(6):
            common = dict(class_id=i % 3, class_name=f"class_{i % 3}",
                          pair_id=f"p{i}", split="train")
            image_records.append(EmbeddingRecord(
                id=f"i{i}", modality="image", illustrator_id=None,
                vector=vectors[i], **common))
            audio_records.append(EmbeddingRecord(
                id=f"a{i}", modality="audio", illustrator_id=None,
                vector=vectors[i], **common))
        image = make_pack(5, 3, image_records)
        audio = make_pack(5, 3, audio_records)
        for rl, rec in zip(zero_shot_retrieve(image, audio, I2A), image.records):
            assert rl.candidates[0].id == f"a{rec.id[1:]}"
            assert rl.candidates[0].score == pytest.approx(1.0)

    def test_repeated_runs_bit_identical(self):
        spec = SyntheticSpec(5, 16, 3, 0.1, 0.3, cross_modal_rotation_seed=4, noise_seed=5)
        image, audio = generate_synthetic(spec)
        first = zero_shot_retrieve(image, audio, A2I)
        second = zero_shot_retrieve(image, audio, A2I)
        assert first == second

    def test_dim_mismatch(self):
        a, _ = generate_synthetic(SyntheticSpec(2, 4, 1, 0.0, 0.0, identity_rotation=True))
        _, b = generate_synthetic(SyntheticSpec(2, 6, 1, 0.0, 0.0, identity_rotation=True))
        with pytest.raises(RetrievalError, match="dim"):
            zero_shot_retrieve(a, b, I2A)


class TestJsonl:
    def test_roundtrip(self, tmp_path, gen):
        mat = gen.normal(size=(3, 4))
        cands = gen.normal(size=(5, 4))
        ranked = rank_matrix(mat, ["q0", "q1", "q2"], [0, 1, 0],
                             cands, [f"c{i}" for i in range(5)], [0, 1, 0, 1, 0], I2A)
        path = tmp_path / "out.jsonl"
        write_ranked_jsonl(ranked, path)
        back = read_ranked_jsonl(path, {"q0": 0, "q1": 1, "q2": 0})
        assert back == ranked

    def test_unknown_query_id_rejected(self, tmp_path, gen):
        ranked = rank_matrix(gen.normal(size=(1, 4)), ["q0"], [0],
                             gen.normal(size=(2, 4)), ["c0", "c1"], [0, 1], I2A)
        path = tmp_path / "out.jsonl"
        write_ranked_jsonl(ranked, path)
        with pytest.raises(RetrievalError, match="unknown query"):
            read_ranked_jsonl(path, {"other": 0})
