"""Verifier ensemble: prompt decomposition, rank aggregation, gates."""

import math
import random

import pytest

from tofsearch.core import LandscapeSpec, ProtocolError, Stage, TextPrompt
from tofsearch.generator import SyntheticGenerator, SyntheticLandscape
from tofsearch.verifiers import (
    ConstantVerifier,
    SyntheticVerifier,
    aggregate,
    clarity_gate,
    decompose_prompt,
    median_threshold,
    potential_gate,
    rank_scores,
)

from conftest import independent_path_quality

PROMPT = TextPrompt("a cat runs", "p0")


class TestDecompose:
    def test_template_preserves_base_prompt(self):
        staged = decompose_prompt(PROMPT)
        for part in (staged.initial, staged.intermediate, staged.final):
            assert "a cat runs" in part.text
        assert staged.source == "template-decomposed"

    def test_deterministic(self):
        assert decompose_prompt(PROMPT) == decompose_prompt(PROMPT)

    def test_stage_ids_are_distinct(self):
        staged = decompose_prompt(PROMPT)
        ids = {staged.initial.id, staged.intermediate.id, staged.final.id}
        assert len(ids) == 3

    def test_external_decomposer_wrong_arity_is_protocol_error(self):
        with pytest.raises(ProtocolError, match="3"):
            decompose_prompt(PROMPT, lambda p: [p, p])

    def test_external_decomposer_used_verbatim(self):
        parts = [TextPrompt(f"s{i}", f"i{i}") for i in range(3)]
        staged = decompose_prompt(PROMPT, lambda p: parts)
        assert staged.initial == parts[0]
        assert staged.final == parts[2]
        assert staged.source == "externally-supplied"

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            decompose_prompt(TextPrompt("", "x"))


class TestSyntheticVerifier:
    def test_final_mode_equals_independent_closed_form(self):
        landscape = SyntheticLandscape(LandscapeSpec(landscape_seed=11))
        gen = SyntheticGenerator(landscape, depth=5, step_budget=8)
        verifier = SyntheticVerifier(landscape)
        node = gen.sample_root(0, 21, PROMPT)
        prefix = [node]
        for t in range(1, 5):
            stage = Stage.INTERMEDIATE if t < 4 else Stage.FINAL
            node = gen.extend(node, t, t, 300 + t, stage, PROMPT)
            prefix.append(node)
        got = verifier.score(prefix, Stage.FINAL, PROMPT, "final")
        expected = independent_path_quality(
            landscape, [p.latent_ref for p in prefix], [p.stage for p in prefix]
        )
        assert got == pytest.approx(expected, abs=1e-12)

    def test_frame_mode_scores_last_transition(self):
        landscape = SyntheticLandscape(LandscapeSpec(landscape_seed=11))
        gen = SyntheticGenerator(landscape, depth=3, step_budget=8)
        verifier = SyntheticVerifier(landscape)
        root = gen.sample_root(0, 21, PROMPT)
        child = gen.extend(root, 1, 1, 5, Stage.INTERMEDIATE, PROMPT)
        lone = verifier.score([root], Stage.INITIAL, PROMPT, "frame")
        pair = verifier.score([root, child], Stage.INTERMEDIATE, PROMPT, "frame")
        assert math.isfinite(lone) and math.isfinite(pair)
        # Clip over one frame equals the lone frame score.
        assert verifier.score([root], Stage.INITIAL, PROMPT, "clip") == lone


class TestRankTables:
    def test_constant_verifier_degenerates_to_node_id_order(self):
        scored = [(11, 0.0), (7, 0.0), (2, 0.0)]
        table = rank_scores("constant", scored)
        # All ties: smaller node id is the better candidate.
        assert table.ranks == {2: 3, 7: 2, 11: 1}

    def test_rank_values_are_a_permutation(self):
        rng = random.Random(1)
        for _ in range(200):
            n = rng.randint(1, 30)
            scored = [(i, rng.choice([0.0, rng.random()])) for i in range(n)]
            table = rank_scores("v", scored)
            table.check()
            assert sorted(table.ranks.values()) == list(range(1, n + 1))

    def test_highest_score_gets_rank_n(self):
        table = rank_scores("v", [(0, 1.5), (1, -2.0), (2, 0.25)])
        assert table.ranks == {0: 3, 1: 1, 2: 2}


class TestAggregate:
    def test_single_verifier_is_its_own_ranking(self):
        table = rank_scores("v", [(0, 30.0), (1, 10.0), (2, 20.0)])
        assert table.ranks == {0: 3, 1: 1, 2: 2}
        result = aggregate([table], {"v": 1.0})
        assert result.scores == {0: 3.0, 1: 1.0, 2: 2.0}
        assert result.best_id == 0

    def test_equal_weights_all_tie_breaks_to_lowest_node_id(self):
        # Hand computation: H = ((3+1)/2, (1+3)/2, (2+2)/2) = (2, 2, 2).
        t1 = rank_scores("a", [(0, 3.0), (1, 1.0), (2, 2.0)])
        t2 = rank_scores("b", [(0, 1.0), (1, 3.0), (2, 2.0)])
        result = aggregate([t1, t2], {"a": 1.0, "b": 1.0})
        assert result.scores == {0: 2.0, 1: 2.0, 2: 2.0}
        assert result.best_id == 0

    def test_weighted_hand_example(self):
        # Hand computation with c=(2,1):
        # H = ((2*3+1)/2, (2+3)/2, (2*2+2)/2) = (3.5, 2.5, 3.0).
        t1 = rank_scores("a", [(0, 3.0), (1, 1.0), (2, 2.0)])
        t2 = rank_scores("b", [(0, 1.0), (1, 3.0), (2, 2.0)])
        result = aggregate([t1, t2], {"a": 2.0, "b": 1.0})
        assert result.scores == {0: 3.5, 1: 2.5, 2: 3.0}
        assert result.best_id == 0

    def test_mismatched_candidate_sets_rejected(self):
        t1 = rank_scores("a", [(0, 1.0), (1, 2.0)])
        t2 = rank_scores("b", [(0, 1.0), (2, 2.0)])
        with pytest.raises(ValueError, match="candidate set"):
            aggregate([t1, t2], {})

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            aggregate([], {})

    def test_argmax_invariant_under_weight_scaling(self):
        rng = random.Random(7)
        for _ in range(500):
            n = rng.randint(1, 12)
            m = rng.randint(1, 4)
            tables = [
                rank_scores(f"v{j}", [(i, rng.random()) for i in range(n)])
                for j in range(m)
            ]
            weights = {f"v{j}": rng.uniform(0.1, 5.0) for j in range(m)}
            base = aggregate(tables, weights)
            factor = 2.0 ** rng.randint(-3, 8)  # exact in binary floats
            scaled = {k: v * factor for k, v in weights.items()}
            assert aggregate(tables, scaled).best_id == base.best_id

    def test_rank_table_invariant_under_monotone_transform(self):
        rng = random.Random(9)
        for _ in range(300):
            n = rng.randint(1, 12)
            raw = [(i, rng.uniform(-5, 5)) for i in range(n)]
            a, b = rng.uniform(0.1, 3.0), rng.uniform(-10, 10)
            transformed = [(i, a * s + b) for i, s in raw]
            cubed = [(i, s**3) for i, s in raw]  # strictly increasing on R
            assert rank_scores("v", raw).ranks == rank_scores("v", transformed).ranks
            assert rank_scores("v", raw).ranks == rank_scores("v", cubed).ranks


class TestGates:
    def test_clarity_examples(self):
        assert clarity_gate(0.0, 0.4).verdict is False
        assert clarity_gate(1.0, 1.0).verdict is True
        assert clarity_gate(0.4, 0.4).verdict is True  # inclusive boundary

    def test_potential_threshold_semantics(self):
        assert potential_gate(1.0, 0.5).verdict is True
        assert potential_gate(0.2, 0.5).verdict is False
        assert potential_gate(0.5, 0.5).verdict is True
        assert potential_gate(5.0, float("-inf")).verdict is True

    def test_potential_fails_open_on_fault(self):
        assert potential_gate(None, 0.9).verdict is True

    def test_median_threshold(self):
        assert median_threshold([3.0, 1.0, 2.0]) == 2.0
        assert median_threshold([1.0, 2.0, 3.0, 4.0]) == 2.5


class TestEnsembleRawScore:
    def test_constant_offsets_average_with_weights(self):
        landscape = SyntheticLandscape(LandscapeSpec())
        gen = SyntheticGenerator(landscape, depth=3, step_budget=8)
        root = gen.sample_root(0, 5, PROMPT)
        from tofsearch.verifiers import ensemble_raw_score

        synth = SyntheticVerifier(landscape)
        const = ConstantVerifier(2.0)
        h, scores, faults = ensemble_raw_score(
            [root], Stage.INITIAL, PROMPT,
            [synth, const], {"synthetic": 3.0, "constant": 1.0}, "frame",
        )
        raw = synth.score([root], Stage.INITIAL, PROMPT, "frame")
        assert h == pytest.approx((3.0 * raw + 1.0 * 2.0) / 4.0)
        assert not faults and len(scores) == 2

    def test_faulting_verifier_is_skipped(self):
        landscape = SyntheticLandscape(LandscapeSpec())
        gen = SyntheticGenerator(landscape, depth=3, step_budget=8)
        root = gen.sample_root(0, 5, PROMPT)
        from tofsearch.verifiers import Verifier, VerifierFault, ensemble_raw_score

        class Broken(Verifier):
            verifier_id = "broken"

            def score(self, prefix, stage, prompt, mode="frame"):
                raise VerifierFault("boom")

        synth = SyntheticVerifier(landscape)
        h, scores, faults = ensemble_raw_score(
            [root], Stage.INITIAL, PROMPT, [synth, Broken()], {}, "frame"
        )
        assert h == synth.score([root], Stage.INITIAL, PROMPT, "frame")
        assert len(faults) == 1

        h2, _, faults2 = ensemble_raw_score(
            [root], Stage.INITIAL, PROMPT, [Broken()], {}, "frame"
        )
        assert h2 is None and len(faults2) == 1

    def test_non_finite_score_is_a_fault(self):
        landscape = SyntheticLandscape(LandscapeSpec())
        gen = SyntheticGenerator(landscape, depth=3, step_budget=8)
        root = gen.sample_root(0, 5, PROMPT)
        from tofsearch.verifiers import ensemble_raw_score

        nan_verifier = ConstantVerifier(float("nan"), verifier_id="nan")
        h, scores, faults = ensemble_raw_score(
            [root], Stage.INITIAL, PROMPT, [nan_verifier], {}, "frame"
        )
        assert h is None and len(faults) == 1
