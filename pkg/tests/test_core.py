"""Domain types: stage lookup, config validation, JSON round-trips."""

import dataclasses

import pytest

from tofsearch.core import (
    ConfigError,
    GateConfig,
    LandscapeSpec,
    Schedule,
    Stage,
    TextPrompt,
    config_from_json,
    config_to_json,
    default_stage_boundaries,
    stage_of_frame,
    validate_config,
)

from conftest import make_config


class TestStageOfFrame:
    def test_first_frame_is_initial(self):
        sched = Schedule(roots=1, depth=10, stage_boundaries=(1, 9))
        assert stage_of_frame(0, sched) is Stage.INITIAL

    def test_last_frame_is_final(self):
        sched = Schedule(roots=1, depth=10, stage_boundaries=(1, 9))
        assert stage_of_frame(9, sched) is Stage.FINAL

    def test_enumeration_against_boundary_definition(self):
        # Derived by enumerating t in [0, 10) against [0,b1) / [b1,b2) / [b2,T).
        sched = Schedule(roots=1, depth=10, stage_boundaries=(1, 9))
        expected = [Stage.INITIAL] + [Stage.INTERMEDIATE] * 8 + [Stage.FINAL]
        assert [stage_of_frame(t, sched) for t in range(10)] == expected
        assert stage_of_frame(5, sched) is Stage.INTERMEDIATE

    def test_out_of_range(self):
        sched = Schedule(roots=1, depth=10)
        with pytest.raises(IndexError):
            stage_of_frame(10, sched)
        with pytest.raises(IndexError):
            stage_of_frame(-1, sched)

    @pytest.mark.parametrize("depth", range(3, 65))
    def test_every_frame_maps_to_exactly_one_stage(self, depth):
        sched = Schedule(roots=1, depth=depth)
        b1, b2 = sched.stage_boundaries
        counts = {Stage.INITIAL: 0, Stage.INTERMEDIATE: 0, Stage.FINAL: 0}
        for t in range(depth):
            counts[stage_of_frame(t, sched)] += 1
        assert counts[Stage.INITIAL] == b1
        assert counts[Stage.INTERMEDIATE] == b2 - b1
        assert counts[Stage.FINAL] == depth - b2
        assert all(c > 0 for c in counts.values())
        assert stage_of_frame(0, sched) is Stage.INITIAL
        assert stage_of_frame(depth - 1, sched) is Stage.FINAL


class TestDefaults:
    def test_default_boundaries_track_80_percent(self):
        assert default_stage_boundaries(10) == (1, 8)
        assert default_stage_boundaries(16) == (1, 13)

    def test_default_boundaries_clamped_for_small_depth(self):
        # ceil(0.8*T) would land on or past T-1 here; all three stages must
        # stay non-empty.
        assert default_stage_boundaries(3) == (1, 2)
        assert default_stage_boundaries(4) == (1, 3)
        assert default_stage_boundaries(5) == (1, 4)

    def test_branch_at_defaults_to_stage_boundaries(self):
        sched = Schedule(roots=2, depth=10)
        assert sched.branch_at == sched.stage_boundaries

    def test_explicit_empty_branch_at_stays_empty(self):
        sched = Schedule(roots=2, depth=10, branch_at=())
        assert sched.branch_at == ()


class TestValidateConfig:
    def test_two_frames_cannot_fill_three_stages(self):
        cfg = make_config()
        bad = dataclasses.replace(
            cfg, schedule=Schedule(roots=1, depth=2, stage_boundaries=(1,))
        )
        with pytest.raises(ConfigError, match="3 stages"):
            validate_config(bad)

    def test_valid_schedule_passes(self):
        sched = Schedule(roots=4, depth=10, stage_boundaries=(1, 8),
                         branch_at=(1, 8))
        cfg = dataclasses.replace(make_config(), schedule=sched)
        assert validate_config(cfg) is cfg

    def test_zero_weight_rejected(self):
        cfg = make_config(weights={"synthetic": 0.0})
        with pytest.raises(ConfigError, match="strictly positive"):
            validate_config(cfg)

    def test_branch_at_past_depth_rejected(self):
        sched = Schedule(roots=2, depth=8, branch_at=(8,))
        cfg = dataclasses.replace(make_config(), schedule=sched)
        with pytest.raises(ConfigError, match="branch_at"):
            validate_config(cfg)

    def test_all_violations_reported_at_once(self):
        sched = Schedule(roots=0, depth=1, stage_boundaries=(1,),
                         branch_at=(5,), denoise_steps_per_frame=0)
        cfg = dataclasses.replace(
            make_config(weights={"v": -1.0}), schedule=sched,
            prompt=TextPrompt("", ""),
        )
        with pytest.raises(ConfigError) as excinfo:
            validate_config(cfg)
        assert len(excinfo.value.violations) >= 6

    def test_fixed_k_contract(self):
        sched = Schedule(roots=4, depth=4, prune_rule="fixed-k",
                         fixed_k=(4, 2, 0, 1))
        cfg = dataclasses.replace(make_config(), schedule=sched)
        with pytest.raises(ConfigError, match=">= 1"):
            validate_config(cfg)

    def test_unknown_algorithm(self):
        cfg = dataclasses.replace(make_config(), algorithm="bfs")
        with pytest.raises(ConfigError, match="algorithm"):
            validate_config(cfg)


class TestConfigJson:
    def test_round_trip(self):
        cfg = make_config(roots=3, depth=12, landscape_seed=5)
        again = config_from_json(config_to_json(cfg))
        assert again == cfg

    def test_unknown_top_level_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown field"):
            config_from_json(
                '{"algorithm": "tof", "schedule": {"roots": 1, "depth": 4},'
                ' "prompt": {"text": "x", "id": "p"}, "bogus": 1}'
            )

    def test_unknown_schedule_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown field"):
            config_from_json(
                '{"algorithm": "tof", "schedule": {"roots": 1, "depth": 4,'
                ' "bogus": 2}, "prompt": {"text": "x", "id": "p"}}'
            )

    def test_missing_required_field(self):
        with pytest.raises(ConfigError, match="missing required"):
            config_from_json('{"algorithm": "tof"}')

    def test_null_branch_at_means_default(self):
        cfg = config_from_json(
            '{"algorithm": "tof", "schedule": {"roots": 2, "depth": 10,'
            ' "branch_at": null}, "prompt": {"text": "x", "id": "p"}}'
        )
        assert cfg.schedule.branch_at == cfg.schedule.stage_boundaries

    def test_gates_and_landscape_blocks(self):
        cfg = config_from_json(
            '{"algorithm": "linear", "schedule": {"roots": 2, "depth": 6},'
            ' "prompt": {"text": "x", "id": "p"},'
            ' "gates": {"enabled": false},'
            ' "landscape": {"dimension": 4, "landscape_seed": 9}}'
        )
        assert cfg.gates == GateConfig(enabled=False)
        assert cfg.landscape == LandscapeSpec(dimension=4, landscape_seed=9)

    def test_not_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            config_from_json("{nope")
