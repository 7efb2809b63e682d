"""Config file parsing, schema enforcement, and settings assembly."""

import pytest

from fedgrow.config import (
    check_comparable,
    default_config_text,
    default_values,
    load_settings,
    parse_config_text,
    settings_from_values,
)
from fedgrow.errors import ConfigError


class TestParsing:
    def test_empty_config_is_default_experiment(self):
        settings = parse_config_text("")
        assert settings.model.d_model == 32
        assert settings.fed.mode == "feddt"
        assert settings.fed.schedule.rounds == 120
        assert settings.fed.sampled_per_round == settings.fed.num_clients

    def test_default_config_text_parses_to_defaults(self):
        a = parse_config_text(default_config_text())
        b = parse_config_text("")
        assert a.snapshot == b.snapshot

    def test_values_override(self):
        settings = parse_config_text(
            "[federated]\nmode = fedt\nseed = 9\n\n[schedule]\nrounds = 12\nlocal_steps = 1\n"
        )
        assert settings.fed.mode == "fedt"
        assert settings.fed.seed == 9
        assert settings.fed.schedule.rounds == 12

    def test_unknown_key_rejected_with_name(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            parse_config_text("[federated]\nlerning_rate = 0.1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="experiments"):
            parse_config_text("[experiments]\nx = 1\n")

    def test_bad_value_type_names_key(self):
        with pytest.raises(ConfigError, match="federated.seed"):
            parse_config_text("[federated]\nseed = pi\n")

    def test_choice_enforced(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config_text("[federated]\nmode = centralised\n")

    def test_bool_parsing(self):
        s = parse_config_text("[scaling]\nliteral_division = yes\n")
        assert s.model.literal_scaling_division is True
        with pytest.raises(ConfigError):
            parse_config_text("[scaling]\nliteral_division = maybe\n")

    def test_missing_file_mentions_path(self, tmp_path):
        with pytest.raises(ConfigError, match="no/such/file.cfg"):
            load_settings(tmp_path / "no" / "such" / "file.cfg")


class TestCrossValidation:
    def test_ratio_count_must_match_clients(self):
        with pytest.raises(ConfigError, match="ratios"):
            parse_config_text(
                "[split]\nkind = ratios\nratios = 1,1\n\n[federated]\nnum_clients = 3\n"
            )

    def test_ratios_required_for_ratio_kind(self):
        with pytest.raises(ConfigError):
            parse_config_text("[split]\nkind = ratios\n")

    def test_task_must_fit_model_window(self):
        with pytest.raises(ConfigError, match="max_seq_len"):
            parse_config_text("[task]\nmax_tokens = 40\n\n[model]\nmax_seq_len = 48\n")

    def test_sampled_clients_zero_means_all(self):
        s = parse_config_text("[federated]\nnum_clients = 5\nsampled_clients = 0\n")
        assert s.fed.sampled_per_round == 5

    def test_explicit_growth_steps(self):
        s = parse_config_text(
            "[schedule]\nrounds = 12\nlocal_steps = 2\ngrowth_steps = 8,16\n"
            "\n[model]\ntarget_layers = 3\ngrowth_parts = 3\n"
        )
        assert s.fed.schedule.growth_steps == (8, 16)


class TestSeedPlumbing:
    def test_with_seed_changes_task_seed(self):
        base = parse_config_text("")
        other = base.with_seed(99)
        assert other.fed.seed == 99
        assert other.task.seed != base.task.seed
        assert other.model == base.model

    def test_with_mode(self):
        base = parse_config_text("")
        flipped = base.with_mode("fedt")
        assert flipped.fed.mode == "fedt"
        assert flipped.task == base.task


class TestComparability:
    def test_same_task_and_split_compatible(self):
        a = parse_config_text("")
        b = a.with_mode("fedt")
        check_comparable(a, b)

    def test_task_mismatch_rejected(self):
        a = parse_config_text("")
        b = parse_config_text("[task]\nmax_tokens = 20\n")
        with pytest.raises(ConfigError, match="task"):
            check_comparable(a, b)

    def test_split_mismatch_rejected(self):
        a = parse_config_text("")
        b = parse_config_text("[federated]\nnum_clients = 4\n")
        with pytest.raises(ConfigError):
            check_comparable(a, b)

    def test_seed_difference_is_comparable(self):
        a = parse_config_text("")
        check_comparable(a, a.with_seed(123))


class TestSnapshot:
    def test_snapshot_roundtrips_through_settings(self):
        values = default_values()
        values["federated"]["seed"] = 7
        values["schedule"]["rounds"] = 24
        settings = settings_from_values(values)
        again = settings_from_values(settings.snapshot)
        assert again.snapshot == settings.snapshot
