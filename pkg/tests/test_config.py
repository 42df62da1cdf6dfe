"""Config parsing, validation, round trips and the seed splitter."""

import numpy as np
import pytest

from fuseseg.config import (ConfigError, RunConfig, apply_overrides, child_rng,
                            child_seed, format_config, parse_config)


class TestParsing:
    def test_round_trip_default(self):
        cfg = RunConfig()
        assert parse_config(format_config(cfg)) == cfg

    def test_round_trip_modified(self):
        cfg = RunConfig(num_classes=7, stage_channels=(4, 8, 16, 16, 16),
                        base_lr=0.00125, aug_flip=False, model_mode="boundary",
                        thicknesses=(1, 2), scale_min=0.75)
        assert parse_config(format_config(cfg)) == cfg

    def test_unknown_key_fatal(self):
        with pytest.raises(ConfigError) as err:
            parse_config("bogus_key = 3\n")
        assert "bogus_key" in str(err.value)

    def test_duplicate_key_fatal(self):
        with pytest.raises(ConfigError):
            parse_config("seed = 1\nseed = 2\n")

    def test_comments_and_blanks(self):
        cfg = parse_config("# a comment\n\nseed = 3  # trailing\n")
        assert cfg.seed == 3

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("batch_size = many\n")
        assert "batch_size" in str(err.value)

    def test_bool_strictness(self):
        with pytest.raises(ConfigError):
            parse_config("aug_flip = yes\n")

    def test_tuple_values(self):
        cfg = parse_config("aspp_rates = 1, 3, 5\n")
        assert cfg.aspp_rates == (1, 3, 5)


class TestValidation:
    @pytest.mark.parametrize("field,value", [
        ("num_classes", 1),
        ("image_size", 63),
        ("crop_mode", "best"),
        ("model_mode", "gated"),
        ("precision", "float16"),
        ("base_lr", 0.0),
        ("scale_min", 0.0),
        ("rarity_decay", 0.0),
        ("beta_mode", "global"),
    ])
    def test_rejects(self, field, value):
        cfg = RunConfig(**{field: value})
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_lambda_pair(self):
        with pytest.raises(ConfigError):
            RunConfig(lambda1=0.0, lambda2=0.0).validate()

    def test_overrides(self):
        cfg = apply_overrides(RunConfig(), ["seed=9", "crop_mode=random"])
        assert cfg.seed == 9 and cfg.crop_mode == "random"
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), ["nope=1"])


class TestSeedStreams:
    def test_child_seed_stable(self):
        # pinned: the splitter must never change across releases
        assert child_seed(0, "init") == child_seed(0, "init")
        assert child_seed(0, "init") != child_seed(0, "augment")
        assert child_seed(0, "augment", 3) != child_seed(0, "augment", 4)
        assert child_seed(1, "init") != child_seed(0, "init")

    def test_child_rng_deterministic(self):
        a = child_rng(5, "augment", 0).random(4)
        b = child_rng(5, "augment", 0).random(4)
        assert np.array_equal(a, b)

    def test_streams_independent(self):
        # drawing from one stream never shifts another
        a1 = child_rng(5, "a").random(4)
        _ = child_rng(5, "b").random(100)
        a2 = child_rng(5, "a").random(4)
        assert np.array_equal(a1, a2)
