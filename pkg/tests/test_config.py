import pytest
from hypothesis import given, settings, strategies as st

from dpmpn.config import Config, ConfigError, parse_config, parse_overrides, write_effective


def test_empty_file_defaults(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# nothing\n\n")
    cfg = parse_config(p)
    assert (cfg.batch_size, cfg.n_dims, cfg.n_dims_att) == (80, 100, 50)
    assert (cfg.max_attending_from_per_step, cfg.max_sampling_per_node, cfg.max_attending_to_per_step) == (20, 200, 200)
    assert (cfg.n_steps_in_IGNN, cfg.n_steps_in_AGNN) == (2, 6)
    assert cfg.learning_rate == 0.001 and cfg.grad_clipnorm == 1.0


def test_flag_beats_file(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("n_steps_in_AGNN = 6\n")
    assert parse_config(p, ["--n_steps_in_AGNN=8"]).n_steps_in_AGNN == 8


def test_unknown_key_suggests(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("btach_size = 3\n")
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config(p)


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="n_dims"):
        parse_overrides(["--n_dims=lots"])


def test_invalid_values():
    with pytest.raises(ConfigError):
        Config(batch_size=0)
    with pytest.raises(ConfigError):
        Config(mask_mode="sometimes")
    assert Config(n_steps_in_IGNN=0).n_steps_in_IGNN == 0


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "none.txt")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.floats(1e-6, 1.0), st.sampled_from(["cutoff_pairs", "remove_batch", "none"]),
       st.booleans(), st.text(alphabet="abcxyz/._", max_size=12))
def test_echo_reparses_identically(tmp_path_factory, bs, lr, mode, inv, path):
    cfg = Config(batch_size=bs, learning_rate=lr, mask_mode=mode, add_inverse=inv, train_path=path)
    out = write_effective(cfg, tmp_path_factory.mktemp("cfg"))
    assert parse_config(out) == cfg
