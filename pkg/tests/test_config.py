import pytest
from hypothesis import given, strategies as st

from contvoc.config import PipelineConfig, load_config, parse_overrides
from contvoc.errors import ConfigError, IoError


def test_defaults():
    cfg = load_config()
    assert cfg == PipelineConfig()
    assert (cfg.sample_rate, cfg.order, cfg.alpha, cfg.stage) == (22050, 24, 0.42, 3)
    assert cfg.gamma == pytest.approx(-1 / 3)
    assert cfg.grid_for(0).frame_shift_samples == 270
    assert cfg.mvf.mvf_floor == 300.0 and cfg.tracker.f_min == 80.0


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# analysis\nalpha = 0.35\nf_max=350  # inline comment\n\nmvf_median=true\n")
    cfg = load_config(path, ["alpha=0.4", "noise_seed=7"])
    assert cfg.alpha == 0.4 and cfg.f_max == 350.0 and cfg.mvf_median is True and cfg.noise_seed == 7


def test_gamma_alias():
    assert parse_overrides(["gamma=-0.25"]) == {"stage": 4}
    with pytest.raises(ConfigError):
        parse_overrides(["gamma=-0.3"])
    with pytest.raises(ConfigError):
        parse_overrides(["gamma=0.5"])


@pytest.mark.parametrize("pair", ["nosuchkey=1", "order=abc", "alpha=nan", "noequals", "mvf_median=maybe"])
def test_bad_pairs(pair):
    with pytest.raises(ConfigError):
        parse_overrides([pair])


@pytest.mark.parametrize("pair", ["f_min=500", "alpha=1.5", "patience=0", "learning_rate=0", "fps=0",
                                  "prototype_confidence=1"])
def test_inconsistent_values(pair):
    with pytest.raises(ConfigError):
        load_config(overrides=[pair])


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_config(tmp_path / "absent.cfg")


@given(st.floats(0.05, 0.6), st.integers(1, 40), st.integers(0, 2 ** 31 - 1), st.booleans())
def test_dict_round_trip(alpha, order, seed, median):
    cfg = PipelineConfig(alpha=alpha, order=order, noise_seed=seed, mvf_median=median)
    pairs = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in cfg.to_dict().items()]
    assert load_config(overrides=pairs) == cfg
