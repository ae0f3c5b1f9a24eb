import pytest

from atlasbench.config import ConfigError, load_config, planner_config_from, scene_config_from


def test_defaults_without_file():
    parser = load_config(None)
    scene = scene_config_from(parser)
    planner = planner_config_from(parser)
    assert scene.n_frames == 10
    assert planner.d_llm == 64
    assert planner.lr == 2e-5


def test_sections_parsed(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[scene]\nn_frames = 12\nagents_min = 1\nagents_max = 3\n"
        "[planner]\nd_llm = 32\nn_heads = 2\nrp_embedding = sincos\nuse_queries = false\n"
        "[train]\nlr = 0.001\nepochs = 2\n"
    )
    parser = load_config(str(path))
    scene = scene_config_from(parser)
    planner = planner_config_from(parser)
    assert scene.n_frames == 12
    assert scene.n_agents == (1, 3)
    assert planner.d_llm == 32
    assert planner.rp_embedding == "sincos"
    assert planner.use_queries is False
    assert planner.lr == 0.001
    assert planner.epochs == 2


def test_overrides_win(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nlr = 0.001\n")
    planner = planner_config_from(load_config(str(path)), lr=0.5, rp_embedding="none")
    assert planner.lr == 0.5
    assert planner.rp_embedding == "none"


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[planner]\nmomentum = 0.9\n")
    with pytest.raises(ConfigError):
        planner_config_from(load_config(str(path)))


def test_missing_file_rejected():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.ini")


def test_bad_bool_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[planner]\nuse_queries = maybe\n")
    with pytest.raises(ConfigError):
        planner_config_from(load_config(str(path)))
