"""User and project configuration layering."""

from __future__ import annotations

import pytest

from atc2.config import (
    PROJECT_CONFIG_NAME,
    Config,
    ConfigError,
    init_config,
    user_config_path,
)


@pytest.fixture
def home(tmp_path, monkeypatch):
    """Redirected HOME and XDG_CONFIG_HOME, so the real user config never leaks in."""
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "home" / ".config"))
    user = tmp_path / "home" / ".config" / "atc2"
    user.mkdir(parents=True)
    return user


@pytest.fixture
def project(tmp_path):
    root = tmp_path / "project"
    root.mkdir()
    return root


def test_defaults_without_files(home, project):
    cfg = Config.load(project)
    assert (cfg.discount, cfg.boost_mode, cfg.workers) == (-0.5, "ngram", 1)
    assert (cfg.stale_days, cfg.delete_days) == (30.0, 7.0)
    assert cfg.sources == []


def test_user_config_location(home, monkeypatch, tmp_path):
    assert user_config_path() == home / "config.toml"
    monkeypatch.delenv("XDG_CONFIG_HOME")
    assert user_config_path() == tmp_path / "home" / ".config" / "atc2" / "config.toml"


def test_project_overrides_user_key_by_key(home, project):
    (home / "config.toml").write_text(
        '[pipeline]\nworkers = 8\n[callbacks]\nretries = 5\nbackoff_s = 0.25\n'
        '[boost]\nmode = "unigram"\n'
    )
    (project / PROJECT_CONFIG_NAME).write_text(
        "[pipeline]\nworkers = 2\n[boost]\ndiscount = -1.0\n"
    )
    cfg = Config.load(project)
    assert cfg.workers == 2
    assert (cfg.callback_retries, cfg.callback_backoff_s) == (5, 0.25)
    assert (cfg.discount, cfg.boost_mode) == (-1.0, "unigram")
    assert cfg.sources == [home / "config.toml", project / PROJECT_CONFIG_NAME]


def test_paths_resolve_against_the_declaring_file(home, project):
    (home / "config.toml").write_text('[paths]\neld_model = "models/eld.json"\n')
    (project / PROJECT_CONFIG_NAME).write_text('[pipeline]\nconfig = "conf/pipeline.json"\n')
    cfg = Config.load(project)
    assert cfg.eld_model == (home / "models" / "eld.json").resolve()
    assert cfg.pipeline_config == (project / "conf" / "pipeline.json").resolve()


@pytest.mark.parametrize(
    ("text", "match"),
    [
        ("[decoder]\nbeam = 8\n", "unknown sections"),
        ("[boost]\nweight = 2\n", "unknown keys"),
        ("boost = 1\n", "must be a table"),
        ("[boost\n", ""),
        ("[boost]\ndiscount = 0.5\n", "discount"),
        ('[boost]\nmode = "trigram"\n', "mode"),
        ("[pipeline]\nworkers = 0\n", "workers"),
        ("[lifecycle]\nstale_days = 0\n", "lifecycle"),
        ("[callbacks]\ntimeout_s = 0\n", "callback"),
        ("[callbacks]\nbackoff_s = -1\n", "backoff"),
    ],
    ids=[
        "section", "key", "not-table", "toml", "discount",
        "mode", "workers", "ages", "timeout", "backoff",
    ],
)
def test_bad_project_config(home, project, text, match):
    (project / PROJECT_CONFIG_NAME).write_text(text)
    with pytest.raises(ConfigError, match=match):
        Config.load(project)


def test_init_writes_a_loadable_file(home, project):
    path = init_config(project)
    assert path == project / PROJECT_CONFIG_NAME
    cfg = Config.load(project)
    assert cfg.discount == -0.5
    assert cfg.sources == [path]


def test_init_refuses_to_overwrite(home, project):
    init_config(project)
    (project / PROJECT_CONFIG_NAME).write_text("[pipeline]\nworkers = 3\n")
    with pytest.raises(ConfigError, match="--force"):
        init_config(project)
    assert Config.load(project).workers == 3
    init_config(project, force=True)
    assert Config.load(project).workers == 1
