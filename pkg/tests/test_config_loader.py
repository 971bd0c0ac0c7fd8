from pathlib import Path

from nls_virial.utils.config_loader import Config

ENV_VARS = ("NLS_VIRIAL_CACHE", "NLS_VIRIAL_LOG_LEVEL", "NLS_VIRIAL_JOBS", "NLS_VIRIAL_MIN_POINTS_PER_WIDTH")


def _clear(monkeypatch):
    # 先 setenv 讓 monkeypatch 記住原值，load_dotenv 寫入的值才會在測試後清掉
    for name in ENV_VARS:
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)


def test_defaults(tmp_path, monkeypatch):
    _clear(monkeypatch)
    config = Config(str(tmp_path / "missing.env"))
    assert config.cache_dir == Path.home() / ".cache" / "nls_virial"
    assert config.log_level == "INFO"
    assert config.jobs == 1
    assert config.min_points_per_width == 1.0


def test_env_file_values(tmp_path, monkeypatch):
    _clear(monkeypatch)
    env = tmp_path / ".env"
    env.write_text(f"NLS_VIRIAL_CACHE={tmp_path / 'c'}\nNLS_VIRIAL_LOG_LEVEL=debug\nNLS_VIRIAL_JOBS=3\n")
    config = Config(str(env))
    assert config.cache_dir == tmp_path / "c"
    assert config.log_level == "DEBUG"
    assert config.jobs == 3
    assert config.as_dict()["jobs"] == 3


def test_environment_wins_over_file(tmp_path, monkeypatch):
    _clear(monkeypatch)
    env = tmp_path / ".env"
    env.write_text("NLS_VIRIAL_JOBS=3\n")
    monkeypatch.setenv("NLS_VIRIAL_JOBS", "5")
    assert Config(str(env)).jobs == 5
