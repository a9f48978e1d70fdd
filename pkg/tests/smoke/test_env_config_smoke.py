from cbnlab import cli_utils
from cbnlab.config import Config
from cbnlab.env_config import get_default_seed, get_thread_cap


def test_thread_cap_parsing(monkeypatch):
    monkeypatch.setenv("CBNLAB_THREADS", "4")
    assert get_thread_cap() == 4
    monkeypatch.setenv("CBNLAB_THREADS", "zero")
    assert get_thread_cap() is None
    monkeypatch.setenv("CBNLAB_THREADS", "-2")
    assert get_thread_cap() is None
    monkeypatch.delenv("CBNLAB_THREADS")
    assert get_thread_cap() is None


def test_seed_override_parsing(monkeypatch):
    monkeypatch.setenv("CBNLAB_SEED", " 17 ")
    assert get_default_seed() == 17
    monkeypatch.setenv("CBNLAB_SEED", "x")
    assert get_default_seed() is None


def test_config_reads_environment(monkeypatch):
    monkeypatch.setenv("CBNLAB_THREADS", "2")
    monkeypatch.setenv("CBNLAB_SEED", "5")
    config = Config()
    assert config.threads == 2
    assert config.seed_override == 5


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("CBNLAB_SEED", "5")
    monkeypatch.setattr(cli_utils, "get_config", Config)
    assert cli_utils.resolve_seed(1, 9) == 1
    assert cli_utils.resolve_seed(None, 9) == 5
    monkeypatch.delenv("CBNLAB_SEED")
    assert cli_utils.resolve_seed(None, 9) == 9


def test_cli_helpers(capsys):
    assert cli_utils.parse_int_list("2, 8,128") == [2, 8, 128]
    code = cli_utils.emit_error("params", "bad dims")
    out = capsys.readouterr().out
    assert code == 2
    assert "Error: bad dims" in out
    assert "Hint: try `cbnlab params" in out
    table = cli_utils.format_table(["a", "bb"], [(1, 2), (333, 4)])
    assert table.splitlines()[1] == "---  --"
