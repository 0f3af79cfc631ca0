import pytest

from framebridge.config import DEFAULTS, ConfigError, config_hash, load_config, parse_config
from framebridge.schedule import BridgeGmaxSchedule


def test_empty_document_gives_defaults():
    cfg = parse_config({})
    assert cfg.values == DEFAULTS
    assert cfg.bridge_schedule() == BridgeGmaxSchedule()
    assert cfg.train_config().iterations == DEFAULTS["train"]["iterations"]
    assert cfg.toy().velocities == ((0,), (1,), (1, -1))


@pytest.mark.parametrize("doc", [
    {"optimizer": {"name": "adam"}},
    {"train": {"momentum": 0.9}},
    {"train": {"iterations": "many"}},
    {"train": {"iterations": 1.5}},
    {"saf": {"clamp": 1}},
    {"saf": {"output_mode": "x0"}},
    {"train": {"prior": "learned"}},
    {"data": {"width": -1.0}},
    {"model": {"time_dim": 7}},
    {"train": {"eval_every": 100, "checkpoint_every": 150}},
    {"train": "fast"},
])
def test_invalid_documents_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_int_accepted_for_float_field():
    assert parse_config({"train": {"lr": 1}}).train_config().lr == 1.0


def test_hash_is_stable_and_content_sensitive():
    a = parse_config({"train": {"lr": 0.01, "seed": 3}})
    b = parse_config({"train": {"seed": 3, "lr": 0.01}})
    assert a.hash == b.hash == config_hash(a.values)
    assert len(a.hash) == 64
    assert parse_config({"train": {"lr": 0.02, "seed": 3}}).hash != a.hash


def test_seed_override_touches_all_seeds_and_hash():
    base = parse_config({})
    seeded = base.with_seed(11)
    assert base.with_seed(None) is base
    assert {seeded.section(s)["seed"] for s in ("data", "train", "sample")} == {11}
    assert base.section("train")["seed"] == 0
    assert seeded.hash != base.hash


def test_load_resolves_relative_paths(tmp_path):
    path = tmp_path / "sub" / "run.toml"
    path.parent.mkdir()
    path.write_text('[saf]\nteacher_checkpoint = "ckpt/teacher.fbck"\n[train]\niterations = 10\n')
    cfg = load_config(path)
    assert cfg.path("saf", "teacher_checkpoint") == path.parent.resolve() / "ckpt" / "teacher.fbck"
    assert cfg.path("sample", "checkpoint") is None
    assert cfg.train_config().iterations == 10


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="nope.toml"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[train\n")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(bad)
