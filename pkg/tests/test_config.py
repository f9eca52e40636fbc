import json
from pathlib import Path

import pytest

from rax.config import ConfigError, PipelineConfig, from_dict, load_config


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv("RAX_CONFIG", raising=False)
    cfg = load_config()
    assert cfg.model.kind == "boosted" and cfg.split.n_test == 5000 and cfg.split.n_train == 20000
    assert cfg.gating.threshold == 0.05 and cfg.narrative.max_in_flight == 4


def test_env_var_and_relative_paths(tmp_path, monkeypatch):
    sub = tmp_path / "conf"
    sub.mkdir()
    (sub / "c.json").write_text(json.dumps({"paths": {"store": "data/store", "model": "/abs/m.raxm"}, "seed": 9}))
    monkeypatch.setenv("RAX_CONFIG", str(sub / "c.json"))
    monkeypatch.chdir(tmp_path)
    cfg = load_config()
    assert cfg.seed == 9
    assert cfg.resolve(cfg.paths.store) == sub.resolve() / "data" / "store"
    assert cfg.resolve(cfg.paths.model) == Path("/abs/m.raxm")


@pytest.mark.parametrize(
    "doc, needle",
    [
        ({"unknown": 1}, "unknown"),
        ({"model": {"depth": 3}}, "in model: depth"),
        ({"model": {"kind": "svm"}}, "kind"),
        ({"narrative": {"backend": "grpc"}}, "backend"),
        ({"paths": []}, "paths"),
    ],
)
def test_rejects_bad_documents(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        from_dict(doc)


def test_digest_tracks_content():
    a = from_dict({"seed": 1})
    b = from_dict({"seed": 1}, base_dir="/elsewhere")
    c = from_dict({"seed": 2})
    assert a.digest() == b.digest() != c.digest()
    assert "base_dir" not in a.to_dict()
    assert PipelineConfig().digest() == from_dict({}).digest()
