import json

import numpy as np
import pytest

from ppgmorph.config import CONFIG_ENV, ConfigError, RunConfig, config_hash, load_config, parse_config
from ppgmorph.eval import ProbeReport
from ppgmorph.reporting import (emit_report, plot_ci, plot_distance_histogram, plot_loss_curve, read_loss_log,
                                read_report)


def test_defaults_and_hash_stability():
    a, b = RunConfig(), parse_config({})
    assert a == b and a.hash() == b.hash()
    assert len(a.hash()) == 12
    assert parse_config(a.to_dict()) == a
    assert parse_config({"seed": 1}).hash() != a.hash()
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})


def test_sections_parsed():
    cfg = parse_config({"model": {"base_filters": 4}, "train": {"alpha": 0.3, "steps": 7},
                        "augment": {"S": {"gaussian_noise": [0.0, 0.0, 0.0]}},
                        "preprocess": {"filter": {"order": 4}}, "eval": {"ratios": [0.6, 0.2, 0.2]}})
    assert cfg.model.base_filters == 4 and cfg.train.alpha == 0.3 and cfg.train_config().steps == 7
    assert cfg.augment("S").gaussian_noise.probability == 0.0
    assert cfg.preprocess.filter.order == 4 and cfg.eval.ratios == (0.6, 0.2, 0.2)
    assert cfg.train_config().seed == cfg.seed


@pytest.mark.parametrize("doc", [
    {"bogus": 1}, {"model": {"width": 3}}, {"train": {"seed": 1}}, {"train": {"alpha": 2.0}},
    {"augment": {"S": {"crop": [0.5, 1]}}}, {"eval": {"ratios": [0.5, 0.5, 0.5]}}, {"seed": "x"},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_load_config_env(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9}))
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert load_config().seed == 9
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config() == RunConfig()
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(tmp_path / "bad.json")


def test_emit_and_read_report(tmp_path):
    r = ProbeReport("hr", "mae", 1.25, 1.0, 1.5, 12, {"alpha": 10.0}, 3)
    csv_path, md_path = emit_report([r], tmp_path / "out", "abc123")
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("task,metric,point")
    assert "1.25 [1.00–1.50]" in md_path.read_text() and "abc123" in md_path.read_text()
    back = read_report(csv_path)[0]
    assert (back.task, back.point, back.lo, back.hi, back.seed) == ("hr", 1.25, 1.0, 1.5, 3)
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
    (tmp_path / "file").write_text("")
    with pytest.raises(OSError):
        emit_report([r], tmp_path / "file" / "sub")


def test_figures(tmp_path):
    log_path = tmp_path / "log.csv"
    log_path.write_text("step,total,svri,ipa,sqi\n1,3.0,2.0,,\n2,2.5,1.5,,\n")
    log = read_loss_log(log_path)
    assert np.isnan(log["ipa"]).all() and log["total"].tolist() == [3.0, 2.5]
    for path in (plot_loss_curve(log, tmp_path / "a.png", 2),
                 plot_distance_histogram([0.1, 0.2, 0.4], tmp_path / "b.png"),
                 plot_ci([ProbeReport("t", "auroc", 0.7, 0.6, 0.8, 5)], tmp_path / "c.png")):
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
