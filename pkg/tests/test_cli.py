import json
from pathlib import Path

import pytest
import yaml

from brownian_pinning.cli import (EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_UNSUPPORTED, EXPERIMENTS,
                                  config_hash, main, resolve_config)


def write_cfg(tmp_path, body, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(body))
    return str(p)


def files(root: Path):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 7
    assert {line.split()[0] for line in out} == set(EXPERIMENTS)


def test_wick_default(tmp_path):
    assert main(["wick-check", "--out", str(tmp_path), "--strict"]) == EXIT_OK
    summary = json.loads((tmp_path / "wick_check" / "summary.json").read_text())
    assert summary["max_rel_error"] < 1e-10
    assert summary["stamp"]["config_hash"] == config_hash(resolve_config("wick_check"))


def test_stamp_in_every_file(tmp_path):
    main(["hessian-limit", "--out", str(tmp_path)])
    h = config_hash(resolve_config("hessian_limit"))
    for rel, data in files(tmp_path).items():
        assert h.encode() in data, rel


def test_unknown_key_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, {"not_a_field": 1})
    assert main(["wick-check", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_yaml_is_config_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("manifold: [unclosed\n")
    assert main(["wick-check", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_mismatched_experiment(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "bridge_stat"})
    assert main(["wick-check", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_curved_ambient_unsupported(tmp_path):
    cfg = write_cfg(tmp_path, {"manifold": {"kind": "sphere2", "radius": 1.0, "ambient": "sphere2"},
                               "kernel": {"kind": "heat_restricted", "normalization": "raw_S"}})
    assert main(["normalization-check", "--config", cfg, "--out", str(tmp_path)]) == EXIT_UNSUPPORTED


def test_ellipse_self_ambient_unsupported(tmp_path):
    cfg = write_cfg(tmp_path, {"manifold": {"kind": "ellipse", "semi_axis_a": 1.0, "semi_axis_b": 0.5,
                                            "ambient": "self"},
                               "kernel": {"kind": "heat_restricted", "normalization": "raw_S"},
                               "point": 0.0})
    assert main(["normalization-check", "--config", cfg, "--out", str(tmp_path)]) == EXIT_UNSUPPORTED


def test_strict_failure_exit(tmp_path):
    cfg = write_cfg(tmp_path, {"min_slope": 5.0})
    assert main(["normalization-check", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["normalization-check", "--config", cfg, "--out", str(tmp_path), "--strict"]) == EXIT_FAIL


def test_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"mc": {"paths": 50}, "interpolation": "euclidean_bridge"})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample-pinned", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["sample-pinned", "--config", cfg, "--out", str(b), "--threads", "4"]) == EXIT_OK
    assert files(a) == files(b)


def test_seed_override_changes_hash_and_data(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["sample-pinned", "--out", str(a)])
    main(["sample-pinned", "--out", str(b), "--seed", "5"])
    fa, fb = files(a), files(b)
    assert fa.keys() == fb.keys()
    assert all(fa[k] != fb[k] for k in fa)


@pytest.mark.parametrize("change", [
    {"mc": {"paths": 201}}, {"point": 0.1}, {"kernel": {"normalization": "markov_T"}},
    {"partition": {"kind": "uniform", "n": 17}},
])
def test_hash_tracks_every_field(change):
    base = resolve_config("sample_pinned")
    assert config_hash(resolve_config("sample_pinned", change)) != config_hash(base)


def test_threads_and_output_not_hashed():
    base = resolve_config("sample_pinned")
    assert config_hash(resolve_config("sample_pinned", {"threads": 3, "output_dir": "x"})) == config_hash(base)


def test_env_output_override(tmp_path, monkeypatch):
    monkeypatch.setenv("BROWNIAN_PINNING_OUT", str(tmp_path / "env"))
    assert main(["hessian-limit"]) == EXIT_OK
    assert (tmp_path / "env" / "hessian_limit" / "summary.json").exists()


def test_csv_float_precision(tmp_path):
    main(["normalization-check", "--out", str(tmp_path)])
    text = (tmp_path / "normalization_check").glob("*.csv")
    lines = next(text).read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    row = lines[2].split(",")
    assert any(len(c.replace("-", "").replace(".", "").split("e")[0]) >= 15 for c in row)
