import json

import pytest

from lsrf.config import ConfigError, config_from_dict, parse_config, with_overrides


def test_minimal_config_fills_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{}")
    cfg = parse_config(path)
    assert cfg.kernel.family == "epanechnikov" and cfg.estimator.tol == 1e-8
    assert cfg.estimator.max_iter == 200 and cfg.estimator.n_grid == 101 and cfg.threads is None


def test_block_scale_order_error_names_both_keys():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"sampling": {"block_A1": 1.0, "block_A2": 2.0}})
    msg = " ".join(exc.value.errors)
    assert "sampling.block_A1" in msg and "sampling.block_A2" in msg


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"kernel": {"familly": "x", "c": -1.0}, "sampling": {"d": "two"}, "bogus": 1})
    errs = exc.value.errors
    assert len(errs) == 4
    assert any("kernel.familly" in e for e in errs) and any("bogus" in e for e in errs)
    assert any("sampling.d" in e for e in errs) and any("kernel.c" in e for e in errs)


def test_round_trip(tmp_path):
    raw = {"seed": 3, "threads": 2, "kernel": {"family": "triweight", "rule": "manual", "h": 0.1},
           "sampling": {"schedule": [[100, 5.0], [400, 10.0]]},
           "field": {"p": 2, "coefs": [{"kind": "polynomial", "terms": [[1.0, [0, 0]]]}]},
           "experiment": {"u_points": [[0.5, 0.5]], "x_points": [[0.1, 0.2]]}}
    cfg = config_from_dict(raw)
    path = tmp_path / "out.json"
    cfg.dump(path)
    back = parse_config(path)
    assert back == cfg and back.digest() == cfg.digest()


def test_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        parse_config(arr)


@pytest.mark.parametrize("raw", [
    {"kernel": {"rule": "manual"}},
    {"kernel": {"family": "custom"}},
    {"sampling": {"schedule": [[100, 5.0], [50, 10.0]]}},
    {"sampling": {"density": "beta"}},
    {"field": {"rates": [1.0, -2.0]}},
    {"field": {"transform": "log"}},
    {"experiment": {"tau": 1.5}},
    {"experiment": {"q": 3}},
    {"experiment": {"estimators": ["loess"]}},
    {"threads": 0},
    {"seed": -1},
    {"estimator": {"max_iter": True}},
])
def test_constraint_violations(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_overrides_revalidate():
    cfg = config_from_dict({})
    assert with_overrides(cfg, {"kernel.h": 0.2, "kernel.rule": "manual"}).kernel.h == 0.2
    with pytest.raises(ConfigError):
        with_overrides(cfg, {"kernel.rule": "manual"})


def test_integers_accepted_for_floats():
    cfg = config_from_dict({"sampling": {"A_n": 10}})
    assert isinstance(cfg.sampling.A_n, float)


def test_digest_ignores_runtime_keys():
    a = config_from_dict({"seed": 1})
    assert config_from_dict({"seed": 1, "threads": 4, "output": "x"}).digest() == a.digest()
    assert config_from_dict({"seed": 2}).digest() != a.digest()
