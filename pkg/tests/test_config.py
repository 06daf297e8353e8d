import logging

import pytest

from periodic_fsi.config import RunConfig, config_from_dict, parse_config
from periodic_fsi.errors import SchemaError


def problems_of(data, strict=True):
    with pytest.raises(SchemaError) as info:
        config_from_dict(data, strict=strict)
    return info.value.problems


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.time.nodes == 256 and cfg.basis.n == 4


def test_yaml_round_trip(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "geometry: {profile: sin2, amplitude: 0.05, L: 0.2}\n"
        "time: {period: 1.0, nodes: 64}\n"
        "forcing:\n  p_in: {kind: sin, amplitude: 0.01}\n  relative_to_budget: true\n"
    )
    cfg = parse_config(str(path))
    assert cfg.geometry.amplitude == 0.05
    assert cfg.forcing.p_in.kind == "sin" and cfg.forcing.relative_to_budget
    assert cfg.base_dir == str(tmp_path)


def test_numeric_strings_and_ints_coerced():
    cfg = config_from_dict({"geometry": {"L": "0.1"}, "time": {"period": 2}})
    assert cfg.geometry.L == 0.1 and isinstance(cfg.time.period, float)


def test_all_problems_reported_with_paths():
    probs = problems_of({
        "geometry": {"L": -1.0, "profile": "bowl"},
        "time": {"nodes": 100},
        "basis": {"n": 3},
        "coupling": {"rho": 1.5},
    })
    joined = "\n".join(probs)
    for path in ("geometry.L", "geometry.profile", "time.nodes", "basis.n", "coupling.rho"):
        assert path in joined
    assert len(probs) >= 5


@pytest.mark.parametrize(
    "data, path",
    [
        ({"time": {"nodes": "many"}}, "time.nodes"),
        ({"shell": {"membrane": 1}}, "shell.membrane"),
        ({"geometry": {"L": float("nan")}}, "geometry.L"),
        ({"geometry": 3}, "geometry"),
        ({"forcing": {"f_direction": [1.0, 0.0]}}, "forcing.f_direction"),
        ({"forcing": {"g": {"kind": "table"}}}, "forcing.g"),
        ({"forcing": {"g": {"kind": "table", "times": [0, 0.5], "values": [1.0]}}}, "forcing.g"),
        ({"shell": {"b2": [[0.0, 1.0], [0.0, 0.0]]}}, "shell.b2"),
        ({"solver": {"boundary_term": True}}, "solver.boundary_term"),
        ({"cauchy": {"a0": [0.0, 1.0]}}, "cauchy.a0"),
        ({"coupling": {"theta": 1.0}}, "coupling.theta"),
        ({"seed": -1}, "seed"),
    ],
)
def test_invalid_fields(data, path):
    assert any(p.startswith(path) for p in problems_of(data))


def test_unknown_keys_strict_and_lenient(caplog):
    assert problems_of({"geometry": {"wobble": 1}}) == ["geometry.wobble: unknown key"]
    with caplog.at_level(logging.WARNING):
        cfg = config_from_dict({"geometry": {"wobble": 1}}, strict=False)
    assert cfg == RunConfig()
    assert "geometry.wobble" in caplog.text


def test_missing_and_bad_yaml(tmp_path):
    with pytest.raises(SchemaError, match="not found"):
        parse_config(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry: [unclosed\n")
    with pytest.raises(SchemaError, match="not valid YAML"):
        parse_config(str(bad))
    assert SchemaError(["x"]).exit_code == 2


def test_hash_stable_and_sensitive():
    a = config_from_dict({"time": {"nodes": 64}})
    b = config_from_dict({"time": {"nodes": 64}}, base_dir="/elsewhere")
    assert a.hash() == b.hash()
    assert a.replace(output="other").hash() == a.hash()
    assert a.with_section("time", nodes=128).hash() != a.hash()
    assert len(a.hash()) == 64
