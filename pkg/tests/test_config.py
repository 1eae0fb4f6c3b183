import json
from fractions import Fraction

import pytest

from stokes_homog.config import DEFAULTS, ConfigError, canonical_digest, load_config


def _pointer(cfg):
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    return info.value.pointer


def test_empty_config_is_the_canonical_preset():
    cfg = load_config({})
    assert cfg.coeffs.name == "canonical"
    assert cfg.sweep == [0.25, 0.125, 0.0625]
    assert cfg.cell.area == Fraction(1, 4)
    assert cfg.raw == {**DEFAULTS, "coefficients": DEFAULTS["coefficients"]}


@pytest.mark.parametrize("cfg, pointer", [
    ({"mesh": {"h_cell": 0.3}}, "/mesh/h_cell"),
    ({"sweep": [0.25, 0.5]}, "/sweep/1"),
    ({"sweep": [1.5]}, "/sweep/0"),
    ({"coefficients": {"theta": "sin("}}, "/coefficients/theta"),
    ({"coefficients": {"f": ["1", "sqrt(y1)"]}}, "/coefficients/f/1"),
    ({"coefficients": {"a": [["1", "y1"], ["0", "1"]]}}, "/coefficients/a/1/0"),
    ({"dimension": 3}, "/dimension"),
    ({"seed": -1}, "/seed"),
    ({"output": {"vtk": "yes"}}, "/output/vtk"),
    ({"cell": {"type": "square", "half_width": 0.6}}, "/cell"),
    ({"cell": {"type": "polygon", "vertices": [[0, 0], [0.2, 0.2], [0.2, 0], [0, 0.2]]}}, "/cell"),
])
def test_violations_name_the_field(cfg, pointer):
    assert _pointer(cfg) == pointer


def test_unknown_top_level_key():
    assert _pointer({"colour": "blue"}) == "/"


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert _pointer(p) == "/"


def test_cells_and_presets():
    poly = load_config({"cell": {"type": "polygon", "vertices": [[-0.2, -0.1], [0.2, -0.1], [0, 0.2]]}})
    assert len(poly.cell.vertices) == 3
    assert not load_config({"cell": {"type": "none"}}).cell.has_obstacle
    pre = load_config({"coefficients": {"preset": "laminate"}})
    assert pre.coeffs.name == "laminate"
    custom = load_config({"coefficients": {"theta": "2+cos(2*pi*y1)"}})
    assert custom.coeffs.name == "custom"


def test_digest_depends_on_content_not_key_order(tmp_path):
    a = {"seed": 3, "sweep": [0.5, 0.25]}
    b = {"sweep": [0.5, 0.25], "seed": 3}
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    pa.write_text(json.dumps(a))
    pb.write_text(json.dumps(b, indent=4))
    assert load_config(pa).digest == load_config(pb).digest
    assert load_config({"seed": 4}).digest != load_config({"seed": 3}).digest
    assert load_config({}).digest == canonical_digest(load_config({}).raw)


def test_sweep_config_carries_everything():
    cfg = load_config({"mesh": {"h_cell": 0.05}, "hole_condition": "natural", "seed": 9})
    sc = cfg.sweep_config()
    assert (sc.h_cell, sc.hole_bc, sc.seed, sc.eps) == (0.05, "natural", 9, (0.25, 0.125, 0.0625))
