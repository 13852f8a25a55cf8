import math

import pytest

from pointer_cell_sim.config import (
    fmt_float,
    parse_angle,
    parse_config,
    serialize_config,
)
from pointer_cell_sim.errors import ConfigError

MINIMAL = """\
[model]
name = coleman_hepp

[parameters]
N = 4
m0 = 0.6
theta = pi

[state]
amplitudes = 0.6, 0.8
"""


class TestParse:
    def test_minimal_valid(self):
        cfg = parse_config(MINIMAL)
        assert cfg.model == "coleman_hepp"
        assert cfg.params["N"] == 4
        assert cfg.params["m0"] == 0.6
        assert cfg.params["theta"] == math.pi
        assert cfg.amplitudes == (complex(0.6), complex(0.8))
        assert cfg.seed == 0
        assert cfg.measurement_time == 1.0

    def test_unnormalized_amplitudes_name_the_field(self):
        text = MINIMAL.replace("0.6, 0.8", "1, 1")
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert any("amplitudes" in msg and "normalised" in msg for msg in exc.value.errors)

    def test_unknown_key_is_an_error(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[model2]\nx = 1\n")
        assert any("unknown section" in msg for msg in exc.value.errors)
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL.replace("theta = pi", "theta = pi\nflux = 3"))
        assert any("unknown key 'flux'" in msg for msg in exc.value.errors)

    def test_all_errors_collected_in_one_pass(self):
        text = """\
[model]
name = coleman_hepp

[parameters]
N = -2
m0 = 3.0

[state]
amplitudes = 1, 1
"""
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert len(exc.value.errors) == 3

    def test_missing_required_keys_listed_together(self):
        text = "[model]\nname = coleman_hepp\n\n[parameters]\ntheta = pi\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        msgs = "\n".join(exc.value.errors)
        assert "'N'" in msgs and "'m0'" in msgs and "amplitudes" in msgs

    def test_sweep_must_increase(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[sweep]\nN = 100, 50\n")
        assert any("strictly increasing" in msg for msg in exc.value.errors)

    def test_grid_outside_range_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[ldp]\ngrid = 0.0, 1.5\n")
        assert any("outside the spectrum range" in msg for msg in exc.value.errors)

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[ldp]\ngrid =\n")
        assert any("empty" in msg for msg in exc.value.errors)

    def test_perturbation_edits(self):
        cfg = parse_config(MINIMAL + "\n[perturbation]\nsite_0 = flip\nsite_3 = depolarize\n")
        assert cfg.perturbation == ((0, "flip"), (3, "depolarize"))
        with pytest.raises(ConfigError):
            parse_config(MINIMAL + "\n[perturbation]\nsite_0 = smash\n")

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "\n[sweep]\nN = 1, 2\nN = 3, 4\n")
        assert any("duplicate key" in msg for msg in exc.value.errors)


class TestAngles:
    @pytest.mark.parametrize("text,value", [
        ("pi", math.pi),
        ("2*pi", 2 * math.pi),
        ("pi/2", math.pi / 2),
        ("3*pi/4", 3 * math.pi / 4),
        ("3pi/4", 3 * math.pi / 4),
        ("1.5", 1.5),
        ("-pi/2", -math.pi / 2),
    ])
    def test_forms(self, text, value):
        assert parse_angle(text) == pytest.approx(value, abs=0)


class TestRoundTrip:
    def test_parse_serialize_parse_identity(self):
        text = MINIMAL + """
[observable]
file = sz.txt

[sweep]
N = 50, 100, 200, 400

[ldp]
grid = -0.6, -0.2, 0.2, 0.6

[perturbation]
site_0 = flip
site_1 = depolarize
"""
        cfg1 = parse_config(text)
        cfg2 = parse_config(serialize_config(cfg1))
        assert cfg1 == cfg2
        assert serialize_config(cfg1) == serialize_config(cfg2)
        assert cfg1.sha256() == cfg2.sha256()

    def test_float_rendering_round_trips(self):
        for x in (0.6, 1 / 3, 0.9728, math.pi, 1e-300, -2.5e17):
            assert float(fmt_float(x)) == x
