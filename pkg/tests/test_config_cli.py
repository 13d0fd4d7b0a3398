import json
import os

import numpy as np
import pytest

from contjump.cli import main, write_csv
from contjump.config import DEFAULT_SEED, ENV_SEED, parse_config
from contjump.errors import ConfigError

MINIMAL = """
[geometry]
d = 1
L = 20.0

[kernel]
variant = "factorized"

[run]
z = 1.0
seed = 42
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParseConfig:
    def test_minimal_valid(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        assert cfg.geom.d == 1 and cfg.geom.L == 20.0
        assert cfg.spec.variant == "factorized"
        assert cfg.z == 1.0 and cfg.seed == 42

    def test_empty_config_gets_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, ""))
        assert cfg.seed == DEFAULT_SEED
        assert cfg.geom.L == 20.0
        assert cfg.experiments.diffusive_eps == [0.4, 0.2, 0.1, 0.05]

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config("/nonexistent/cfg.toml")

    def test_unknown_key_reports_path(self, tmp_path):
        with pytest.raises(ConfigError, match="kernel.a.radiuss"):
            parse_config(write(tmp_path, "[kernel.a]\nradiuss = 1.0\n"))
        with pytest.raises(ConfigError, match="experiments.diffusive.epss"):
            parse_config(write(tmp_path, "[experiments.diffusive]\nepss = [0.1]\n"))

    def test_ill_typed_field(self, tmp_path):
        with pytest.raises(ConfigError, match="geometry.L"):
            parse_config(write(tmp_path, '[geometry]\nL = "wide"\n'))

    def test_negative_intensity(self, tmp_path):
        with pytest.raises(ConfigError, match="run.z"):
            parse_config(write(tmp_path, "[run]\nz = -1.0\n"))

    def test_geometry_invariant_enforced(self, tmp_path):
        # L too small for the kernel supports: r_b + 2 r_a = 3 needs L > 6
        with pytest.raises(ConfigError, match="geometry.L"):
            parse_config(write(tmp_path, "[geometry]\nL = 5.0\n"))

    def test_seed_precedence(self, tmp_path, monkeypatch):
        path = write(tmp_path, MINIMAL)
        assert parse_config(path).seed == 42
        monkeypatch.setenv(ENV_SEED, "77")
        assert parse_config(path).seed == 77
        assert parse_config(path, seed_override=5).seed == 5
        monkeypatch.setenv(ENV_SEED, "bogus")
        with pytest.raises(ConfigError, match=ENV_SEED):
            parse_config(path)

    def test_decreasing_eps_required(self, tmp_path):
        with pytest.raises(ConfigError, match="decreasing"):
            parse_config(write(tmp_path, "[experiments.diffusive]\neps = [0.1, 0.2]\n"))


class TestCLI:
    def test_unknown_subcommand_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["sample-poisson", "--bogus"])
        assert exc.value.code == 2

    def test_config_error_exit_2(self, tmp_path, capsys):
        path = write(tmp_path, "[geometry]\nL = -1.0\n")
        assert main(["sample-poisson", "--config", path]) == 2
        assert "geometry.L" in capsys.readouterr().err

    def test_sample_poisson_artifacts(self, tmp_path, capsys):
        cfg = write(tmp_path, MINIMAL)
        out = str(tmp_path / "out")
        assert main(["sample-poisson", "--config", cfg, "--out", out]) == 0
        pts = np.loadtxt(os.path.join(out, "points.csv"), skiprows=1)
        assert np.all((pts >= 0) & (pts < 20.0))
        manifest = json.load(open(os.path.join(out, "run_manifest.json")))
        assert manifest["command"] == "sample-poisson"
        assert manifest["seed"] == 42
        assert "points.csv" in manifest["artifacts"]

    def test_simulate_jumps_writes_trajectory(self, tmp_path):
        cfg = write(tmp_path, MINIMAL)
        out = str(tmp_path / "sj")
        assert main(["simulate-jumps", "--config", cfg, "--out", out]) == 0
        from contjump.simulate import Trajectory

        traj = Trajectory.load(os.path.join(out, "trajectory.txt"))
        assert traj.horizon == 2.5

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = write(tmp_path, MINIMAL)
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        main(["sample-poisson", "--config", cfg, "--out", out1])
        main(["sample-poisson", "--config", cfg, "--seed", "43", "--out", out2])
        a = open(os.path.join(out1, "points.csv")).read()
        b = open(os.path.join(out2, "points.csv")).read()
        assert a != b

    def test_bit_identical_reruns(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + "\n[experiments.fock]\nn_max = 2\n")
        outs = [str(tmp_path / f"f{k}") for k in range(2)]
        for out in outs:
            assert main(["fock-bounds", "--config", cfg, "--out", out]) == 0
        a = open(os.path.join(outs[0], "fock_norms.csv"), "rb").read()
        b = open(os.path.join(outs[1], "fock_norms.csv"), "rb").read()
        assert a == b

    def test_eval_generator_values_finite(self, tmp_path):
        cfg = write(tmp_path, MINIMAL)
        out = str(tmp_path / "eg")
        assert main(["eval-generator", "--config", cfg, "--out", out]) == 0
        rows = open(os.path.join(out, "generator_values.csv")).read().splitlines()[1:]
        vals = [float(r.split(",")[1]) for r in rows]
        assert all(np.isfinite(vals))

    def test_scaling_bd_needs_factorized(self, tmp_path, capsys):
        cfg = write(tmp_path, '[kernel]\nvariant = "momentum"\n')
        assert main(["scaling-bd", "--config", cfg, "--out", str(tmp_path / "x")]) == 2

    def test_csv_float_format(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(str(path), ["a", "b"], [(1.0 / 3.0, 7)])
        line = path.read_text().splitlines()[1]
        assert line == "0.33333333333333331,7"
