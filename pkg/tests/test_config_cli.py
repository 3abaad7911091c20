import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pksfil.cli import build_parser, dumps, main, resolve_config
from pksfil.config import ConfigError, RunConfig, config_hash, parse_config


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.grid is None and cfg.domain is None

    def test_sections(self):
        cfg = parse_config("[run]\nexperiment = filament\nseed = 7\n[grid]\ndomain = 16\ngrid = 128\n"
                           "[constants]\nconst_M = 4\n[profile]\nalphas = 3.14, 6.28\n")
        assert cfg.experiment == "filament" and cfg.seed == 7
        assert cfg.domain == 16.0 and cfg.grid == 128
        assert cfg.alphas == (3.14, 6.28)

    def test_auto(self):
        assert parse_config("[grid]\ngrid = auto\n").grid is None

    @pytest.mark.parametrize("text", [
        "[nope]\nx = 1\n",
        "[grid]\nsize = 4\n",
        "[grid]\ngrid = 4.5\n",
        "[grid]\ngrid = 64\ngrid = 128\n",
        "[grid]\ngrid = 63\n",
        "[run]\nexperiment = other\n",
        "[run]\nseed = -1\n",
        "no section\n",
    ])
    def test_strict(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_hash_stable(self):
        assert config_hash(RunConfig()) == config_hash(parse_config("[run]\nseed = 0\n"))
        assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))


class TestDumps:
    def test_nonfinite_and_sorted(self):
        assert dumps({"b": math.nan, "a": math.inf, "c": [1, np.float64(0.1)]}) == '{"a":null,"b":null,"c":[1,0.10000000000000001]}'

    def test_numpy_types(self):
        assert dumps([np.bool_(True), np.int64(3), np.arange(2.0), None]) == "[true,3,[0,1],null]"

    @given(x=st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        assert json.loads(dumps(x)) == x

    def test_rejects_objects(self):
        with pytest.raises(TypeError):
            dumps(object())


class TestResolve:
    def test_flags_override_file(self, tmp_path):
        cfg_file = tmp_path / "c.ini"
        cfg_file.write_text("[grid]\ngrid = 64\n[run]\nseed = 5\n")
        args = build_parser().parse_args(["profile", "--config", str(cfg_file), "--grid", "128"])
        cfg = resolve_config(args, environ={})
        assert cfg.grid == 128 and cfg.seed == 5

    def test_env_out(self):
        args = build_parser().parse_args(["profile", "--out", "a"])
        assert resolve_config(args, environ={"PKS_OUT": "b"}).out == "b"


class TestCommands:
    def test_profile_pass(self, tmp_path):
        out = tmp_path / "o"
        assert main(["profile", "--alpha", f"{math.pi}", "--out", str(out), "--quiet"]) == 0
        lines = [json.loads(l) for l in (out / "profile" / "records.jsonl").read_text().splitlines()]
        assert lines[0]["record"] == "manifest"
        assert any(l.get("passed") for l in lines[1:])
        assert (out / "profile" / "manifest.json").exists()

    def test_profile_rejects_supercritical(self, tmp_path):
        assert main(["profile", "--alpha", f"{8.1 * math.pi}", "--out", str(tmp_path), "--quiet"]) == 2

    def test_byte_determinism(self, tmp_path):
        argv = ["profile", "--alpha", "1.0,2.0", "--seed", "3", "--out", str(tmp_path), "--quiet"]
        path = tmp_path / "profile" / "records.jsonl"
        assert main(argv) == 0
        first = path.read_bytes()
        assert main(argv) == 0
        assert path.read_bytes() == first

    def test_manifest_mismatch_refused(self, tmp_path):
        base = ["profile", "--out", str(tmp_path), "--quiet"]
        assert main(base + ["--alpha", "1.0"]) == 0
        assert main(base + ["--alpha", "2.0"]) == 2
        assert main(base + ["--alpha", "2.0", "--force"]) == 0
        assert main(base + ["--alpha", "2.0"]) == 0

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[grid]\nbogus = 1\n")
        assert main(["profile", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == 2

    def test_unknown_suite(self, tmp_path):
        assert main(["estimates", "--suite", "nope", "--out", str(tmp_path), "--quiet"]) == 2

    def test_usage_error(self):
        assert main(["nonsense"]) == 2

    def test_module_entry_point(self, tmp_path):
        env = {"PKS_OUT": str(tmp_path), "PATH": "/usr/bin:/bin"}
        proc = subprocess.run([sys.executable, "-m", "pksfil", "profile", "--alpha", "1.0", "--quiet"],
                              env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "profile" / "records.jsonl").exists()
