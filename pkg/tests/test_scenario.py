import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from scenario import (  # noqa: E402
    REPO_DIR, ConfigError, Scenario, Settings, config_hash, env_flag, load_env_file, load_kv_file, load_scenario,
    parse_kv_args,
)

UNIFORM = REPO_DIR / "scenarios" / "uniform.env"


class KeyValueTest(unittest.TestCase):

    def test_parse_args(self):
        self.assertEqual(parse_kv_args(["a.b = 1", "c.d=x=y"]), {"a.b": "1", "c.d": "x=y"})
        with self.assertRaises(ConfigError) as ctx:
            parse_kv_args(["kappa"])
        self.assertEqual(ctx.exception.key, "kappa")
        with self.assertRaises(ConfigError):
            parse_kv_args(["=3"])

    def test_load_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "s.env"
            path.write_text("# comment\n\ndomain.cells = 32\nnot a pair\nparams.kappa=1,2\n")
            self.assertEqual(load_kv_file(path), {"domain.cells": "32", "params.kappa": "1,2"})
            self.assertEqual(load_kv_file(Path(tmp) / "missing.env"), {})

    def test_hash_ignores_order(self):
        self.assertEqual(config_hash({"a.x": "1", "b.y": "2"}), config_hash({"b.y": "2", "a.x": "1"}))
        self.assertNotEqual(config_hash({"a.x": "1"}), config_hash({"a.x": "2"}))


class ScenarioTest(unittest.TestCase):

    def assertConfigError(self, values, key):
        with self.assertRaises(ConfigError) as ctx:
            Scenario.from_values(values)
        self.assertEqual(ctx.exception.key, key)

    def test_defaults(self):
        s = Scenario.from_values({})
        self.assertEqual(s.domain.shape, "square")
        self.assertEqual(s.kappas, (10.0,))
        self.assertIsNone(s.sigma)
        self.assertEqual(s.seed, 1234)

    def test_bundled_scenario(self):
        s = load_scenario(UNIFORM, ["params.kappa=5"], seed=7)
        self.assertEqual(s.kappas, (5.0,))
        self.assertEqual(s.sigma, 0.5)
        self.assertEqual(s.seed, 7)
        self.assertEqual(s.hash, config_hash(s.raw))
        with self.assertRaises(ConfigError) as ctx:
            load_scenario(Path("no/such/file.env"))
        self.assertEqual(ctx.exception.key, "scenario")

    def test_errors_name_the_key(self):
        self.assertConfigError({"solver.tol": "1"}, "solver.tol")
        self.assertConfigError({"domain.cells": "4"}, "domain.cells")
        self.assertConfigError({"domain.cells": "many"}, "domain.cells")
        self.assertConfigError({"domain.size": "-1"}, "domain")
        self.assertConfigError({"domain.center": "1"}, "domain.center")
        self.assertConfigError({"params.kappa": "10,-1"}, "params.kappa")
        self.assertConfigError({"params.sigma": "-0.5"}, "params.sigma")
        self.assertConfigError({"params.H": "2,1"}, "params.H")
        self.assertConfigError({"pinning.family": "bogus"}, "pinning.family")
        self.assertConfigError({"pinning.family": "linear", "pinning.value": "1"}, "pinning")
        self.assertConfigError({"field.family": "constant", "field.value": "strong"}, "field.value")

    def test_family_parameters(self):
        s = Scenario.from_values({"pinning.family": "radial", "pinning.value": "1", "pinning.radius": "0.2",
                                  "pinning.center": "0.5,0.5", "field.family": "linear", "field.value": "0",
                                  "field.gradient": "1,0"})
        self.assertEqual(s.pinning.params["center"], (0.5, 0.5))
        self.assertEqual(s.field_spec.params["gradient"], (1.0, 0.0))
        self.assertEqual(s.pinning.params["radius"], 0.2)

    def test_typed_params(self):
        s = Scenario.from_values({"params.tol": "0.01", "params.seeds": "3", "params.bc": "neumann",
                                  "params.list": "1,2", "params.seed": "5", "output.dir": "results"})
        self.assertEqual(s.param("tol"), 0.01)
        self.assertEqual(s.param("seeds", kind=int), 3)
        self.assertEqual(s.param("bc", kind=str), "neumann")
        self.assertEqual(s.param("list", kind="floats"), (1.0, 2.0))
        self.assertEqual(s.param("missing", 4.0), 4.0)
        self.assertEqual(s.seed, 5)
        self.assertEqual(s.output_dir, Path("results"))
        with self.assertRaises(ConfigError) as ctx:
            s.param("bc")
        self.assertEqual(ctx.exception.key, "params.bc")


class SettingsTest(unittest.TestCase):

    def test_from_environment(self):
        env = {"GL_WORKERS": "3", "GL_LOG_LEVEL": "debug", "GL_FHAT_TABLE": "t.csv"}
        with mock.patch.dict(os.environ, env, clear=True):
            s = Settings.from_env(env_file=None)
        self.assertEqual(s.workers, 3)
        self.assertEqual(s.log_level, "DEBUG")
        self.assertEqual(s.fhat_table, Path("t.csv"))
        self.assertEqual(s.seed, 1234)

    def test_bad_workers(self):
        for value in ("0", "two"):
            with mock.patch.dict(os.environ, {"GL_WORKERS": value}, clear=True):
                with self.assertRaises(ConfigError):
                    Settings.from_env(env_file=None)

    def test_env_file_does_not_override(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "gl.env"
            path.write_text("GL_SEED=7\nGL_WORKERS=2\n")
            with mock.patch.dict(os.environ, {"GL_SEED": "9"}, clear=True):
                load_env_file(path)
                s = Settings.from_env(env_file=None)
        self.assertEqual(s.seed, 9)
        self.assertEqual(s.workers, 2)

    def test_env_flag(self):
        with mock.patch.dict(os.environ, {"GL_SLOW": "yes"}, clear=True):
            self.assertTrue(env_flag("GL_SLOW"))
            self.assertFalse(env_flag("GL_OTHER"))


if __name__ == "__main__":
    unittest.main()
