import json
import math
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import rncsim
from harness import (
    ConfigError, ExperimentConfig, ExperimentError, apply_overrides, emit_report,
    format_value, load_config, run_experiment,
)
from version import BUILD_TAG

ROOT = Path(__file__).parent.parent
EXPERIMENTS = ROOT / "config" / "experiments"


def tiny_config(**changes):
    config = ExperimentConfig(name="tiny", topology={"kind": "special_case"}, k=2,
                              payload_size=4, sweep=[0.3, 0.6], seeds=[1], horizon=300)
    return replace(config, **changes)


class ConfigTests(unittest.TestCase):
    def test_shipped_configs_load(self):
        for name in ("random30", "random100", "special_case", "golden"):
            config = load_config(EXPERIMENTS / f"{name}.json")
            self.assertEqual(config.name, name)
            self.assertTrue(config.sweep)

    def test_overrides_win(self):
        config = load_config(EXPERIMENTS / "golden.json",
                             {"seed": 5, "out": "elsewhere", "horizon": 123, "arrival_policy": "defer"})
        self.assertEqual(config.seeds, [5])
        self.assertEqual(config.output_dir, "elsewhere")
        self.assertEqual(config.horizon, 123)
        self.assertEqual(config.arrival_policy, "defer")

    def test_topology_file_override(self):
        config = apply_overrides(tiny_config(), {"topology_file": "data/special_case.edges"})
        self.assertEqual(config.topology, {"kind": "file", "path": "data/special_case.edges"})

    def _write(self, tmp, payload):
        path = Path(tmp) / "exp.json"
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
        return path

    def test_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(self._write(tmp, {"sweep": [0.1], "colour": "blue"}))
            with self.assertRaises(ConfigError):
                load_config(self._write(tmp, "{not json"))
            with self.assertRaises(ConfigError):
                load_config(self._write(tmp, {"sweep": [3.3]}))
            with self.assertRaises(ConfigError):
                load_config(self._write(tmp, {"sweep": [0.3], "arrival_policy": "queue"}))
            with self.assertRaises(ConfigError):
                load_config(self._write(tmp, {"sweep": [0.3], "topology": {"kind": "torus"}}))
        with self.assertRaises(ConfigError):
            load_config(Path("config/experiments/missing.json"))


class RunExperimentTests(unittest.TestCase):
    def test_grid_is_complete(self):
        config = tiny_config(seeds=[1, 2])
        result = run_experiment(config, verbose=False)
        self.assertEqual(len(result.rows), 2 * 2 * 3)
        cells = {(r.lambda_sum, r.seed, r.source, r.destination) for r in result.rows}
        self.assertEqual(len(cells), 12)
        self.assertEqual(set(result.records), {(0.3, 1), (0.3, 2), (0.6, 1), (0.6, 2)})

    def test_empty_sweep(self):
        result = run_experiment(tiny_config(sweep=[]), verbose=False)
        self.assertEqual(result.rows, [])
        with tempfile.TemporaryDirectory() as tmp:
            emit_report(result, tmp, verbose=False)
            lines = (Path(tmp) / "sweep.csv").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(lines), 1)
            self.assertTrue(lines[0].startswith("lambda_sum,seed"))

    def test_random_topology(self):
        config = tiny_config(topology={"kind": "random", "num_nodes": 12, "edge_probability": 0.4},
                             num_sources=2, num_destinations=2, sweep=[0.2], seeds=[3], horizon=200)
        result = run_experiment(config, verbose=False)
        self.assertEqual([(r.source, r.destination) for r in result.rows], [(0, 10), (1, 11)])

    def test_single_message_flows_are_exempt(self):
        config = tiny_config(flow_mode="single", sweep=[1.5])
        result = run_experiment(config, simulate=False, verbose=False)
        self.assertEqual(len(result.rows), 9)
        self.assertTrue(all(r.queuing_bound == 0.0 for r in result.rows))

    def test_explicit_flows(self):
        config = tiny_config(flows=[{"sources": [0], "destinations": [6]},
                                    {"sources": [1], "destinations": [7], "weights": {"1": 3}}],
                             sweep=[0.4], horizon=200)
        result = run_experiment(config, simulate=False, verbose=False)
        self.assertEqual([(r.source, r.destination) for r in result.rows], [(0, 6), (1, 7)])

    def test_failing_cell_is_named(self):
        config = tiny_config(topology={"kind": "file", "path": "missing/net.edges"})
        with self.assertRaises(ExperimentError) as ctx:
            run_experiment(config, verbose=False)
        self.assertIn("seed=1", str(ctx.exception))

    def test_worker_pool_matches_sequential(self):
        sequential = run_experiment(tiny_config(), verbose=False)
        pooled = run_experiment(tiny_config(workers=2), verbose=False)
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            emit_report(sequential, a, verbose=False)
            emit_report(pooled, b, verbose=False)
            self.assertEqual((Path(a) / "sweep.csv").read_bytes(), (Path(b) / "sweep.csv").read_bytes())


class ReportTests(unittest.TestCase):
    def test_format_value(self):
        self.assertEqual(format_value(None), "")
        self.assertEqual(format_value(math.inf), "inf")
        self.assertEqual(format_value(math.nan), "nan")
        self.assertEqual(format_value(1.5), "1.5000")
        self.assertEqual(format_value(3), "3")
        self.assertEqual(format_value(True), "1")

    def test_unstable_pair_reports_inf(self):
        result = run_experiment(tiny_config(sweep=[1.5]), simulate=False, verbose=False)
        with tempfile.TemporaryDirectory() as tmp:
            emit_report(result, tmp, verbose=False)
            rows = (Path(tmp) / "sweep.csv").read_text(encoding="utf-8").splitlines()
        by_pair = {tuple(line.split(",")[3:5]): line.split(",") for line in rows[1:]}
        self.assertEqual(by_pair[("1", "7")][6], "inf")
        self.assertEqual(by_pair[("0", "6")][6], "4.0000")
        self.assertEqual(by_pair[("1", "7")][5], "nan")

    def test_report_layout(self):
        config = tiny_config(sweep=[0.3], horizon=1200, write_traces=True, queue_sample_every=100)
        result = run_experiment(config, verbose=False)
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp)
            emit_report(result, out, verbose=False)
            for name in ("sweep.csv", "estimates.csv", "probes.csv", "manifest.json"):
                self.assertTrue((out / name).exists(), name)
            run_dir = out / "runs" / "lambda_0.300_seed_1"
            for name in ("deliveries.csv", "queues.csv", "packets.bin"):
                self.assertTrue((run_dir / name).exists(), name)
            self.assertTrue((out / "plots" / "delay_0_6.dat").exists())

            probes = (out / "probes.csv").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(probes), 1 + 9)
            manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
            self.assertEqual(manifest["build"], BUILD_TAG)
            self.assertEqual(manifest["rows"], 3)

    def test_repeated_runs_are_byte_identical(self):
        config = load_config(EXPERIMENTS / "golden.json", {"horizon": 600})
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            emit_report(run_experiment(config, verbose=False), a, verbose=False)
            emit_report(run_experiment(config, verbose=False), b, verbose=False)
            for name in ("sweep.csv", "estimates.csv", "runs/lambda_0.300_seed_7/deliveries.csv",
                         "runs/lambda_0.600_seed_7/packets.bin"):
                self.assertEqual((Path(a) / name).read_bytes(), (Path(b) / name).read_bytes(), name)


class CommandLineTests(unittest.TestCase):
    def test_analyze(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = rncsim.main(["analyze", "--config", str(EXPERIMENTS / "golden.json"),
                                "--out", tmp, "--quiet"])
            self.assertEqual(code, 0)
            self.assertTrue((Path(tmp) / "estimates.csv").exists())

    def test_simulate_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = rncsim.main(["simulate", "--config", str(EXPERIMENTS / "golden.json"),
                                "--out", tmp, "--horizon", "200", "--seed", "3",
                                "--topology-file", str(ROOT / "data" / "special_case.edges"),
                                "--quiet"])
            self.assertEqual(code, 0)
            rows = (Path(tmp) / "sweep.csv").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(rows), 1 + 2 * 3)
            self.assertTrue(all(line.split(",")[1] == "3" for line in rows[1:]))

    def test_missing_config_exits_nonzero(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = rncsim.main(["simulate", "--config", "nope.json", "--out", tmp, "--quiet"])
            self.assertEqual(code, 1)

    def test_usage_error(self):
        with self.assertRaises(SystemExit) as ctx:
            rncsim.main([])
        self.assertEqual(ctx.exception.code, 2)


if __name__ == '__main__':
    unittest.main()
