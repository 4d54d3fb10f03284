#!/usr/bin/env python3
"""
End-to-end tests for gpstruct_cli.py (synth -> train -> predict -> evaluate).

Runs the real commands through click's CliRunner on small synthetic corpora.
"""

import json
import shutil
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from click.testing import CliRunner

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from gpstruct.checkpoint import load_store
from gpstruct.config import load_run_config
from gpstruct.corpus import load_corpus, parse_corpus, serialize_corpus
from gpstruct_cli import cli


class CliTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp())
        cls.runner = CliRunner()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def invoke(self, *args):
        return self.runner.invoke(cli, [str(a) for a in args])

    def ok(self, *args):
        result = self.invoke(*args)
        self.assertEqual(result.exit_code, 0, msg=result.output)
        return result

    def synth(self, out, *extra):
        return self.ok("synth", "--out", out, *extra)


class TestPipeline(CliTestCase):
    """Full train / predict / evaluate round on separable synthetic data"""

    def test_low_error_on_synthetic_chain(self):
        data, run = self.tmp / "data", self.tmp / "run"
        self.synth(data, "--labels", 2, "--n-train", 20, "--n-test", 20,
                   "--t-min", 10, "--t-max", 10, "--noise", 0.2, "--seed", 0)
        for name in ("train.txt", "test.txt", "synth_params.json"):
            self.assertTrue((data / name).exists(), name)

        self.ok("train", "--data", data / "train.txt", "--out", run,
                "--kernel", "linear", "--iterations", 600, "--thin", 30, "--seed", 1)
        for name in ("store.npz", "trace.csv", "effective_config.json"):
            self.assertTrue((run / name).exists(), name)
        self.assertEqual(len(load_store(run / "store.npz")), 20)
        self.assertEqual(load_run_config(run / "effective_config.json").iterations, 600)

        result = self.ok("predict", "--data", data / "train.txt", "--test", data / "test.txt",
                         "--out", run, "--marginals", "--seed", 1)
        self.assertIn("Hamming error", result.output)
        for name in ("predictions.txt", "marginals.csv", "error_history.csv", "metrics.json",
                     "metrics.csv", "effective_config_predict.json"):
            self.assertTrue((run / name).exists(), name)
        self.assertEqual(load_run_config(run / "effective_config.json").iterations, 600)

        with open(run / "metrics.json") as f:
            metrics = json.load(f)
        split = metrics["splits"][0]
        self.assertLessEqual(split["hamming_error"], 0.10)
        self.assertEqual(split["n_samples"], 13)
        self.assertIsNone(split["runtime_seconds"])

        self.ok("evaluate", "--pred", run / "predictions.txt", "--gold", data / "test.txt",
                "--out", self.tmp / "eval")
        with open(self.tmp / "eval" / "metrics.json") as f:
            evaluated = json.load(f)
        self.assertAlmostEqual(evaluated["splits"][0]["hamming_error"], split["hamming_error"])


class TestCommands(CliTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.data = cls.tmp / "data"
        cls.run_dir = cls.tmp / "run"
        cls.runner.invoke(cli, ["synth", "--out", str(cls.data), "--n-train", "6", "--n-test", "4",
                                "--t-min", "3", "--t-max", "5", "--seed", "2"])
        cls.runner.invoke(cli, ["train", "--data", str(cls.data / "train.txt"), "--out", str(cls.run_dir),
                                "--iterations", "40", "--thin", "10"])

    def test_setup_produced_a_store(self):
        self.assertEqual(len(load_store(self.run_dir / "store.npz")), 4)

    def test_missing_data_file(self):
        result = self.invoke("train", "--data", self.tmp / "absent.txt", "--out", self.tmp / "x")
        self.assertEqual(result.exit_code, 3)
        self.assertIn("[missing-path]", result.output)
        self.assertIn("absent.txt", result.output)

    def test_invalid_flag_value(self):
        result = self.invoke("train", "--data", self.data / "train.txt", "--out", self.tmp / "x",
                             "--burn-in", 1.5)
        self.assertEqual(result.exit_code, 2)
        self.assertIn("[config]", result.output)

    def test_unknown_config_key(self):
        path = self.tmp / "bad_config.json"
        path.write_text(json.dumps({"chain.iterations": 10, "chain.speed": 3}))
        result = self.invoke("train", "--config", path, "--data", self.data / "train.txt")
        self.assertEqual(result.exit_code, 2)
        self.assertIn("chain.speed", result.output)

    def test_config_value_of_wrong_type(self):
        path = self.tmp / "typed_config.json"
        path.write_text(json.dumps({"chain.thin": "5"}))
        result = self.invoke("train", "--config", path, "--data", self.data / "train.txt",
                             "--out", self.tmp / "typed")
        self.assertEqual(result.exit_code, 2)
        self.assertIn("[config]", result.output)
        self.assertIn("chain.thin", result.output)

    def test_config_file_with_flag_override(self):
        path = self.tmp / "config.json"
        out = self.tmp / "configured"
        path.write_text(json.dumps({
            "data.train": str(self.data / "train.txt"),
            "output.dir": str(out),
            "chain.iterations": 10,
            "chain.thin": 5,
        }))
        self.ok("train", "--config", path, "--iterations", 20)
        self.assertEqual(load_store(out / "store.npz").stamps, [5, 10, 15, 20])
        self.assertEqual(load_run_config(out / "effective_config.json").iterations, 20)

    def test_unlabeled_test_file(self):
        test = load_corpus(self.data / "test.txt")
        unlabeled = self.tmp / "unlabeled.txt"
        unlabeled.write_text(serialize_corpus(test, include_labels=False))
        out = self.tmp / "unlabeled_run"
        shutil.copytree(self.run_dir, out)

        result = self.invoke("predict", "--data", self.data / "train.txt", "--test", unlabeled, "--out", out)
        self.assertEqual(result.exit_code, 3)
        self.assertIn("missing label", result.output)

        self.ok("predict", "--data", self.data / "train.txt", "--test", unlabeled,
                "--out", out, "--unlabeled-test")
        predictions = (out / "predictions.txt").read_text().split("\n\n")
        self.assertEqual(len([p for p in predictions if p.strip()]), len(test))
        self.assertFalse((out / "metrics.json").exists())

    def test_store_from_other_data_is_rejected(self):
        other = self.tmp / "other"
        self.synth(other, "--n-train", 3, "--n-test", 2, "--t-min", 2, "--t-max", 2, "--seed", 9)
        result = self.invoke("predict", "--data", other / "train.txt", "--test", other / "test.txt",
                             "--store", self.run_dir / "store.npz", "--out", self.tmp / "mismatch")
        self.assertEqual(result.exit_code, 5)
        self.assertIn("[store-mismatch]", result.output)

    def test_missing_store(self):
        result = self.invoke("predict", "--data", self.data / "train.txt", "--test", self.data / "test.txt",
                             "--out", self.tmp / "never_trained")
        self.assertEqual(result.exit_code, 5)

    def test_resume_matches_single_run(self):
        direct, staged = self.tmp / "direct", self.tmp / "staged"
        common = ["--data", self.data / "train.txt", "--thin", 10, "--seed", 4,
                  "--sample-hypers", "prior-whitening", "--hyper-every", 5]
        self.ok("train", *common, "--out", direct, "--iterations", 60)
        self.ok("train", *common, "--out", staged, "--iterations", 30)
        result = self.ok("train", *common, "--out", staged, "--iterations", 60, "--resume")
        self.assertIn("Resuming from iteration 30", result.output)
        a, b = load_store(direct / "store.npz"), load_store(staged / "store.npz")
        self.assertEqual(a.stamps, b.stamps)
        np.testing.assert_array_equal(a.f_matrix(), b.f_matrix())

    def test_evaluate_alignment_error(self):
        pred = self.tmp / "short_pred.txt"
        pred.write_text("L0\nL1\n\n")
        result = self.invoke("evaluate", "--pred", pred, "--gold", self.data / "test.txt")
        self.assertEqual(result.exit_code, 3)
        self.assertIn("[alignment]", result.output)

    def test_synth_files_keep_label_order(self):
        out = self.tmp / "ordered"
        self.synth(out, "--labels", 4, "--n-train", 3, "--n-test", 2, "--t-min", 2, "--t-max", 3, "--seed", 6)
        train = load_corpus(out / "train.txt")
        self.assertEqual(train.label_alphabet, ("L0", "L1", "L2", "L3"))
        self.assertEqual(load_corpus(out / "test.txt").label_alphabet, train.label_alphabet)
        self.assertEqual(load_corpus(out / "train.txt"), parse_corpus(serialize_corpus(train)))

    def test_synth_rejects_bad_transitions(self):
        path = self.tmp / "transitions.json"
        path.write_text(json.dumps([[0.5, 0.6], [0.5, 0.5]]))
        result = self.invoke("synth", "--out", self.tmp / "bad_synth", "--transitions", path)
        self.assertEqual(result.exit_code, 2)
        self.assertIn("[stochastic-matrix]", result.output)


class TestExperiment(CliTestCase):

    def test_repeatable_metrics(self):
        data = self.tmp / "corpus"
        self.synth(data, "--n-train", 30, "--n-test", 1, "--t-min", 4, "--t-max", 6, "--seed", 3)
        args = ["experiment", "--data", data / "train.txt", "--splits", 2, "--train-size", 8,
                "--test-size", 5, "--iterations", 60, "--thin", 10, "--seed", 7]
        self.ok(*args, "--out", self.tmp / "exp_a")
        self.ok(*args, "--out", self.tmp / "exp_b")

        first = (self.tmp / "exp_a" / "metrics.json").read_bytes()
        self.assertEqual(first, (self.tmp / "exp_b" / "metrics.json").read_bytes())
        metrics = json.loads(first)
        self.assertEqual(metrics["aggregate"]["n_splits"], 2)
        self.assertEqual([s["split_id"] for s in metrics["splits"]], [0, 1])
        for k in range(2):
            split_dir = self.tmp / "exp_a" / f"split_{k}"
            for name in ("train.txt", "test.txt", "store.npz", "predictions.txt", "metrics.json"):
                self.assertTrue((split_dir / name).exists(), f"split_{k}/{name}")
            for name in ("predictions.txt", "metrics.json"):
                self.assertEqual((split_dir / name).read_bytes(),
                                 (self.tmp / "exp_b" / f"split_{k}" / name).read_bytes())
            self.assertEqual(load_run_config(split_dir / "effective_config.json").seed, 7 + k)
            self.assertEqual(load_corpus(split_dir / "train.txt").label_alphabet, ("L0", "L1"))

    def test_insufficient_data(self):
        data = self.tmp / "small_corpus"
        self.synth(data, "--n-train", 5, "--n-test", 1, "--seed", 3)
        result = self.invoke("experiment", "--data", data / "train.txt", "--splits", 2,
                             "--train-size", 4, "--test-size", 2, "--out", self.tmp / "exp_small")
        self.assertEqual(result.exit_code, 3)
        self.assertIn("[insufficient-data]", result.output)


class TestHelp(CliTestCase):

    def test_sections(self):
        result = self.ok("help", "--list-sections")
        self.assertIn("data_format", result.output)
        self.assertIn("SAMPLING SETTINGS", self.ok("help", "--section", "sampling").output)
        self.assertIn("kernels", self.ok("help", "--search", "gamma").output)
        self.assertEqual(self.invoke("help", "--section", "nope").exit_code, 1)


if __name__ == "__main__":
    unittest.main()
