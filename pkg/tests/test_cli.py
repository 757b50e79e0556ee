#
# test_cli.py
#
# End-to-end tests of the streamant command line
#
import csv
import io
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np

import streamant as sa
from streamant.cli import main


def run_cli(*argv):
    """run the command line, returning (exit status, stdout, stderr)"""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        status = main([str(a) for a in argv])
    return status, out.getvalue(), err.getvalue()


class CliTestCase(unittest.TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)
        lines = ["video_id,start_s,stop_s,verb_id,noun_id"]
        for i in range(30):
            video = "P01" if i < 15 else "P02"
            start = 5 + 3 * (i % 15)
            lines.append(f"{video},{start},{start + 1},{i % 4},{(i * 7) % 5}")
        self.annotations = self.write("ann.csv", "\n".join(lines) + "\n")

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def assertExit(self, expected, result):
        status, out, err = result
        self.assertEqual(expected, status, msg=f"stdout:\n{out}\nstderr:\n{err}")
        return out


class TestUsage(CliTestCase):
    def testUsageErrors(self):
        for argv in (
            [],
            ["frobnicate"],
            ["verify-schedule", "--bogus"],
            ["verify-schedule", "--cases", "-1"],
            ["eval-offline", "--annotations", self.annotations],
            ["eval-offline", "--annotations", self.annotations, "--stub", "oracle", "--dump", "x.tsv"],
        ):
            with self.subTest(argv=argv):
                self.assertExit(1, run_cli(*argv))

    def testMissingTiming(self):
        status, _, err = run_cli("eval-offline", "--annotations", self.annotations, "--stub", "oracle")
        self.assertEqual(1, status)
        self.assertIn("no timing given", err)


class TestVerifySchedule(CliTestCase):
    def testPasses(self):
        out = self.assertExit(0, run_cli("verify-schedule", "--cases", 200, "--multiples", 20, "--seed", 7))
        self.assertEqual("200/200 exact\n20/20 exact-multiple\n", out)

    def testGlobalFlagBeforeCommand(self):
        out = self.assertExit(0, run_cli("--seed", 7, "verify-schedule", "--cases", 50, "--multiples", 5))
        self.assertIn("50/50 exact", out)


class TestEvaluate(CliTestCase):
    def testStreamingOracleWithFastRuntime(self):
        profile = self.write("profile.csv", "oracle,1,2,1\n")
        results = self.dir / "results.csv"
        out = self.assertExit(
            0,
            run_cli(
                "eval-streaming", "--annotations", self.annotations, "--profile", profile,
                "--stub", "oracle", "--csv", results,
            ),
        )
        self.assertIn("streaming evaluation", out)
        self.assertIn("fallback predictions: 0", out)
        with open(results, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(6, len(rows))
        self.assertEqual({"100.0"}, {row["value"] for row in rows})
        self.assertEqual({"1000"}, {row["runtime_ticks"] for row in rows})

    def testOfflineWithConfigTiming(self):
        config = self.write(
            "streamant.ini",
            "[timing]\nobservation_s = 2\nanticipation_s = 1\nruntime_ms = 500\n[eval]\nseed = 3\n",
        )
        report = self.dir / "report.txt"
        out = self.assertExit(
            0,
            run_cli(
                "eval-offline", "--annotations", self.annotations, "--config", config,
                "--stub", "uniform-random", "--report", report,
            ),
        )
        self.assertEqual("", out)
        text = report.read_text(encoding="utf-8")
        self.assertIn("offline evaluation", text)
        self.assertIn("seed: 3", text)

    def testDumpReplay(self):
        lines = []
        for video in ("P01", "P02"):
            lines.append(f"{video}\t0\t1:0.5")
            for i in range(15):
                end = (5 + 3 * i - 1) * 1_000_000
                lines.append(f"{video}\t{end}\t0:0.9")
        dump = self.write("dump.tsv", "\n".join(lines) + "\n")
        profile = self.write("profile.csv", "dumped,100,2,1\n")
        self.assertExit(
            0,
            run_cli("eval-offline", "--annotations", self.annotations, "--profile", profile, "--dump", dump),
        )
        # streaming windows end off the grid of the dump rows
        self.assertExit(
            2,
            run_cli("eval-streaming", "--annotations", self.annotations, "--profile", profile, "--dump", dump),
        )
        self.assertExit(
            0,
            run_cli(
                "eval-streaming", "--annotations", self.annotations, "--profile", profile,
                "--dump", dump, "--sparse-dump",
            ),
        )

    def testMalformedAnnotations(self):
        bad = self.write("bad.csv", "video_id,start_s,stop_s,verb_id,noun_id\nP01,x,2,0,0\n")
        profile = self.write("profile.csv", "oracle,1,2,1\n")
        status, _, err = run_cli("eval-offline", "--annotations", bad, "--profile", profile, "--stub", "oracle")
        self.assertEqual(2, status)
        self.assertIn("line:2", err)

    def testBadConfig(self):
        config = self.write("bad.ini", "[timing]\nobservation = 2\n")
        self.assertExit(
            2,
            run_cli("eval-offline", "--annotations", self.annotations, "--config", config, "--stub", "oracle"),
        )

    def testMissingFiles(self):
        profile = self.write("profile.csv", "oracle,1,2,1\n")
        missing = self.dir / "nowhere" / "missing.csv"
        for argv in (
            ["eval-offline", "--annotations", missing, "--profile", profile, "--stub", "oracle"],
            ["eval-streaming", "--annotations", self.annotations, "--profile", missing, "--stub", "oracle"],
            ["verify-schedule", "--config", missing, "--cases", 1],
            ["simulate", "--profile", profile, "--horizon-s", 5, "-o", missing],
        ):
            with self.subTest(argv=argv):
                status, _, err = run_cli(*argv)
                self.assertEqual(2, status, msg=err)
                self.assertIn("DataFormatError: ", err)
                self.assertIn(str(missing), err)

    def testBadStub(self):
        profile = self.write("profile.csv", "oracle,1,2,1\n")
        self.assertExit(
            2,
            run_cli("eval-offline", "--annotations", self.annotations, "--profile", profile, "--stub", "magic"),
        )


class TestCompare(CliTestCase):
    def testRuntimeAwareRanking(self):
        profiles = self.write(
            "profiles.csv",
            "method,runtime_ms,observation_time_s,anticipation_time_s\n"
            "fast,25,2,1\n"
            "slow,725,2,1\n",
        )
        results = self.dir / "results.csv"
        plot = self.dir / "plot.csv"
        out = self.assertExit(
            0,
            run_cli(
                "compare", "--annotations", self.annotations, "--profiles", profiles,
                "--stub", "oracle(curve=0:1,1:0)", "--csv", results, "--plot-data", plot,
            ),
        )
        self.assertIn("runtime-aware comparison", out)
        with open(results, newline="", encoding="utf-8") as f:
            cells = {
                (row["method"], row["mode"], row["task"], row["measure"]): float(row["value"])
                for row in csv.DictReader(f)
            }
        self.assertEqual(2 * 2 * 6, len(cells))
        for task in sa.TASKS:
            for measure in sa.MEASURES:
                self.assertEqual(
                    cells["fast", "offline", task, measure], cells["slow", "offline", task, measure]
                )
        self.assertLessEqual(
            cells["slow", "streaming", "action", "mean_topk_recall"],
            cells["fast", "streaming", "action", "mean_topk_recall"],
        )
        self.assertEqual(5, len(plot.read_text(encoding="utf-8").splitlines()))


class TestSimulate(CliTestCase):
    def testTimingOnlyTrace(self):
        profile = self.write("profile.csv", "rulstm,725,2.75,1\n")
        trace = self.dir / "trace.csv"
        out = self.assertExit(
            0, run_cli("simulate", "--profile", profile, "--horizon-s", 10, "-o", trace)
        )
        self.assertEqual(f"10 records up to 10000000 written to {trace}\n", out)
        records = sa.read_trace(trace)
        self.assertEqual(10, len(records))
        self.assertEqual(10_000_000, records[-1].available_at)

    def testTraceFromAnnotations(self):
        profile = self.write("profile.csv", "rulstm,725,2.75,1\n")
        trace = self.dir / "trace.csv"
        self.assertExit(
            0,
            run_cli(
                "simulate", "--profile", profile, "--annotations", self.annotations,
                "--video", "P02", "--stub", "oracle", "-o", trace,
            ),
        )
        records = sa.read_trace(trace)
        # last P02 segment starts at 47s, so its deadline is 46s
        self.assertLessEqual(records[-1].available_at, 46_000_000)
        self.assertExit(
            1,
            run_cli("simulate", "--profile", profile, "--annotations", self.annotations, "--video", "P09", "-o", trace),
        )

    def testNeedsHorizon(self):
        profile = self.write("profile.csv", "rulstm,725,2.75,1\n")
        self.assertExit(1, run_cli("simulate", "--profile", profile, "-o", self.dir / "trace.csv"))


TOY_INI = (
    "[toy]\n"
    "n_unlabeled = 40\n"
    "n_recognition = 60\n"
    "n_validation = 10\n"
    "n_test = 20\n"
    "epochs = 2\n"
    "teacher_epochs = 2\n"
    "teacher_floor = 0\n"
)


class TestDistillation(CliTestCase):
    def testGradCheck(self):
        out = self.assertExit(0, run_cli("grad-check", "--cases", 3))
        self.assertIn("toy_encoder", out)
        self.assertTrue(out.endswith("all gradients match\n"))

    def testDistillDemo(self):
        config = self.write("toy.ini", TOY_INI)
        table = self.dir / "demo.csv"
        curves = self.dir / "curves.csv"
        out = self.assertExit(
            0,
            run_cli(
                "distill-demo", "--config", config, "--seeds", 2, "--seed", 5,
                "--table", table, "--curves", curves,
            ),
        )
        self.assertIn("distilled >= plain on", out)
        self.assertIn("/2 seeds", out)
        lines = table.read_text(encoding="utf-8").splitlines()
        self.assertEqual(["5", "6"], [line.split(",")[0] for line in lines[1:]])
        # two modes, two seeds, two epochs each
        self.assertEqual(1 + 2 * 2 * 2, len(curves.read_text(encoding="utf-8").splitlines()))
        self.assertIn("feature loss: similarity", out)

    def testCheckpoints(self):
        config = self.write("toy.ini", TOY_INI)
        saved = self.dir / "ckpt" / "nested"
        self.assertExit(
            0, run_cli("distill-demo", "--config", config, "--seeds", 2, "--seed", 5, "--checkpoints", saved)
        )
        self.assertEqual(
            ["distilled_seed5.sant", "distilled_seed6.sant", "plain_seed5.sant", "plain_seed6.sant"],
            sorted(p.name for p in saved.iterdir()),
        )
        toy = sa.load_config(config).toy
        demo = sa.run_demo(range(5, 7), toy)
        for runs in demo.runs.values():
            for run in runs:
                with self.subTest(checkpoint=run.checkpoint_name):
                    np.testing.assert_array_equal(
                        np.float32(run.encoder.params), sa.load_checkpoint(saved / run.checkpoint_name)
                    )
        # the same student can be rebuilt from its checkpoint
        restored = sa.ToyEncoder(toy, sa.load_checkpoint(saved / "distilled_seed6.sant"))
        np.testing.assert_allclose(demo.runs["distilled"][1].encoder.params, restored.params, rtol=1e-6)

        blocked = self.write("blocked", "")
        self.assertExit(
            2, run_cli("distill-demo", "--config", config, "--seeds", 1, "--checkpoints", blocked)
        )

    def testFeatureLossFlag(self):
        config = self.write("toy.ini", TOY_INI)
        table = self.dir / "demo.csv"
        out = self.assertExit(
            0,
            run_cli(
                "distill-demo", "--config", config, "--seeds", 1, "--seed", 5, "--loss", "gap_mse",
                "--table", table,
            ),
        )
        self.assertIn("feature loss: gap_mse", out)
        expected = sa.run_demo([5], sa.load_config(config).toy, loss="gap_mse")
        row = table.read_text(encoding="utf-8").splitlines()[1].split(",")
        self.assertEqual(repr(expected.runs["distilled"][0].accuracy), row[2])

        config = self.write("toy_mse.ini", TOY_INI + "loss = mse\n")
        out = self.assertExit(0, run_cli("distill-demo", "--config", config, "--seeds", 1))
        self.assertIn("feature loss: mse", out)
        # the flag wins over the config key
        out = self.assertExit(0, run_cli("distill-demo", "--config", config, "--seeds", 1, "--loss", "similarity"))
        self.assertIn("feature loss: similarity", out)

        self.assertExit(1, run_cli("distill-demo", "--config", config, "--loss", "cosine"))
        self.assertExit(2, run_cli("distill-demo", "--config", self.write("bad.ini", TOY_INI + "loss = l1\n")))


class TestReproducibility(CliTestCase):
    def run_all(self, out):
        """every output-writing command, with its files under ``out``"""
        out.mkdir()
        profile = self.write("profile.csv", "oracle,100,2,1\n")
        profiles = self.write(
            "profiles.csv",
            "method,runtime_ms,observation_time_s,anticipation_time_s\nfast,25,2,1\nslow,725,2,1\n",
        )
        config = self.write("toy.ini", TOY_INI)
        stub = "oracle(curve=0:1,1:0)"
        for argv in (
            ["eval-streaming", "--annotations", self.annotations, "--profile", profile, "--stub", stub,
             "--csv", out / "eval.csv", "--report", out / "eval.txt"],
            ["compare", "--annotations", self.annotations, "--profiles", profiles, "--stub", stub,
             "--csv", out / "compare.csv", "--plot-data", out / "plot.csv", "--report", out / "compare.txt"],
            ["simulate", "--profile", profile, "--annotations", self.annotations, "--stub", stub,
             "-o", out / "trace.csv"],
            ["distill-demo", "--config", config, "--seeds", 1, "--table", out / "demo.csv",
             "--curves", out / "curves.csv", "--report", out / "demo.txt", "--checkpoints", out / "ckpt"],
        ):
            self.assertExit(0, run_cli(*argv, "--seed", 11))
        return {
            p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()
        }

    def testRerunsAreByteIdentical(self):
        first = self.run_all(self.dir / "first")
        second = self.run_all(self.dir / "second")
        self.assertEqual(
            sorted(
                [
                    "eval.csv", "eval.txt", "compare.csv", "plot.csv", "compare.txt", "trace.csv",
                    "demo.csv", "curves.csv", "demo.txt",
                    "ckpt/distilled_seed11.sant", "ckpt/plain_seed11.sant",
                ]
            ),
            sorted(first),
        )
        for name, data in first.items():
            with self.subTest(output=name):
                self.assertTrue(data)
                self.assertEqual(data, second[name])


if __name__ == "__main__":
    unittest.main()
