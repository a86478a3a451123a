import contextlib
import csv
import io
import json
import os
import tempfile
import unittest
from unittest import mock

import main

SMALL_CONFIG = """\
session:
  signals: 3000
  test_sample: 300
  seed: 4
channel:
  qber: {qber}
"""


def run_cli(*argv: str):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main.main(list(argv))
    return code, out.getvalue(), err.getvalue()


class CliTest(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory(prefix="synforge-cli-")
        self.tmp = self._tmp.name

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def _config(self, qber: float = 0.02, name: str = "synforge.yaml") -> str:
        path = os.path.join(self.tmp, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(SMALL_CONFIG.format(qber=qber))
        return path

    def _write(self, name: str, text: str) -> str:
        path = os.path.join(self.tmp, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def _run(self, out_name: str = "run", *extra: str):
        out = os.path.join(self.tmp, out_name)
        code, stdout, stderr = run_cli("run", "-c", self._config(), "-o", out, *extra)
        return code, out, stdout, stderr

    def test_threshold(self) -> None:
        code, stdout, _ = run_cli("threshold")
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("p* = 0.110", stdout)

    def test_run_writes_outputs(self) -> None:
        code, out, stdout, _ = self._run()
        self.assertEqual(code, main.EXIT_OK)
        for name in ("report.json", "transcript.jsonl", "state.json", "history.log"):
            self.assertTrue(os.path.exists(os.path.join(out, name)), msg=name)
        with open(os.path.join(out, "report.json"), "r") as f:
            report = json.load(f)
        self.assertEqual(report["seed"], 4)
        self.assertIn("keys_equal", stdout)
        with open(os.path.join(out, "state.json"), "r") as f:
            self.assertEqual(json.load(f)["status"], "complete")

    def test_outputs_are_byte_identical_across_runs(self) -> None:
        _, first, _, _ = self._run("a")
        _, second, _, _ = self._run("b")
        for name in ("report.json", "transcript.jsonl"):
            with open(os.path.join(first, name), "rb") as fa, open(os.path.join(second, name), "rb") as fb:
                self.assertEqual(fa.read(), fb.read(), msg=name)

    def test_seed_precedence(self) -> None:
        with mock.patch.dict(os.environ, {"SYNFORGE_SEED": "9"}):
            _, out, _, _ = self._run("env")
            _, cli_out, _, _ = self._run("cli", "--seed", "12")
        with open(os.path.join(out, "report.json")) as f:
            self.assertEqual(json.load(f)["seed"], 9)
        with open(os.path.join(cli_out, "report.json")) as f:
            self.assertEqual(json.load(f)["seed"], 12)

    def test_abort_exit_code(self) -> None:
        out = os.path.join(self.tmp, "abort")
        code, _, stderr = run_cli("run", "-c", self._config(0.2, "noisy.yaml"), "-o", out)
        self.assertEqual(code, main.EXIT_ABORT)
        self.assertIn("sampling", stderr)
        self.assertTrue(os.path.exists(os.path.join(out, "report.json")))

    def test_usage_errors(self) -> None:
        code, _, stderr = run_cli("run", "-c", os.path.join(self.tmp, "missing.yaml"), "-o", self.tmp)
        self.assertEqual(code, main.EXIT_USAGE)
        self.assertIn("missing.yaml", stderr)
        self.assertEqual(run_cli()[0], main.EXIT_USAGE)
        self.assertEqual(run_cli("sweep", "-c", self._config(), "--qber", "0.1:0.05", "--seeds", "1")[0], main.EXIT_USAGE)

    def test_audit_clean_duplicate_and_truncated(self) -> None:
        _, out, _, _ = self._run()
        path = os.path.join(out, "transcript.jsonl")
        code, stdout, _ = run_cli("audit", "-f", path)
        self.assertEqual(code, main.EXIT_OK, stdout)
        self.assertIn("replay: identical", stdout)

        with open(path, "r") as f:
            lines = f.read().splitlines()
        records = [json.loads(line) for line in lines]
        parity = [i for i, r in enumerate(records) if r["kind"] == "parity"]
        records[parity[1]]["pad_index"] = records[parity[0]]["pad_index"]
        dup = self._write("dup.jsonl", "".join(json.dumps(r) + "\n" for r in records))
        code, stdout, _ = run_cli("audit", "-f", dup)
        self.assertEqual(code, main.EXIT_AUDIT)
        self.assertIn("duplicate pad index", stdout)

        cut = self._write("cut.jsonl", "\n".join(lines[:-1]) + "\n")
        code, _, stderr = run_cli("audit", "-f", cut)
        self.assertEqual(code, main.EXIT_USAGE)
        self.assertIn("truncated", stderr)

    def test_analyze_operator_files(self) -> None:
        code, stdout, _ = run_cli("analyze", "-f", self._write("pair.txt", "ZI\nXI\n"))
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("r = 1", stdout)
        code, stdout, _ = run_cli("analyze", "-f", self._write("chain.txt", "IIZ\nXIX\nZZI\n"), "--json")
        self.assertEqual(json.loads(stdout)["noncommuting_set"]["r"], 2)
        code, _, stderr = run_cli("analyze", "-f", self._write("mixed.txt", "Y\n"))
        self.assertEqual(code, main.EXIT_USAGE)
        self.assertIn("mixes X and Z", stderr)

    def test_analyze_transcript(self) -> None:
        _, out, _, _ = self._run()
        code, stdout, _ = run_cli("analyze", "-f", os.path.join(out, "transcript.jsonl"), "--json")
        self.assertEqual(code, main.EXIT_OK)
        data = json.loads(stdout)
        self.assertTrue(data["css_like"])
        self.assertTrue(data["conditional_on_z_only"])

    def test_sweep_writes_csv(self) -> None:
        out = os.path.join(self.tmp, "sweep")
        code, stdout, _ = run_cli(
            "sweep", "-c", self._config(), "--qber", "0.02:0.04:0.02", "--seeds", "2", "-o", out, "--workers", "2"
        )
        self.assertEqual(code, main.EXIT_OK)
        with open(os.path.join(out, "sweep.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 4)
        self.assertEqual(sorted({r["qber"] for r in rows}), ["0.02", "0.04"])
        self.assertEqual([r["seed"] for r in rows[:2]], ["4", "5"])
        self.assertIn("mean_net_rate", stdout)

    def test_parse_grid(self) -> None:
        self.assertEqual(main.parse_grid("0.01:0.03:0.01"), [0.01, 0.02, 0.03])
        with self.assertRaises(ValueError):
            main.parse_grid("0.4:0.6:0.1")


if __name__ == "__main__":
    unittest.main()
