"""End-to-end checks of the coverage-pilot binary.

Usage: test_cli.py <path to coverage-pilot> <schema directory>
"""

import filecmp
import json
import os
import signal
import socket
import subprocess
import sys
import tempfile
import time
import unittest
import urllib.error
import urllib.request
from pathlib import Path

BINARY = None
SCHEMAS = None

try:
    import jsonschema
except ImportError:  # schema checks are skipped without it
    jsonschema = None


def run(*args, env=None, cwd=None, timeout=300):
    full_env = {k: v for k, v in os.environ.items() if not k.startswith("COVERAGE_PILOT_")}
    full_env.update(env or {})
    return subprocess.run([BINARY, *map(str, args)], capture_output=True, text=True,
                          env=full_env, cwd=cwd, timeout=timeout)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def http(method, url, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def wait_until(pred, budget=20.0):
    deadline = time.monotonic() + budget
    while time.monotonic() < deadline:
        try:
            if pred():
                return True
        except (OSError, urllib.error.URLError):
            pass
        time.sleep(0.05)
    return False


def same_tree(a, b):
    names_a = sorted(p.name for p in Path(a).iterdir())
    names_b = sorted(p.name for p in Path(b).iterdir())
    if names_a != names_b:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, names_a, shallow=False)
    return not mismatch and not errors


class Workdir(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory(prefix="cpilot-cli-")
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def schema(self, name):
        if jsonschema is None:
            self.skipTest("jsonschema not installed")
        return json.loads((Path(SCHEMAS) / name).read_text())

    def conforms(self, instance, name):
        jsonschema.validate(instance, self.schema(name))


class Simulate(Workdir):
    def test_empty_3x3_reports_full_coverage(self):
        r = run("simulate", "--width", 3, "--height", 3, "--density", 0, "--no-timing")
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertRegex(r.stdout, r"CR\s+100\.0")
        self.assertIn("complete", r.stdout)

    def test_same_seed_gives_identical_output_and_replay(self):
        outs = []
        for name in ("a", "b"):
            replay = self.tmp / f"{name}.jsonl"
            r = run("simulate", "--seed", 4, "--density", 0.15, "--replay-out", replay, "--no-timing",
                    "--format", "json")
            self.assertEqual(r.returncode, 0, r.stderr)
            outs.append((r.stdout, replay.read_bytes()))
        self.assertEqual(outs[0], outs[1])
        self.assertGreater(len(outs[0][1]), 0)
        other = run("simulate", "--seed", 5, "--density", 0.15, "--no-timing", "--format", "json")
        self.assertNotEqual(other.stdout, outs[0][0])

    def test_replay_lines_match_the_schema(self):
        replay = self.tmp / "r.jsonl"
        run("simulate", "--seed", 1, "--replay-out", replay, "--no-timing")
        schema = self.schema("replay-record.schema.json")
        lines = replay.read_text().splitlines()
        self.assertGreater(len(lines), 1)
        for line in lines:
            jsonschema.validate(json.loads(line), schema)

    def test_disconnected_map_fails_and_names_the_cells(self):
        path = self.tmp / "walled.json"
        path.write_text(json.dumps({"width": 4, "height": 3, "start": [0, 0],
                                    "obstacles": [[0, 2], [1, 2], [2, 2]]}))
        r = run("simulate", "--map", path)
        self.assertNotEqual(r.returncode, 0)
        self.assertIn("(0, 3)", r.stderr)
        self.assertIn("unreachable", r.stderr.lower())

    def test_config_file_sits_between_defaults_and_flags(self):
        config = self.tmp / "run.toml"
        config.write_text("[simulate]\nwidth = 3\nheight = 3\ndensity = 0.0\n")

        def steps(*extra):
            r = run("--config", config, "simulate", "--no-timing", "--format", "json", *extra)
            self.assertEqual(r.returncode, 0, r.stderr)
            return json.loads(r.stdout)["steps"]

        self.assertEqual(steps(), 8)
        self.assertEqual(steps("--width", 4, "--height", 4), 15)
        default = run("simulate", "--no-timing", "--format", "json", "--density", 0.0)
        self.assertEqual(json.loads(default.stdout)["steps"], 99)

    def test_bad_flags_are_configuration_errors(self):
        self.assertEqual(run("simulate", "--width", 0).returncode, 2)
        self.assertEqual(run("simulate", "--planner", "genetic").returncode, 2)
        self.assertEqual(run("simulate", "--no-such-flag").returncode, 2)
        self.assertEqual(run("--config", self.tmp / "missing.toml", "simulate").returncode, 2)

    def test_remote_backend_without_credentials_is_a_configuration_error(self):
        for command in (["simulate"], ["collect", "--out", self.tmp / "d"]):
            start = time.monotonic()
            r = run(*command, "--backend", "remote")
            self.assertEqual(r.returncode, 2)
            self.assertIn("COVERAGE_PILOT_API_KEY", r.stderr)
            self.assertLess(time.monotonic() - start, 5.0)


class Collect(Workdir):
    def collect(self, out, *extra, cwd=None):
        return run("collect", "--episodes", 3, "--width", 6, "--height", 6, "--rollouts", 3, "--seed", 9,
                   "--out", out, *extra, cwd=cwd)

    def test_three_episodes_validate(self):
        r = self.collect(self.tmp / "d")
        self.assertEqual(r.returncode, 0, r.stderr)
        v = run("validate", self.tmp / "d", "--format", "json")
        self.assertEqual(v.returncode, 0, v.stdout)
        report = json.loads(v.stdout)
        self.assertEqual(report["records"], 3)
        self.assertEqual(report["passed"], 3)

    def test_same_seed_gives_identical_files(self):
        a, b = self.tmp / "a", self.tmp / "b"
        a.mkdir()
        b.mkdir()
        ra, rb = self.collect("out", cwd=a), self.collect("out", "--jobs", 2, cwd=b)
        self.assertEqual(ra.returncode, 0, ra.stderr)
        self.assertEqual(ra.stdout, rb.stdout)
        self.assertTrue(same_tree(a / "out", b / "out"))

    def test_outputs_match_the_schemas(self):
        out = self.tmp / "d"
        self.collect(out)
        manifest = json.loads((out / "dataset.manifest.json").read_text())
        self.conforms(manifest, "dataset-manifest.schema.json")
        record_schema = self.schema("dataset-record.schema.json")
        for shard in out.glob("dataset.*.train"):
            for line in shard.read_text().splitlines():
                jsonschema.validate(json.loads(line), record_schema)

    def test_killed_run_leaves_valid_shards(self):
        out = self.tmp / "big"
        env = {k: v for k, v in os.environ.items() if not k.startswith("COVERAGE_PILOT_")}
        proc = subprocess.Popen([BINARY, "collect", "--episodes", "400", "--shard-size", "3",
                                 "--train-ratio", "1.0", "--out", str(out), "--seed", "2"],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env=env)
        try:
            self.assertTrue(wait_until(lambda: (out / "dataset.0001.train").exists(), 120))
        finally:
            proc.send_signal(signal.SIGKILL)
            proc.wait()
        v = run("validate", out, "--format", "json")
        report = json.loads(v.stdout)
        self.assertEqual(v.returncode, 0, v.stdout)
        self.assertGreaterEqual(report["records"], 3)
        self.assertEqual(report["passed"], report["records"])
        self.assertFalse(report["manifest_complete"])

    def test_tampered_dataset_fails_validation(self):
        out = self.tmp / "d"
        self.collect(out, "--train-ratio", "1.0")
        shard = next(out.glob("dataset.0000.*"))
        lines = shard.read_text().splitlines()
        record = json.loads(lines[0])
        record["score"] += 0.25
        lines[0] = json.dumps(record)
        shard.write_text("\n".join(lines) + "\n")
        v = run("validate", out)
        self.assertEqual(v.returncode, 1)
        self.assertIn("score", v.stdout)


class Bench(Workdir):
    ARGS = ("bench", "--trials", 3, "--width", 6, "--height", 6, "--rollouts", 2, "--seed", 3, "--no-timing")

    def test_reruns_are_byte_identical(self):
        a, b = self.tmp / "a", self.tmp / "b"
        ra = run(*self.ARGS, "--out", a)
        rb = run(*self.ARGS, "--out", b, "--jobs", 3)
        self.assertEqual(ra.returncode, 0, ra.stderr)
        self.assertEqual(ra.stdout, rb.stdout)
        for ext in (".txt", ".csv", ".json", ".trials.jsonl"):
            self.assertEqual(Path(str(a) + ext).read_bytes(), Path(str(b) + ext).read_bytes(), ext)

    def test_table_shape(self):
        r = run(*self.ARGS, "--out", self.tmp / "t")
        csv = (self.tmp / "t.csv").read_text().splitlines()
        self.assertEqual(len(csv), 7)
        self.assertTrue(csv[0].startswith("tier,density,planner,trials,cr_mean"))
        self.assertEqual(len([l for l in r.stdout.splitlines() if "±" in l]), 6)
        schema = self.schema("bench-trial.schema.json")
        trials = (self.tmp / "t.trials.jsonl").read_text().splitlines()
        self.assertEqual(len(trials), 18)
        for line in trials:
            jsonschema.validate(json.loads(line), schema)


class Serve(Workdir):
    def start(self, port, *extra):
        env = {k: v for k, v in os.environ.items() if not k.startswith("COVERAGE_PILOT_")}
        proc = subprocess.Popen([BINARY, "serve", "--addr", f"127.0.0.1:{port}",
                                 "--checkpoint-dir", str(self.tmp / "ckpt"), *extra],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env=env)
        self.addCleanup(lambda: (proc.poll() is None and proc.kill(), proc.wait()))
        ok = wait_until(lambda: http("GET", f"http://127.0.0.1:{port}/")[0] == 200)
        self.assertTrue(ok, "service did not come up")
        return proc

    def test_probe_start_and_sigterm_checkpoint(self):
        port = free_port()
        proc = self.start(port, "--step-interval-ms", "50")
        base = f"http://127.0.0.1:{port}"
        status, meta = http("GET", base + "/")
        self.assertEqual(status, 200)
        self.assertEqual(meta["service"], "coverage-pilot")
        self.conforms(meta, "metadata.schema.json")

        request = {"generate": {"width": 8, "height": 8, "density": 0.1, "seed": 2},
                   "planner": "single-shot", "instruction": "complete coverage"}
        self.conforms(request, "start-request.schema.json")
        status, started = http("POST", base + "/missions", request)
        self.assertEqual(status, 201, started)
        self.conforms(started, "start-response.schema.json")
        mid = started["id"]

        status, err = http("POST", base + "/missions", {"generate": {"width": 0}})
        self.assertEqual(status, 400)
        self.conforms(err, "error.schema.json")

        self.assertTrue(wait_until(lambda: http("GET", f"{base}/missions/{mid}/state")[1]["step"] >= 3))
        status, snap = http("GET", f"{base}/missions/{mid}/state")
        self.conforms(snap, "snapshot.schema.json")
        status, ack = http("POST", f"{base}/missions/{mid}/instruction", {"text": "search the top-right"})
        self.assertEqual(status, 202)
        self.conforms(ack, "instruction-ack.schema.json")
        status, ack = http("POST", f"{base}/missions/{mid}/control", {"command": "resume"})
        self.conforms(ack, "control-ack.schema.json")

        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=20)
        self.assertEqual(proc.returncode, 0)
        checkpoint = self.tmp / "ckpt" / f"{mid}.replay.jsonl"
        self.assertTrue(checkpoint.exists())
        self.assertGreaterEqual(len(checkpoint.read_text().splitlines()), 4)

    def test_occupied_port_is_a_clear_error(self):
        with socket.socket() as holder:
            holder.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            holder.bind(("127.0.0.1", 0))
            holder.listen()
            port = holder.getsockname()[1]
            r = run("serve", "--addr", f"127.0.0.1:{port}", "--checkpoint-dir", self.tmp / "c", timeout=20)
        self.assertEqual(r.returncode, 2)
        self.assertIn(str(port), r.stderr)
        self.assertIn("in use", r.stderr)

    def test_listen_address_from_environment(self):
        port = free_port()
        env = {k: v for k, v in os.environ.items() if not k.startswith("COVERAGE_PILOT_")}
        env["COVERAGE_PILOT_ADDR"] = f"127.0.0.1:{port}"
        proc = subprocess.Popen([BINARY, "serve", "--checkpoint-dir", str(self.tmp / "c")],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env=env)
        try:
            self.assertTrue(wait_until(lambda: http("GET", f"http://127.0.0.1:{port}/")[0] == 200))
        finally:
            proc.send_signal(signal.SIGTERM)
            proc.wait(timeout=20)
        self.assertEqual(proc.returncode, 0)


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit("usage: test_cli.py <coverage-pilot binary> <schema dir>")
    BINARY = os.path.abspath(sys.argv[1])
    SCHEMAS = os.path.abspath(sys.argv[2])
    unittest.main(argv=[sys.argv[0], *sys.argv[3:]], verbosity=2)
