import json
import subprocess
import sys

import pytest

from vse_attest.cli import build_parser, main

CLI = [sys.executable, "-m", "vse_attest"]


def run(*args, cwd, check=True):
    proc = subprocess.run(CLI + [str(a) for a in args], cwd=cwd, capture_output=True, text=True, timeout=60)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}: {proc.stderr}")
    return proc


class Broker:
    def __init__(self, cwd, config="cop.json", registry="reg.txt"):
        self.proc = subprocess.Popen(
            CLI + ["run-broker", "--json", "--registry", registry, "--coproc-config", config,
                   "--shim-listen", "127.0.0.1:0", "--admin-listen", "127.0.0.1:0"],
            cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        )
        line = self.proc.stdout.readline()
        if not line:
            raise AssertionError(self.proc.stderr.read())
        self.endpoints = json.loads(line)

    def stop(self):
        self.proc.terminate()
        self.proc.wait(timeout=10)
        return self.proc.returncode


@pytest.fixture
def provisioned(tmp_path):
    run("ca-init", "--out", "ca", cwd=tmp_path)
    (tmp_path / "admin.cred").write_bytes(b"admin secret")
    run("cred-add", "--registry", "reg.txt", "--credential-file", "crtm.cred", "--generate",
        "--label", "host", cwd=tmp_path)
    run("coproc-keygen", "--ca", "ca", "--out", "cop.json", "--freshness", "--random-init",
        "--admin-credential-file", "admin.cred", cwd=tmp_path)
    for name in ("fw", "bl", "kernel"):
        (tmp_path / f"{name}.bin").write_bytes(name.encode() * 10)
    broker = Broker(tmp_path)
    yield tmp_path, broker
    broker.stop()


def test_quickstart(provisioned):
    cwd, broker = provisioned
    boot = run("client-boot", "--json", "--broker", broker.endpoints["broker"], "--credential-file", "crtm.cred",
               "--state", "st", "--layer", "0:fw.bin", "--layer", "1:bl.bin", "--layer", "2:kernel.bin:kernel",
               cwd=cwd)
    info = json.loads(boot.stdout)
    assert info["log_entries"] == 4 and info["random_init"]
    for name in ("sealed.bin", "eventlog.txt", "ek.cert", "coproc.cert", "root.cert", "random_init.hex", "shim.txt"):
        assert (cwd / "st" / name).exists()

    ext = json.loads(run("client-extend", "--json", "--state", "st", "--pcr", "5", "--file", "kernel.bin",
                         cwd=cwd).stdout)
    assert ext["counter"] == 4
    values = json.loads(run("client-read", "--json", "--state", "st", "--pcrs", "0,5", cwd=cwd).stdout)
    assert set(values) == {"0", "5"}

    nonce = "ab" * 32
    run("client-quote", "--state", "st", "--nonce", nonce, "--out", "q.bin", cwd=cwd)
    ok = run("verify", "--json", "--quote", "q.bin", "--nonce", nonce, "--trust", "ca/root.cert",
             "--state", "st", "--expected-seed", info["seed"], cwd=cwd)
    verdict = json.loads(ok.stdout)
    assert verdict["accepted"] and verdict["seed"] == info["seed"]

    q = bytearray((cwd / "q.bin").read_bytes())
    q[90] ^= 1
    (cwd / "bad.bin").write_bytes(bytes(q))
    bad = run("verify", "--json", "--quote", "bad.bin", "--nonce", nonce, "--trust", "ca/root.cert",
              "--state", "st", cwd=cwd, check=False)
    assert bad.returncode == 1
    assert not json.loads(bad.stdout)["accepted"]

    wrong = run("verify", "--quote", "q.bin", "--nonce", "cd" * 32, "--trust", "ca/root.cert",
                "--state", "st", cwd=cwd, check=False)
    assert wrong.returncode == 1


def test_admin_distribute(provisioned):
    cwd, first = provisioned
    run("coproc-keygen", "--ca", "ca", "--out", "cop2.json", "--id", "2", "--admin-credential-file", "admin.cred",
        cwd=cwd)
    second = Broker(cwd, config="cop2.json")
    try:
        out = run("admin-distribute", "--json", "--origin", first.endpoints["admin"],
                  "--target", second.endpoints["admin"], "--admin-credential-file", "admin.cred", cwd=cwd)
        assert json.loads(out.stdout)["key_id"] > 0
        wrong = run("admin-distribute", "--origin", first.endpoints["admin"], "--target",
                    second.endpoints["admin"], "--admin-credential-file", "crtm.cred", cwd=cwd, check=False)
        assert wrong.returncode == 2 and "AUTH_FAILED" in wrong.stderr
    finally:
        second.stop()


def test_run_broker_missing_registry(tmp_path):
    run("ca-init", "--out", "ca", cwd=tmp_path)
    run("coproc-keygen", "--ca", "ca", "--out", "cop.json", cwd=tmp_path)
    proc = run("run-broker", "--registry", "missing.txt", "--coproc-config", "cop.json", "--shim-listen",
               "127.0.0.1:0", cwd=tmp_path, check=False)
    assert proc.returncode == 2 and "missing.txt" in proc.stderr
    (tmp_path / "empty.txt").write_text("")
    proc = run("run-broker", "--registry", "empty.txt", "--coproc-config", "cop.json", "--shim-listen",
               "127.0.0.1:0", cwd=tmp_path, check=False)
    assert proc.returncode == 2


def test_setup_errors(tmp_path):
    run("ca-init", "--out", "ca", cwd=tmp_path)
    assert run("ca-init", "--out", "ca", cwd=tmp_path, check=False).returncode == 2
    assert main(["client-read", "--state", str(tmp_path / "nothing")]) == 2
    run("cred-add", "--registry", "r.txt", "--credential-file", "c", "--generate", cwd=tmp_path)
    dup = run("cred-add", "--registry", "r.txt", "--credential-file", "c", cwd=tmp_path, check=False)
    assert dup.returncode == 2 and "already registered" in dup.stderr
    bad = run("client-boot", "--broker", "127.0.0.1:1", "--credential-file", "c", "--state", "s",
              "--layer", "nonsense", cwd=tmp_path, check=False)
    assert bad.returncode == 2


def test_attack_json(tmp_path):
    out = run("attack", "tamper", "--json", cwd=tmp_path)
    report = json.loads(out.stdout)
    assert report["error_code"] == "BAD_HMAC" and report["detected"]
    table = run("attack", "replay", cwd=tmp_path).stdout.splitlines()
    assert len(table) == 3 and "COUNTER_MISMATCH" in table[0]


def test_bench_local(capsys):
    assert main(["bench", "extend", "--json", "--rate", "200", "--duration", "0.5", "--connections", "2"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["op"] == "extend" and stats["errors"] == 0
    assert main(["bench", "spawn", "--json", "--count", "40"]) == 0
    spawn = json.loads(capsys.readouterr().out)
    assert spawn["count"] == 40 and len(spawn["checkpoints"]) == 10 and "linear_r2" in spawn


def test_bench_against_broker(provisioned, capsys):
    cwd, broker = provisioned
    assert main(["bench", "quote", "--json", "--broker", broker.endpoints["broker"], "--credential-file",
                 str(cwd / "crtm.cred"), "--rate", "100", "--duration", "0.5", "--connections", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["errors"] == 0


def test_help_lists_every_command(capsys):
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["--help"])
    text = capsys.readouterr().out
    for cmd in ("ca-init", "coproc-keygen", "cred-add", "run-broker", "run-shim", "client-boot",
                "client-extend", "client-read", "client-quote", "verify", "attack", "bench"):
        assert cmd in text


def test_run_shim_prints_endpoint(provisioned):
    cwd, _ = provisioned
    proc = subprocess.Popen(CLI + ["run-shim", "--json", "--coproc-config", "cop.json"], cwd=cwd,
                            stdout=subprocess.PIPE, text=True)
    try:
        endpoint = json.loads(proc.stdout.readline())["shim"]
        from vse_attest.shim import ShimClient
        from vse_attest.transport import Connection
        assert ShimClient(Connection(endpoint)).caps().freshness_mode
    finally:
        proc.terminate()
        proc.wait(timeout=10)
