"""Command-line entry points.

Files written by the commands:

    CA dir         root.key (hex Ed25519 seed), root.cert
    coproc config  JSON (see CoprocessorConfig.to_json)
    registry       ``hex(sha256(cred)) tech_class label`` per line
    client state   sealed.bin, eventlog.txt, ek.cert, coproc.cert, root.cert,
                   random_init.hex (random-init VSEs only), shim.txt

Exit codes: 0 success (``verify``: accepted), 1 verdict rejected, 2 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import bench, broker, crypto, shim
from .agent import BootLayer, Driver, EventLog, Mode, crtm_boot
from .attacks import SCENARIOS, VARIANTS, run_scenario
from .coprocessor import Coprocessor, CoprocessorConfig, Manufacturer
from .crypto import SigningKeyPair
from .errors import AttestError
from .pki import load_certificate, save_certificate
from .shim import ShimClient
from .stack import HIGH_CREDENTIAL, Stack
from .state import selection_from_indices
from .transport import Connection
from .verifier import AttestationPolicy, verify_quote

log = logging.getLogger("vse_attest")

EXIT_REJECTED = 1
EXIT_ERROR = 2


class CliError(Exception):
    pass


def _emit(args, obj) -> None:
    if args.json or not isinstance(obj, dict):
        print(json.dumps(obj, indent=None if args.json else 2))
    else:
        for k, v in obj.items():
            print(f"{k}: {v if not isinstance(v, (dict, list)) else json.dumps(v)}")
    sys.stdout.flush()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _pcr_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated PCR indices, got {text!r}") from None


def _hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not hex: {text!r}") from None


def _layer(text: str) -> BootLayer:
    """``PCR:PATH`` or ``PCR:PATH:NAME``."""
    parts = text.split(":", 2)
    if len(parts) < 2 or not parts[0].isdigit():
        raise argparse.ArgumentTypeError(f"layer must be PCR:PATH[:NAME], got {text!r}")
    path = Path(parts[1])
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise argparse.ArgumentTypeError(f"cannot read layer {path}: {exc.strerror}") from None
    return BootLayer(parts[2] if len(parts) > 2 else path.name, payload, int(parts[0]))


# -- setup -----------------------------------------------------------------

def cmd_ca_init(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    key_path = out / "root.key"
    if key_path.exists() and not args.force:
        raise CliError(f"{key_path} exists (use --force to replace)")
    m = Manufacturer()
    key_path.write_text(m.root_key.private.hex() + "\n")
    key_path.chmod(0o600)
    save_certificate(m.root_certificate, out / "root.cert")
    return {"root_public": m.root_public.hex(), "root_cert": str(out / "root.cert")}


def _load_manufacturer(ca_dir) -> Manufacturer:
    key = bytes.fromhex(Path(ca_dir, "root.key").read_text().strip())
    return Manufacturer(SigningKeyPair.from_private(key))


def cmd_coproc_keygen(args):
    m = _load_manufacturer(args.ca)
    admin = _read_bytes(args.admin_credential_file) if args.admin_credential_file else None
    config = m.provision(
        args.id,
        tech_classes=tuple(args.tech_class or (1,)),
        freshness_mode=args.freshness,
        random_init_mode=args.random_init,
        admin_credential=admin,
    )
    config.save(args.out)
    Path(args.out).chmod(0o600)
    return {
        "coprocessor_id": args.id,
        "config": args.out,
        "tech_classes": sorted(config.tech_signing_keys),
        "hmac_key_id": config.active_hmac_key.key_id,
    }


def cmd_cred_add(args):
    if args.generate:
        credential = crypto.random_bytes(32)
        Path(args.credential_file).write_bytes(credential)
        Path(args.credential_file).chmod(0o600)
    else:
        credential = _read_bytes(args.credential_file)
    if not credential:
        raise CliError("credential is empty")
    if Path(args.registry).exists():
        if crypto.sha256(credential) in broker.registry_load(args.registry):
            raise CliError("credential already registered")
    digest = broker.registry_add(args.registry, credential, args.tech_class, args.label)
    return {"registry": args.registry, "credential_hash": digest, "tech_class": args.tech_class}


# -- services --------------------------------------------------------------

def _wait_for_signal() -> None:
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    while not done.wait(0.5):
        pass


def _load_config(path) -> CoprocessorConfig:
    if not Path(path).exists():
        raise CliError(f"coprocessor config {path} not found")
    return CoprocessorConfig.load(path)


def cmd_run_shim(args):
    cop = Coprocessor(_load_config(args.coproc_config))
    server = shim.serve(cop, args.listen).start()
    _emit(args, {"shim": server.endpoint})
    try:
        _wait_for_signal()
    finally:
        server.stop()
    return None


def cmd_run_broker(args):
    if not Path(args.registry).exists():
        raise CliError(f"registry {args.registry} not found")
    registry = broker.registry_load(args.registry)
    if not registry:
        raise CliError(f"registry {args.registry} is empty")
    cop = Coprocessor(_load_config(args.coproc_config))
    servers = []
    shim_endpoint = args.shim_endpoint or ""
    if args.shim_listen:
        servers.append(shim.serve(cop, args.shim_listen).start())
        shim_endpoint = servers[-1].endpoint
    if not shim_endpoint:
        raise CliError("need --shim-listen or --shim-endpoint")
    try:
        servers.append(broker.serve(cop, args.listen, shim_endpoint=shim_endpoint, registry=registry).start())
        endpoints = {"broker": servers[-1].endpoint, "shim": shim_endpoint}
        if args.admin_listen:
            servers.append(broker.serve_admin(cop, args.admin_listen).start())
            endpoints["admin"] = servers[-1].endpoint
    except ValueError as exc:
        for s in servers:
            s.stop()
        raise CliError(str(exc)) from None
    _emit(args, endpoints)
    try:
        _wait_for_signal()
    finally:
        for s in servers:
            s.stop()
    return None


def cmd_admin_distribute(args):
    cred = _read_bytes(args.admin_credential_file)
    origin = broker.AdminClient(Connection(args.origin), cred)
    target = broker.AdminClient(Connection(args.target), cred)
    kid = broker.admin_distribute_hmac_key(origin, target, args.key_id)
    return {"key_id": kid}


# -- client ------------------------------------------------------------------

class ClientState:
    def __init__(self, directory):
        self.dir = Path(directory)

    def path(self, name) -> Path:
        return self.dir / name

    def save_boot(self, driver: Driver, log: EventLog, receipt, shim_endpoint: str) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        driver.custody.save(self.path("sealed.bin"))
        log.save(self.path("eventlog.txt"))
        save_certificate(receipt.ek_certificate, self.path("ek.cert"))
        save_certificate(receipt.coprocessor_certificate, self.path("coproc.cert"))
        save_certificate(receipt.root_certificate, self.path("root.cert"))
        rinit = self.path("random_init.hex")
        if receipt.random_init_value is not None:
            rinit.write_text(receipt.random_init_value.hex() + "\n")
        elif rinit.exists():
            rinit.unlink()
        self.path("shim.txt").write_text(shim_endpoint + "\n")

    def driver(self) -> Driver:
        if not self.path("sealed.bin").exists():
            raise CliError(f"no sealed state in {self.dir} (run client-boot first)")
        endpoint = self.path("shim.txt").read_text().strip()
        return Driver(
            _read_bytes(self.path("sealed.bin")),
            mode=Mode.SYNCHRONOUS,
            shim=ShimClient(Connection(endpoint)),
            log=EventLog.load(self.path("eventlog.txt")),
        )

    def commit(self, driver: Driver) -> None:
        tmp = self.path("sealed.bin.tmp")
        driver.custody.save(tmp)
        tmp.replace(self.path("sealed.bin"))
        driver.log.save(self.path("eventlog.txt"))

    def chain(self):
        return [load_certificate(self.path(n)) for n in ("root.cert", "coproc.cert", "ek.cert")]


def cmd_client_boot(args):
    credential = bytearray(_read_bytes(args.credential_file))
    driver, event_log, receipt = crtm_boot(args.broker, credential, args.layer or ())
    ClientState(args.state).save_boot(driver, event_log, receipt, driver.shim.transport.endpoint)
    state = driver.sealed.state()
    return {
        "state": args.state,
        "seed": state.seed.hex(),
        "tech_class": state.tech_class,
        "random_init": receipt.random_init_value.hex() if receipt.random_init_value else None,
        "log_entries": len(event_log),
    }


def cmd_client_extend(args):
    if (args.file is None) == (args.digest is None):
        raise CliError("give exactly one of --file or --digest")
    measurement = crypto.sha256(_read_bytes(args.file)) if args.file else args.digest
    st = ClientState(args.state)
    driver = st.driver()
    driver.extend(args.pcr, measurement, args.desc or (Path(args.file).name if args.file else ""))
    st.commit(driver)
    return {"pcr": args.pcr, "measurement": measurement.hex(), "counter": driver.sealed.state().counter}


def cmd_client_read(args):
    driver = ClientState(args.state).driver()
    values = driver.read(selection_from_indices(args.pcrs))
    return {str(i): v.hex() for i, v in values}


def cmd_client_quote(args):
    driver = ClientState(args.state).driver()
    nonce = args.nonce if args.nonce is not None else crypto.random_bytes(32)
    q = driver.get_quote(selection_from_indices(args.pcrs), nonce)
    Path(args.out).write_bytes(q.encode())
    return {"quote": args.out, "nonce": nonce.hex(), "digest": q.digest.hex(), "seed": q.seed.hex()}


def cmd_verify(args):
    st = ClientState(args.state)
    trusted = load_certificate(args.trust)
    quote = _read_bytes(args.quote)
    log_path = Path(args.log) if args.log else st.path("eventlog.txt")
    event_log = EventLog.load(log_path) if log_path.exists() else None
    try:
        chain = st.chain()
    except (OSError, AttestError) as exc:
        raise CliError(f"cannot load certificate chain from {st.dir}: {exc}") from None
    policy = AttestationPolicy(
        trusted_root_public=trusted.subject_public_key,
        selection=selection_from_indices(args.pcrs),
        accepted_tech_classes=frozenset(args.tech_class or (1,)),
        expected_seed=args.expected_seed,
        golden_digest=args.golden,
    )
    verdict = verify_quote(quote, args.nonce, chain, policy, event_log)
    print(verdict.to_json(indent=None if args.json else 2))
    return EXIT_REJECTED if not verdict.accepted else 0


# -- attacks and bench -----------------------------------------------------

def cmd_attack(args):
    variants = [args.variant] if args.variant else list(VARIANTS[args.scenario])
    reports = [run_scenario(args.scenario, v).to_dict() for v in variants]
    if args.json:
        print(json.dumps(reports if len(reports) > 1 else reports[0]))
    else:
        for r in reports:
            print(f"{r['scenario']:<7} {r['variant']:<28} detected={str(r['detected']).lower():<5} "
                  f"code={r['error_code'] or '-':<17} {r['notes']}")
    return 0


def _bench_blobs(args, stack: Stack | None):
    if stack is not None:
        return [stack.boot(layers=())[0].custody.blob for _ in range(args.connections)], stack.shim_server.endpoint
    cred = _read_bytes(args.credential_file)
    client = broker.BrokerClient(Connection(args.broker))
    blobs, endpoint = [], None
    for _ in range(args.connections):
        receipt, endpoint = client.create_vse(cred)
        blobs.append(receipt.sealed_state.encode())
    client.close()
    return blobs, args.shim or endpoint


def cmd_bench(args):
    local = args.broker is None
    if not local and args.credential_file is None:
        raise CliError("--broker needs --credential-file")
    stack = Stack(freshness_mode=args.freshness).start() if local else None
    try:
        if args.op == "spawn":
            endpoint = stack.broker_server.endpoint if local else args.broker
            cred = HIGH_CREDENTIAL if local else _read_bytes(args.credential_file)
            step = max(1, args.count // 10)
            stats = bench.bench_spawn(
                endpoint, cred, args.count, checkpoints=range(step, args.count + 1, step),
                coprocessor=stack.coprocessor if local else None,
            )
            out = stats.to_dict()
            if len(out["checkpoints"]) >= 2:
                pts = out["checkpoints"]
                _, _, r2 = bench.linear_fit([p["count"] for p in pts], [p["elapsed_s"] for p in pts])
                out["linear_r2"] = r2
            return out
        blobs, endpoint = _bench_blobs(args, stack)
        if args.op == "sweep":
            rows = bench.bench_sweep(args.sweep_op, endpoint, blobs, args.rates, args.duration)
            return {
                "op": args.sweep_op,
                "rows": [r.to_dict() for r in rows],
                "saturation_rate": bench.saturation_rate(rows),
            }
        return bench.run_open_loop(args.op, endpoint, blobs, args.rate, args.duration).to_dict()
    finally:
        if stack is not None:
            stack.stop()


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vse-attest", description="Offloaded-state attestation toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log to stderr (-vv for debug)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print compact JSON on stdout")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("ca-init", cmd_ca_init, "create a manufacturer root key and self-signed certificate")
    sp.add_argument("--out", required=True, help="CA directory")
    sp.add_argument("--force", action="store_true", help="overwrite an existing root key")

    sp = add("coproc-keygen", cmd_coproc_keygen, "provision a coprocessor identity and keys")
    sp.add_argument("--ca", required=True, help="CA directory from ca-init")
    sp.add_argument("--out", required=True, help="coprocessor config file (JSON)")
    sp.add_argument("--id", type=int, default=1, help="coprocessor id (default 1)")
    sp.add_argument("--tech-class", type=int, action="append", help="tech class to key (repeatable; default 1)")
    sp.add_argument("--freshness", action="store_true", help="enforce monotonic counters")
    sp.add_argument("--random-init", action="store_true", help="random initial PCR0 value per VSE")
    sp.add_argument("--admin-credential-file", help="file holding the admin credential")

    sp = add("cred-add", cmd_cred_add, "register a CRTM credential with the broker")
    sp.add_argument("--registry", required=True, help="registry file (appended)")
    sp.add_argument("--credential-file", required=True, help="credential file (read, or written with --generate)")
    sp.add_argument("--generate", action="store_true", help="write a fresh random credential first")
    sp.add_argument("--tech-class", type=int, default=1, help="tech class granted (default 1)")
    sp.add_argument("--label", default="", help="free-text label")

    sp = add("run-shim", cmd_run_shim, "serve the data path; prints the bound endpoint")
    sp.add_argument("--listen", default="127.0.0.1:0", help="host:port (port 0 picks one)")
    sp.add_argument("--coproc-config", required=True)

    sp = add("run-broker", cmd_run_broker, "serve VSE creation (and optionally shim and admin)")
    sp.add_argument("--listen", default="127.0.0.1:0", help="broker host:port")
    sp.add_argument("--registry", required=True, help="credential registry file")
    sp.add_argument("--coproc-config", required=True)
    sp.add_argument("--admin-listen", help="admin host:port (disabled when omitted)")
    sp.add_argument("--shim-listen", help="also serve a shim on the same coprocessor")
    sp.add_argument("--shim-endpoint", help="shim endpoint to hand to clients")

    sp = add("admin-distribute", cmd_admin_distribute, "copy an HMAC key between coprocessors, wrapped")
    sp.add_argument("--origin", required=True, help="origin admin endpoint")
    sp.add_argument("--target", required=True, help="target admin endpoint")
    sp.add_argument("--admin-credential-file", required=True)
    sp.add_argument("--key-id", type=lambda s: int(s, 0), help="key id to move (default: active)")

    sp = add("client-boot", cmd_client_boot, "CRTM: create a VSE and measure boot layers")
    sp.add_argument("--broker", required=True, help="broker endpoint")
    sp.add_argument("--credential-file", required=True)
    sp.add_argument("--state", required=True, help="client state directory")
    sp.add_argument("--layer", type=_layer, action="append", help="PCR:PATH[:NAME], in boot order")

    sp = add("client-extend", cmd_client_extend, "extend a PCR through the shim")
    sp.add_argument("--state", required=True)
    sp.add_argument("--pcr", type=int, required=True)
    sp.add_argument("--file", help="measure this file")
    sp.add_argument("--digest", type=_hex, help="32-byte measurement in hex")
    sp.add_argument("--desc", help="event log description")

    sp = add("client-read", cmd_client_read, "read PCR values")
    sp.add_argument("--state", required=True)
    sp.add_argument("--pcrs", type=_pcr_list, default=[0, 1, 2], help="comma-separated (default 0,1,2)")

    sp = add("client-quote", cmd_client_quote, "request a signed quote")
    sp.add_argument("--state", required=True)
    sp.add_argument("--pcrs", type=_pcr_list, default=[0, 1, 2])
    sp.add_argument("--nonce", type=_hex, help="32-byte challenge in hex (random when omitted)")
    sp.add_argument("--out", required=True, help="quote output file")

    sp = add("verify", cmd_verify, "verify a quote; exit 0 iff accepted")
    sp.add_argument("--quote", required=True)
    sp.add_argument("--nonce", type=_hex, required=True)
    sp.add_argument("--trust", required=True, help="trusted root certificate")
    sp.add_argument("--state", required=True, help="directory holding the chain certificates")
    sp.add_argument("--log", help="event log (default: STATE/eventlog.txt)")
    sp.add_argument("--pcrs", type=_pcr_list, default=[0, 1, 2])
    sp.add_argument("--tech-class", type=int, action="append", help="accepted tech class (default 1)")
    sp.add_argument("--expected-seed", type=_hex)
    sp.add_argument("--golden", type=_hex, help="golden digest in hex")

    sp = add("attack", cmd_attack, "run a scripted attack scenario")
    sp.add_argument("scenario", choices=sorted(SCENARIOS))
    sp.add_argument("--variant", help="one variant (default: all); see VARIANTS")

    sp = add("bench", cmd_bench, "load-test the shim or broker (in-process stack unless --broker)")
    sp.add_argument("op", choices=("extend", "quote", "spawn", "sweep"))
    sp.add_argument("--broker", help="broker endpoint (omit to run an in-process stack)")
    sp.add_argument("--shim", help="override the shim endpoint returned by the broker")
    sp.add_argument("--credential-file")
    sp.add_argument("--connections", type=int, default=4)
    sp.add_argument("--rate", type=float, default=1000.0, help="offered ops/s")
    sp.add_argument("--duration", type=float, default=2.0, help="seconds per run")
    sp.add_argument("--count", type=int, default=1000, help="VSEs to create (spawn)")
    sp.add_argument("--sweep-op", choices=("extend", "quote"), default="extend")
    sp.add_argument("--rates", type=lambda s: [float(x) for x in s.split(",")],
                    default=[500, 1000, 2000, 4000, 8000, 16000, 32000])
    sp.add_argument("--freshness", action="store_true", help="in-process stack with counters on")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except AttestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if isinstance(result, int):
        return result
    if result is not None:
        _emit(args, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
