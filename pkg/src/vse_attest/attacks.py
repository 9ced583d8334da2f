"""Scripted adversaries against an isolated in-process stack.

Each scenario returns a :class:`ScenarioReport`. Scenarios where the attack
is *expected to succeed* (replay without counters, relay) report
``detected=False``; that is the documented threat model, not a failure.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .agent import BootLayer, Driver, Mode
from .errors import AttestError, FlushError
from .stack import DEFAULT_LAYERS, DEFAULT_SELECTION, LOW_CREDENTIAL, Stack
from .verifier import verify_quote

MALWARE = BootLayer("implant", b"\x7fELF malicious implant", 2)
FOREIGN = BootLayer("foreign", b"adversary-chosen measurement", 5)


@dataclass
class ScenarioReport:
    scenario: str
    variant: str
    detected: bool
    error_code: str | None = None
    notes: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _quote_outcome(stack: Stack, client, blob, receipt, log=None, policy=None):
    """Quote ``blob`` and verify it; returns (error_code, verdict)."""
    nonce = stack.rng(32)
    try:
        q = client.quote(blob, DEFAULT_SELECTION, nonce)
    except AttestError as exc:
        return exc.status.name, None
    policy = policy or stack.policy(receipt)
    return None, verify_quote(q, nonce, receipt.chain, policy, log)


def scenario_replay(freshness: bool = True, variant: str = "attack", seed: int = 11) -> ScenarioReport:
    """Adversary keeps a pre-implant sealed blob and quotes with it.

    Variants: ``attack`` (stale blob retained), ``honest`` (no retention),
    ``flush-window`` (runtime measurements still buffered in the deferred
    driver while the adversary uses the last flushed blob).
    """
    name = "replay"
    var = f"{variant}/freshness-{'on' if freshness else 'off'}"
    with Stack(freshness_mode=freshness, seed=seed) as stack:
        driver, log, receipt = stack.boot()
        adversary = stack.shim_client()

        if variant == "flush-window":
            runtime = Driver(driver.custody.blob, mode=Mode.DEFERRED, log=log)
            runtime.extend(MALWARE.pcr_index, MALWARE.measurement, MALWARE.name)
            window_code, window_verdict = _quote_outcome(
                stack, adversary, runtime.custody.blob, receipt, policy=stack.policy(receipt)
            )
            adversary.extend(runtime.custody.blob, FOREIGN.pcr_index, FOREIGN.measurement)
            try:
                runtime.flush(stack.shim_client())
            except FlushError as exc:
                return ScenarioReport(
                    name, var, True, exc.status.name,
                    "interposed extend during the deferred window makes the flush fail; "
                    "a quote taken inside the window verified before detection",
                    {"position": exc.position, "window_quote_accepted":
                        bool(window_verdict and window_verdict.accepted), "window_error": window_code},
                )
            return ScenarioReport(name, var, False, None, "flush succeeded despite interposition",
                                  {"window_quote_accepted": bool(window_verdict and window_verdict.accepted)})

        stale = driver.custody.blob if variant == "attack" else None
        driver.extend(MALWARE.pcr_index, MALWARE.measurement, MALWARE.name)
        if stale is None:
            layers = DEFAULT_LAYERS + (MALWARE,)
            code, verdict = _quote_outcome(
                stack, adversary, driver.custody.blob, receipt, log, stack.policy(receipt, layers=layers)
            )
            return ScenarioReport(name, var, code is not None, code, "honest chain, current blob",
                                  {"accepted": bool(verdict and verdict.accepted)})
        code, verdict = _quote_outcome(stack, adversary, stale, receipt)
        if code is not None:
            return ScenarioReport(name, var, True, code, "stale sealed state rejected by the freshness counter")
        return ScenarioReport(
            name, var, not verdict.accepted, None,
            "stale state quoted against the pre-implant golden digest; "
            "mitigation: agent discipline (destroy superseded state before running measured code)",
            {"accepted": verdict.accepted, "failed": verdict.failed},
        )


def scenario_reset(variant: str = "golden_replay", seed: int = 23) -> ScenarioReport:
    """Fresh-VSE reset: without a credential, or replaying golden measurements."""
    name = "reset"
    with Stack(random_init_mode=True, seed=seed) as stack:
        if variant == "no_credential":
            codes = []
            for cred in (b"", b"stolen-or-guessed"):
                try:
                    stack.broker_client().create_vse(cred)
                    codes.append("OK")
                except AttestError as exc:
                    codes.append(exc.status.name)
            detected = all(c == "AUTH_FAILED" for c in codes)
            return ScenarioReport(name, variant, detected, codes[0], "VSE creation is credential gated",
                                  {"codes": codes})

        driver, log, receipt = stack.boot()
        policy = stack.policy(receipt)
        if variant == "honest":
            code, verdict = _quote_outcome(stack, driver.shim, driver.custody.blob, receipt, log, policy)
            return ScenarioReport(name, variant, not verdict.accepted, code, "honest CRTM with credential",
                                  {"accepted": verdict.accepted})

        # attacker holds only a low-assurance credential and replays the golden layers
        adv_driver, adv_log, adv_receipt = stack.boot(credential=LOW_CREDENTIAL)
        nonce = stack.rng(32)
        q = adv_driver.get_quote(DEFAULT_SELECTION, nonce)
        verdict = verify_quote(q, nonce, adv_receipt.chain, policy, adv_log)
        return ScenarioReport(
            name, variant, not verdict.accepted, "digest" if "digest" in verdict.failed else None,
            "random initial measurement makes the replayed chain diverge from the golden digest",
            {"failed": verdict.failed, "accepted": verdict.accepted},
        )


def scenario_relay(freshness: bool = True, seed: int = 37) -> ScenarioReport:
    """Victim's current sealed state is copied into a second agent and quoted there."""
    with Stack(freshness_mode=freshness, seed=seed) as stack:
        victim, log, receipt = stack.boot()
        copied = victim.custody.blob
        relay_agent = Driver(copied, mode=Mode.SYNCHRONOUS, shim=stack.shim_client())
        nonce = stack.rng(32)
        try:
            q = relay_agent.get_quote(DEFAULT_SELECTION, nonce)
        except AttestError as exc:
            return ScenarioReport("relay", f"freshness-{'on' if freshness else 'off'}", True, exc.status.name)
        verdict = verify_quote(q, nonce, receipt.chain, stack.policy(receipt), log)
        victim_seed = receipt.ek_certificate.seed
        return ScenarioReport(
            "relay", f"freshness-{'on' if freshness else 'off'}", not verdict.accepted, None,
            "copied state attests with the victim's identity; protecting the state is the VEE owner's job",
            {"accepted": verdict.accepted, "identity_is_victim": verdict.seed == victim_seed,
             "identity": verdict.seed.hex()},
        )


def _flip(blob: bytes, pos: int) -> bytes:
    b = bytearray(blob)
    b[pos] ^= 0x01
    return bytes(b)


def scenario_tamper(seed: int = 41) -> ScenarioReport:
    """Single-byte mutations of each region of the sealed blob."""
    with Stack(seed=seed) as stack:
        driver, _, _ = stack.boot()
        blob = driver.custody.blob
        client = stack.shim_client()
        targets = {"key_id": 0, "plaintext": 4 + 300, "tag": len(blob) - 1}
        codes = {}
        for region, pos in targets.items():
            try:
                client.extend(_flip(blob, pos), 0, bytes(32))
                codes[region] = "OK"
            except AttestError as exc:
                codes[region] = exc.status.name
        detected = all(c == "BAD_HMAC" for c in codes.values())
        return ScenarioReport("tamper", "single-byte", detected, "BAD_HMAC" if detected else None,
                              "sealed state is HMAC protected", {"codes": codes})


def _replay(variant: str | None) -> ScenarioReport:
    variant = variant or "freshness-on"
    if variant == "flush-window":
        return scenario_replay(True, "flush-window")
    return scenario_replay(freshness=variant == "freshness-on")


SCENARIOS = {
    "replay": _replay,
    "reset": lambda variant=None: scenario_reset(variant or "golden_replay"),
    "relay": lambda variant=None: scenario_relay(freshness=variant != "freshness-off"),
    "tamper": lambda variant=None: scenario_tamper(),
}

VARIANTS = {
    "replay": ("freshness-on", "freshness-off", "flush-window"),
    "reset": ("no_credential", "golden_replay", "honest"),
    "relay": ("freshness-on", "freshness-off"),
    "tamper": ("single-byte",),
}


def run_scenario(name: str, variant: str | None = None) -> ScenarioReport:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}")
    return SCENARIOS[name](variant)


def attack_table() -> list[ScenarioReport]:
    """The six headline outcomes."""
    return [
        scenario_replay(freshness=True),
        scenario_replay(freshness=False),
        scenario_reset("no_credential"),
        scenario_reset("golden_replay"),
        scenario_relay(),
        scenario_tamper(),
    ]

