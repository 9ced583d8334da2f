"""Systematic single mutations of an honest attestation, with expected outcomes.

Each mutation yields either the exact set of failing verifier checks or the
status with which the coprocessor refuses to quote.
"""

from dataclasses import dataclass, replace
from typing import Callable

from vse_attest.agent import RANDOM_INIT_LABEL, BootLayer, EventLog, LogEntry
from vse_attest.errors import AttestError
from vse_attest.stack import DEFAULT_LAYERS, DEFAULT_SELECTION, LOW_TECH, Stack
from vse_attest.verifier import CHECKS, verify_quote

# byte ranges of the encoded quote and which checks a flip there must fail
QUOTE_REGIONS = (
    ("magic", range(0, 4), set(CHECKS[1:])),
    ("version", range(4, 5), set(CHECKS[1:])),
    ("tech_class", range(5, 6), {"signature", "tech_class"}),
    ("seed", range(6, 38), {"signature", "seed"}),
    ("selection", range(38, 41), {"signature", "digest"}),
    ("counter", range(41, 49), {"signature"}),
    ("nonce", range(49, 81), {"signature", "nonce"}),
    ("digest", range(81, 113), {"signature", "digest"}),
    ("signer_key_id", range(113, 117), {"signature"}),
    ("sig_len", range(117, 119), set(CHECKS[1:])),
    ("signature", range(119, 183), {"signature"}),
)


@dataclass
class Mutation:
    category: str
    name: str
    expected: object  # set of failing checks, or a status name
    run: Callable[[], object]


def flip(data: bytes, pos: int, mask: int = 0x01) -> bytes:
    b = bytearray(data)
    b[pos] ^= mask
    return bytes(b)


class Honest:
    """An honest 3-layer boot with random-init and freshness, plus its verdict inputs."""

    def __init__(self, stack: Stack):
        self.stack = stack
        self.driver, self.log, self.receipt = stack.boot()
        self.nonce = stack.rng(32)
        self.quote = self.driver.get_quote(DEFAULT_SELECTION, self.nonce).encode()
        self.chain = self.receipt.chain
        self.policy = stack.policy(self.receipt)

    def verdict(self, quote=None, nonce=None, chain=None, policy=None, log=None):
        return verify_quote(
            self.quote if quote is None else quote,
            self.nonce if nonce is None else nonce,
            self.chain if chain is None else chain,
            self.policy if policy is None else policy,
            self.log if log is None else log,
        )

    def failed(self, **kw) -> set:
        return set(self.verdict(**kw).failed)


def _log_without(log: EventLog, i: int) -> EventLog:
    return EventLog(e for j, e in enumerate(log) if j != i)


def _log_with(log: EventLog, i: int, entry: LogEntry) -> EventLog:
    entries = list(log)
    entries[i] = entry
    return EventLog(entries)


def catalogue(h: Honest) -> list[Mutation]:
    out: list[Mutation] = []

    for region, positions, expected in QUOTE_REGIONS:
        for pos in positions:
            out.append(Mutation("quote", f"{region}@{pos}", expected,
                                lambda pos=pos: h.failed(quote=flip(h.quote, pos))))
    out.append(Mutation("quote", "truncated", set(CHECKS[1:]), lambda: h.failed(quote=h.quote[:-1])))
    out.append(Mutation("quote", "trailing byte", set(CHECKS[1:]), lambda: h.failed(quote=h.quote + b"\x00")))

    for link, cert in enumerate(h.chain):
        blob = cert.encode()
        step = max(1, len(blob) // 12)
        for pos in range(0, len(blob), step):
            def run(link=link, pos=pos, blob=blob):
                chain = list(h.chain)
                chain[link] = flip(blob, pos)
                return h.failed(chain=chain)
            out.append(Mutation("chain", f"link{link}@{pos}", {"chain", "signature"}, run))
    out.append(Mutation("chain", "missing root", {"chain", "signature"}, lambda: h.failed(chain=h.chain[1:])))
    out.append(Mutation("chain", "swapped links", {"chain", "signature"},
                        lambda: h.failed(chain=[h.chain[1], h.chain[0], h.chain[2]])))

    entries = list(h.log)
    for i, e in enumerate(entries):
        # the random-init entry restates the EK certificate's value, so dropping it is harmless
        if e.description != RANDOM_INIT_LABEL:
            out.append(Mutation("log", f"drop#{i}", {"digest"},
                                lambda i=i: h.failed(log=_log_without(h.log, i))))
        for pos in (0, 31):
            bad = replace(e, digest=flip(e.digest, pos))
            out.append(Mutation("log", f"digest#{i}@{pos}", {"digest"},
                                lambda i=i, bad=bad: h.failed(log=_log_with(h.log, i, bad))))
        moved = replace(e, pcr_index=(e.pcr_index + 1) % 3)  # stay inside the selection
        out.append(Mutation("log", f"index#{i}", {"digest"},
                            lambda i=i, moved=moved: h.failed(log=_log_with(h.log, i, moved))))
        out.append(Mutation("log", f"duplicate#{i}", {"digest"},
                            lambda e=e: h.failed(log=EventLog(list(h.log) + [e]))))
    out.append(Mutation("log", "extra entry", {"digest"},
                        lambda: h.failed(log=EventLog(list(h.log) + [LogEntry(2, bytes(32), "extra")]))))
    out.append(Mutation("log", "out-of-range index", {"digest"},
                        lambda: h.failed(log=EventLog(list(h.log) + [LogEntry(30, bytes(32))]))))

    for pos in range(32):
        out.append(Mutation("nonce", f"challenge@{pos}", {"nonce"},
                            lambda pos=pos: h.failed(nonce=flip(h.nonce, pos))))

    for li, layer in enumerate(DEFAULT_LAYERS):
        for pos in (0, len(layer.payload) // 2, len(layer.payload) - 1, None):
            def run(li=li, pos=pos):
                layers = list(DEFAULT_LAYERS)
                payload = layers[li].payload + b"!" if pos is None else flip(layers[li].payload, pos)
                layers[li] = BootLayer(layers[li].name, payload, layers[li].pcr_index)
                driver, log, receipt = h.stack.boot(layers=layers)
                nonce = h.stack.rng(32)
                q = driver.get_quote(DEFAULT_SELECTION, nonce)
                # the verifier keeps the honest golden value for this VSE's random-init
                policy = h.stack.policy(receipt)
                return set(verify_quote(q, nonce, receipt.chain, policy, log).failed)
            out.append(Mutation("payload", f"{layer.name}@{pos}", {"digest"}, run))

    blob = h.driver.custody.blob
    for pos in list(range(0, 4)) + list(range(4, 824, 41)) + list(range(824, 856, 4)):
        def run(pos=pos):
            try:
                h.stack.shim_client().quote(flip(blob, pos), DEFAULT_SELECTION, h.nonce)
            except AttestError as exc:
                return exc.status.name
            return "OK"
        out.append(Mutation("sealed", f"blob@{pos}", "BAD_HMAC", run))

    out.append(Mutation("policy", "tech class not accepted", {"tech_class"},
                        lambda: h.failed(policy=replace(h.policy, accepted_tech_classes=frozenset({LOW_TECH})))))
    out.append(Mutation("policy", "other expected seed", {"seed"},
                        lambda: h.failed(policy=replace(h.policy, expected_seed=h.stack.rng(32)))))
    out.append(Mutation("policy", "other golden", {"digest"},
                        lambda: h.failed(policy=replace(h.policy, golden_digest=h.stack.rng(32)))))
    out.append(Mutation("policy", "other selection", {"digest"},
                        lambda: h.failed(policy=replace(h.policy, selection=0b1011))))
    return out


def run_catalogue(h: Honest):
    """Returns (mutations, mismatches) where each mismatch is (mutation, observed)."""
    muts = catalogue(h)
    bad = []
    for m in muts:
        got = m.run()
        if got != m.expected:
            bad.append((m, got))
    return muts, bad
