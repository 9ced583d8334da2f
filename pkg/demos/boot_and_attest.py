"""Boot three layers through the broker and shim, then verify a quote.

Everything runs in one process on loopback ports:

    python3 demos/boot_and_attest.py
"""

from vse_attest import Stack, verify_quote
from vse_attest.agent import BootLayer
from vse_attest.stack import DEFAULT_LAYERS, DEFAULT_SELECTION

with Stack(freshness_mode=True, random_init_mode=True) as stack:
    driver, log, receipt = stack.boot()
    print(f"VSE seed        {receipt.ek_certificate.seed.hex()}")
    print(f"random init     {receipt.random_init_value.hex()}")
    for entry in log:
        print(f"  pcr {entry.pcr_index:2d}  {entry.digest.hex()[:16]}...  {entry.description}")

    # the tenant knows the golden layers and picks a fresh nonce
    policy = stack.policy(receipt)
    nonce = stack.rng(32)
    quote = driver.get_quote(DEFAULT_SELECTION, nonce)
    verdict = verify_quote(quote, nonce, receipt.chain, policy, log)
    print(f"honest boot     accepted={verdict.accepted}")

    # an unexpected kernel module changes PCR 2 and the golden digest no longer matches
    driver.extend(2, BootLayer("module", b"unsigned.ko", 2).measurement, "module")
    nonce = stack.rng(32)
    verdict = verify_quote(driver.get_quote(DEFAULT_SELECTION, nonce), nonce, receipt.chain, policy, log)
    print(f"after module    accepted={verdict.accepted} failed={verdict.failed}")

    # the log still replays, so a tenant who reviews the extra entry can choose to accept it
    layers = DEFAULT_LAYERS + (BootLayer("module", b"unsigned.ko", 2),)
    verdict = verify_quote(driver.get_quote(DEFAULT_SELECTION, nonce), nonce, receipt.chain,
                           stack.policy(receipt, layers=layers), log)
    print(f"updated golden  accepted={verdict.accepted}")
