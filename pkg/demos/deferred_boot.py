"""Measure early boot before the network is up, then flush.

The deferred driver answers from a shadow bank while the coprocessor is out
of reach and replays the buffered extends in order once it is reachable.

    python3 demos/deferred_boot.py
"""

from vse_attest import Driver, Mode, Stack
from vse_attest.stack import DEFAULT_LAYERS, HIGH_CREDENTIAL

with Stack(freshness_mode=True) as stack:
    receipt, _ = stack.broker_client().create_vse(HIGH_CREDENTIAL)
    driver = Driver(receipt.sealed_state, mode=Mode.DEFERRED)
    for layer in DEFAULT_LAYERS:
        driver.extend(layer.pcr_index, layer.measurement, layer.name)
    shadow = driver.read(0b111)
    print(f"buffered {len(driver.buffer)} extends, counter in sealed state = {driver.sealed.state().counter}")

    driver.flush(stack.shim_client())
    print(f"flushed; counter = {driver.sealed.state().counter}, mode = {driver.mode.name}")
    print(f"shadow bank matched the coprocessor: {driver.read(0b111) == shadow}")
