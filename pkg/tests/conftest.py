import hashlib

import pytest

from vse_attest.coprocessor import Coprocessor, Manufacturer
from vse_attest.crypto import RandomSource
from vse_attest.stack import ADMIN_CREDENTIAL, HIGH_CREDENTIAL, HIGH_TECH, LOW_CREDENTIAL, LOW_TECH, Stack

# Frozen reference values, computed with sha256sum / openssl outside this package.
SHA256_EMPTY = bytes.fromhex("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
V0 = bytes.fromhex("f5a5fd42d16a20302798ef6ed309979b43003d2320d9f0e8ea9831a92759fb4b")  # sha256(64 x 00)
SHA256_ZERO32 = bytes.fromhex("66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925")
SHA256_ZERO768 = bytes.fromhex("ef115a0e0c15cdc41958ca46b5b14b456115f4baec5e3ca68599d2a8f435e3b8")


def oracle_extend(bank, index, measurement):
    """Independent extend chain on plain lists, using hashlib directly."""
    bank = list(bank)
    bank[index] = hashlib.sha256(bank[index] + measurement).digest()
    return bank


@pytest.fixture
def rng():
    return RandomSource(1234)


@pytest.fixture
def manufacturer(rng):
    return Manufacturer(rng=rng)


def make_coprocessor(manufacturer, rng, coprocessor_id=1, **kw):
    config = manufacturer.provision(
        coprocessor_id,
        tech_classes=(HIGH_TECH, LOW_TECH),
        credentials={HIGH_CREDENTIAL: HIGH_TECH, LOW_CREDENTIAL: LOW_TECH},
        admin_credential=ADMIN_CREDENTIAL,
        **kw,
    )
    return Coprocessor(config, rng)


@pytest.fixture
def cop(manufacturer, rng):
    return make_coprocessor(manufacturer, rng)


@pytest.fixture
def fresh_cop(manufacturer, rng):
    return make_coprocessor(manufacturer, rng, freshness_mode=True)


@pytest.fixture
def stack():
    with Stack(seed=7) as s:
        yield s


@pytest.fixture
def fresh_stack():
    with Stack(freshness_mode=True, seed=8) as s:
        yield s


@pytest.fixture
def rinit_stack():
    with Stack(freshness_mode=True, random_init_mode=True, seed=9) as s:
        yield s
