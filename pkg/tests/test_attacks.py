import json

import pytest

from vse_attest.attacks import (
    VARIANTS,
    attack_table,
    run_scenario,
    scenario_relay,
    scenario_replay,
    scenario_reset,
    scenario_tamper,
)


def test_replay_with_counters_detected():
    r = scenario_replay(freshness=True)
    assert (r.detected, r.error_code) == (True, "COUNTER_MISMATCH")


def test_replay_without_counters_succeeds():
    r = scenario_replay(freshness=False)
    assert r.detected is False and r.details["accepted"] is True
    assert "mitigation: agent discipline" in r.notes


@pytest.mark.parametrize("freshness", [True, False])
def test_replay_honest_no_mismatch(freshness):
    r = scenario_replay(freshness, variant="honest")
    assert r.detected is False and r.error_code is None and r.details["accepted"]


def test_replay_flush_window():
    r = scenario_replay(True, variant="flush-window")
    assert r.detected and r.error_code == "COUNTER_MISMATCH" and r.details["position"] == 0
    assert r.details["window_quote_accepted"] is True


def test_reset_variants():
    r = scenario_reset("no_credential")
    assert (r.detected, r.error_code) == (True, "AUTH_FAILED")
    r = scenario_reset("golden_replay")
    assert r.detected and r.error_code == "digest"
    assert {"digest", "seed", "tech_class"} <= set(r.details["failed"])
    r = scenario_reset("honest")
    assert not r.detected and r.details["accepted"]


@pytest.mark.parametrize("freshness", [True, False])
def test_relay_accepted_with_victim_identity(freshness):
    r = scenario_relay(freshness)
    assert r.detected is False
    assert r.details["accepted"] and r.details["identity_is_victim"]


def test_tamper_every_region():
    r = scenario_tamper()
    assert r.detected and r.error_code == "BAD_HMAC"
    assert r.details["codes"] == {"key_id": "BAD_HMAC", "plaintext": "BAD_HMAC", "tag": "BAD_HMAC"}


def test_deterministic():
    assert scenario_reset("golden_replay").to_dict() == scenario_reset("golden_replay").to_dict()
    assert scenario_relay().to_dict() == scenario_relay().to_dict()


def test_reports_serialize():
    for r in attack_table():
        d = json.loads(r.to_json())
        assert {"scenario", "variant", "detected", "error_code", "notes"} <= set(d)


def test_run_scenario_dispatch():
    for name, variants in VARIANTS.items():
        assert run_scenario(name, variants[0]).scenario == name
    with pytest.raises(KeyError):
        run_scenario("cuckoo")
