"""Print the outcome of every scripted attack.

    python3 demos/attack_table.py
"""

from vse_attest.attacks import VARIANTS, run_scenario

for name, variants in VARIANTS.items():
    for variant in variants:
        r = run_scenario(name, variant)
        outcome = "detected" if r.detected else "not detected"
        print(f"{r.scenario:7s} {r.variant:28s} {outcome:13s} {r.error_code or '-':17s} {r.notes}")
