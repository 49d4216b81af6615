import os
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# golden frame parameters; tests/fixtures/regen.py writes the hex dumps from these
FIXTURE_KEY = b"motionlink-fixture-key"
FIXTURE_SESSION = 0x4D4C0001
FIXTURE_SALT = bytes(range(1, 9))


def crc32_bitwise(data: bytes) -> int:
    """Reference CRC-32: reflected poly 0xEDB88320, init and final XOR 0xFFFFFFFF.

    Deliberately table-free and independent of binascii/zlib.
    """
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xEDB88320 if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MOTIONLINK_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="real-time test; set MOTIONLINK_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# acceptance verdicts, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}
CRITERIA = {
    1: "wire conformance",
    2: "corruption detection",
    3: "throughput arithmetic",
    4: "reference latency shape",
    5: "sync-free estimator",
    6: "outlier filter",
    7: "gesture detection",
    8: "haptic RTT pipeline",
    9: "determinism",
    10: "UDP integration",
}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        verdict, detail = ACCEPTANCE.get(n, ("SKIP", "not run"))
        tr.write_line(f"[{verdict}] {n:>2}. {title}: {detail}")
