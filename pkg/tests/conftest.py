import pytest

from helpers import CRITERIA, small_spec
from kcx.synth import BackgroundSpec, EventSpec, SynthSpec, TemplateSpec, generate


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(CRITERIA, key=lambda c: c[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}  {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    return generate(small_spec())


@pytest.fixture(scope="session")
def reference_corpus():
    """seed 42, 30 min, 20 channels, 60 events, peak-to-trough 6x RMS, visibility 0.6."""
    spec = SynthSpec(
        seed=42, duration_s=1800.0, channel_count=20,
        background=BackgroundSpec("pink", 15.0),
        events=EventSpec(count=60, template=TemplateSpec(1.0, 90.0, "random"),
                         min_separation_s=5.0, channel_visibility=0.6),
    )
    return generate(spec)
