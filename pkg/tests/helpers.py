"""Shared test helpers (corpus specs and the acceptance result registry)."""
from kcx.synth import BackgroundSpec, EventSpec, SynthSpec, TemplateSpec

CRITERIA = []


def record_criterion(number, title, passed, detail=""):
    CRITERIA.append((number, title, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}  {detail}")


def small_spec(seed=0, duration_s=120.0, channels=6, count=8, ptt=90.0, rms=15.0,
               visibility=0.6, noise="pink"):
    return SynthSpec(
        seed=seed, duration_s=duration_s, channel_count=channels,
        background=BackgroundSpec(noise, rms),
        events=EventSpec(count=count, template=TemplateSpec(1.0, ptt, "random"),
                         min_separation_s=5.0, channel_visibility=visibility),
    )
