"""Shared pytest configuration.

Property tests run under a deterministic hypothesis profile: derandomized so
CI and local runs explore the same cases, and with the deadline disabled
because first calls into the JIT-compiled solver can be slow.
"""

from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")
