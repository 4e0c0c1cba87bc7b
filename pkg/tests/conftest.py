import os

from hypothesis import HealthCheck, settings

# the first call of a jitted function compiles it; keep that out of deadlines
settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))
