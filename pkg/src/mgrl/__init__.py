"""Resilient microgrid dispatch: hourly battery/renewables simulator, PPO
training on small dense networks, and local surrogate explanations of the
trained dispatch policy."""

__version__ = "0.1.0"
