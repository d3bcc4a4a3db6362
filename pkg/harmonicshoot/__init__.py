'''HarmonicShoot package'''

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "cli",
    "coefficients",
    "config",
    "errors",
    "integrator",
    "logging_config",
    "records",
    "shooting",
    "singular_ivp",
    "state",
]
