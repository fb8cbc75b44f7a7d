"""Quintic smoothstep ramps used for bumps, cutoffs and curve easing."""
import numpy as np

# max of smoothstep' on [0, 1]
SMOOTHSTEP_PEAK = 15.0 / 8.0


def smoothstep(x):
    """0 for x <= 0, 1 for x >= 1, x^3 (10 - 15x + 6x^2) in between (C^2)."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def smoothstep_deriv(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x * x * (1.0 - x) ** 2


def smoothstep_deriv2(x):
    x = np.clip(x, 0.0, 1.0)
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)
