import math

import numpy as np
import pytest

from nfcsim.geometry import WirePath


def circle_path(radius: float, z: float = 0.0, seg: float = 0.001,
                center=(0.0, 0.0)) -> WirePath:
    """Closed polygonal circle with segments of roughly `seg` length."""
    n = max(16, int(math.ceil(2 * math.pi * radius / seg)))
    th = np.linspace(0.0, 2.0 * math.pi, n + 1)[:-1]
    return WirePath(
        np.column_stack([
            center[0] + radius * np.cos(th),
            center[1] + radius * np.sin(th),
            np.full(n, z),
        ]),
        closed=True,
    )


@pytest.fixture(scope="session")
def copper_1mm():
    from nfcsim.geometry import Conductor
    return Conductor(resistivity_ohm_m=1.68e-8, foil_thickness_m=8e-6, trace_width_m=0.001)
