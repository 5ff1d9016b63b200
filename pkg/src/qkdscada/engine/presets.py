"""Named grid-model presets for the shipped scenario suites.

Both presets are reduced multi-area frequency models discretized at the
100 ms tick: per area a deviation state with weak natural damping plus a
slow restoration integrator, tie-line coupling between areas, and one
input channel per area for frequency-control chains. Uncontrolled
recovery from a disturbance takes tens of seconds; proportional chain
feedback shortens it to a few.
"""

from __future__ import annotations

import numpy as np

from ..grid import GridModel

PRESET_TICK = 0.1


def _multi_area(n_areas: int, coupling: np.ndarray, damping: float,
                integral_gain: float, integral_leak: float,
                input_gain: float, volt_nodes: int = 0,
                volt_channels: tuple[int, ...] = ()) -> GridModel:
    n = 2 * n_areas
    a = np.zeros((n, n))
    for i in range(n_areas):
        fi, si = 2 * i, 2 * i + 1
        a[fi, fi] = damping - sum(coupling[i][j] for j in range(n_areas) if j != i)
        a[fi, si] = -integral_gain
        a[si, si] = integral_leak
        a[si, fi] = PRESET_TICK
        for j in range(n_areas):
            if j != i:
                a[fi, 2 * j] = coupling[i][j]
    n_inputs = n_areas + len(volt_channels)
    b = np.zeros((n, n_inputs))
    for i in range(n_areas):
        b[2 * i, i] = input_gain
    return GridModel(a=a, b=b, freq_indices=tuple(2 * i for i in range(n_areas)),
                     volt_nodes=volt_nodes, volt_decay=0.97,
                     volt_input_channels=tuple(n_areas + k for k in range(volt_nodes)))


def ieee39_reduced() -> GridModel:
    """Three-area reduction: 6 states, 3 frequency channels, 1 voltage node."""
    c = 0.004
    coupling = [[0.0, c, c], [c, 0.0, c], [c, c, 0.0]]
    return _multi_area(3, coupling, damping=0.992, integral_gain=0.004,
                       integral_leak=0.995, input_gain=0.05,
                       volt_nodes=1, volt_channels=(3,))


def ieee118_reduced() -> GridModel:
    """One transmission plus three distribution areas: 8 states.

    Transmission (area 0) couples strongly to every distribution area, so
    distribution-side control quality feeds back into the transmission
    frequency.
    """
    ct, cd = 0.012, 0.002
    coupling = [
        [0.0, ct, ct, ct],
        [ct, 0.0, cd, cd],
        [ct, cd, 0.0, cd],
        [ct, cd, cd, 0.0],
    ]
    return _multi_area(4, coupling, damping=0.988, integral_gain=0.004,
                       integral_leak=0.995, input_gain=0.05,
                       volt_nodes=2, volt_channels=(4, 5))


PRESETS = {
    "ieee39_reduced": ieee39_reduced,
    "ieee118_reduced": ieee118_reduced,
}


def load_preset(name: str) -> GridModel:
    if name not in PRESETS:
        raise KeyError(f"unknown grid preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]()
