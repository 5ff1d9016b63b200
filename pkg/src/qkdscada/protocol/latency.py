"""Injected transmission latency for secured control messages."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..qlink import LinkState

DROPPED = math.inf  # marker: message lost, no delivery time exists


@dataclass(frozen=True)
class LatencyModel:
    base_latency: float
    jitter_std: float = 0.0
    outage_aware: bool = True

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter_std < 0:
            raise ValueError("latency parameters must be non-negative")


def inject_latency(model: LatencyModel, link: LinkState, rng: np.random.Generator) -> float:
    """Delivery delay for one message: base plus folded Gaussian jitter.

    During an outage the message is dropped (infinite-latency marker)
    when the model is outage-aware.
    """
    if model.outage_aware and link.broken:
        return DROPPED
    jitter = 0.0
    if model.jitter_std > 0:
        jitter = max(0.0, float(rng.normal(0.0, model.jitter_std)))
    return model.base_latency + jitter
