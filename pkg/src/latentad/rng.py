"""Deterministic random-stream derivation.

One master seed is split into independent named streams so that, e.g.,
occlusion masks do not perturb the Langevin noise sequence. Streams are
additionally indexed (typically by window) so per-window work can run in any
order, or in parallel, without changing results.
"""

from __future__ import annotations

import numpy as np

# Stable codes; appending is fine, renumbering is not (breaks reproducibility).
_STREAMS = {
    "param-init": 0,
    "latent-init": 1,
    "chain": 2,
    "batch": 3,
    "detect": 4,
    "synth-base": 5,
    "synth-anomaly": 6,
    "occlude": 7,
}


def stream_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Generator for a named (stream, index) pair derived from the master seed."""
    try:
        code = _STREAMS[stream]
    except KeyError:
        raise KeyError(f"unknown rng stream {stream!r}; known: {sorted(_STREAMS)}") from None
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(code, index)))
