"""Labeled random streams derived from a single master seed.

Each subsystem draws from its own stream, so adding draws in one subsystem
(say, destination resolution) leaves every other stream untouched.
"""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np

STREAMS = ("population", "placement", "destination", "influence", "commsim")


def stream(seed: int, label: str) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))))


class RngStreams:
    def __init__(self, seed: int, labels=STREAMS):
        self.seed = int(seed)
        self._streams = {label: stream(self.seed, label) for label in labels}

    def __getitem__(self, label: str) -> np.random.Generator:
        if label not in self._streams:
            self._streams[label] = stream(self.seed, label)
        return self._streams[label]

    def state(self) -> dict:
        return {label: g.bit_generator.state for label, g in sorted(self._streams.items())}

    def restore(self, state: dict) -> None:
        for label, st in state.items():
            self[label].bit_generator.state = st

    def checkpoint(self) -> dict[str, str]:
        """Short digest per stream, cheap enough to log every round."""
        out = {}
        for label, st in self.state().items():
            blob = json.dumps(st, sort_keys=True, default=str).encode()
            out[label] = hashlib.sha256(blob).hexdigest()[:12]
        return out
