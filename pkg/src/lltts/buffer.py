"""Language-balanced episodic memory with random push / random pop."""
from __future__ import annotations

import numpy as np

from .errors import FormatError, UsageError


class MemoryBuffer:
    """Capacity-bounded per-language sample store.

    After every `integrate_task` the per-language counts differ by at
    most one; remainder slots go to the earliest-integrated languages.
    """

    def __init__(self, capacity: int, rng_seed: int = 0):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.capacity = capacity
        self.rng_seed = rng_seed
        self._rng = np.random.default_rng(rng_seed)
        self.slots: dict[int, list] = {}

    def languages(self) -> list:
        return list(self.slots.keys())

    def all_samples(self) -> list:
        out = []
        for samples in self.slots.values():
            out.extend(samples)
        return out

    def total(self) -> int:
        return sum(len(v) for v in self.slots.values())

    def counts(self) -> dict:
        return {lang: len(v) for lang, v in self.slots.items()}

    def __len__(self):
        return self.total()

    def _quotas(self):
        k = len(self.slots)
        base, rem = divmod(self.capacity, k)
        return {
            lang: base + (1 if i < rem else 0)
            for i, lang in enumerate(self.slots)  # insertion order = integration order
        }

    def integrate_task(self, ds) -> None:
        """Evict old languages down to quota, then push random train samples."""
        if ds.language_id in self.slots:
            raise UsageError(f"language {ds.language_id} already integrated")
        self.slots[ds.language_id] = []
        quotas = self._quotas()
        for lang, samples in self.slots.items():
            quota = quotas[lang]
            if lang == ds.language_id:
                pool = ds.train
                n = min(quota, len(pool))
                idx = sorted(self._rng.choice(len(pool), size=n, replace=False))
                self.slots[lang] = [pool[i] for i in idx]
            elif len(samples) > quota:
                idx = sorted(self._rng.choice(len(samples), size=quota, replace=False))
                self.slots[lang] = [samples[i] for i in idx]

    def snapshot(self) -> dict:
        return {
            "capacity": self.capacity,
            "rng_seed": self.rng_seed,
            "rng_state": self._rng.bit_generator.state,
            "slots": [
                {
                    "language_id": lang,
                    "samples": [
                        {
                            "tokens": [int(t) for t in s.tokens],
                            "frames": s.target_frames.tolist(),
                        }
                        for s in samples
                    ],
                }
                for lang, samples in self.slots.items()
            ],
        }

    @classmethod
    def restore(cls, record: dict) -> "MemoryBuffer":
        from .data import Sample

        try:
            buf = cls(record["capacity"], record["rng_seed"])
            buf._rng.bit_generator.state = record["rng_state"]
            for slot in record["slots"]:
                lang = slot["language_id"]
                buf.slots[lang] = [
                    Sample(lang, np.asarray(s["tokens"]), np.asarray(s["frames"]))
                    for s in slot["samples"]
                ]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"corrupt buffer record: {exc}") from exc
        return buf

    def __eq__(self, other):
        return (
            isinstance(other, MemoryBuffer)
            and self.capacity == other.capacity
            and self._rng.bit_generator.state == other._rng.bit_generator.state
            and list(self.slots) == list(other.slots)
            and all(self.slots[k] == other.slots[k] for k in self.slots)
        )
