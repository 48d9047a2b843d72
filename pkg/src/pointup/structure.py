"""Replay cache for data-dependent structure.

Neighbor graphs, matchings, and disk memberships are selected from the
current point values and are piecewise constant in them. Gradients hold
those selections fixed (the standard subgradient), so a finite-difference
probe must evaluate the same smooth branch: inside a frozen block the
first evaluation records every structural query and later evaluations
replay the recorded answers in call order.
"""

from contextlib import contextmanager

_active = None


class Recorder:
    def __init__(self):
        self.records = []
        self.cursor = 0

    def fetch(self, kind, compute):
        if self.cursor < len(self.records):
            got_kind, value = self.records[self.cursor]
            if got_kind != kind:
                raise RuntimeError(
                    f"structure replay mismatch: expected {got_kind!r}, got {kind!r}")
            self.cursor += 1
            return value
        value = compute()
        self.records.append((kind, value))
        self.cursor += 1
        return value


def cached(kind, compute):
    """Route a structural selection through the active recorder, if any."""
    if _active is None:
        return compute()
    return _active.fetch(kind, compute)


@contextmanager
def replaying(recorder):
    """Activate ``recorder`` for one evaluation (cursor rewinds on entry)."""
    global _active
    prev = _active
    _active = recorder
    recorder.cursor = 0
    try:
        yield recorder
    finally:
        _active = prev
