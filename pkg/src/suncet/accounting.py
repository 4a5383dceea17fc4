"""Multiply-accumulate counting and the MACs -> FLOPs conversion.

Only matrix products are counted: affine layers (bias adds excluded) and
the similarity matrices of the contrastive losses. One model update costs
``MACs * 2 FLOPs/MAC * 3`` (forward plus backward).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AccountingError

FLOPS_PER_MAC = 2
FWD_BWD_FACTOR = 3
COUNTER_LIMIT = (1 << 128) - 1


def macs_affine(batch: int, in_dim: int, out_dim: int) -> int:
    return batch * in_dim * out_dim


def macs_mlp(batch: int, specs) -> int:
    return sum(macs_affine(batch, s.in_dim, s.out_dim) for s in specs)


def macs_similarity(m: int, d: int) -> int:
    """Cosine similarity matrix of ``m`` rows of width ``d``."""
    return m * m * d


def flops_per_update(forward_macs: int) -> int:
    return forward_macs * FLOPS_PER_MAC * FWD_BWD_FACTOR


@dataclass
class FlopsLedger:
    macs_cum: int = 0
    updates_cum: int = 0

    @property
    def flops_cum(self) -> int:
        return flops_per_update(self.macs_cum)

    @property
    def petaflops(self) -> float:
        return self.flops_cum / 1e15

    @property
    def gigaflops(self) -> float:
        return self.flops_cum / 1e9

    def record_update(self, forward_macs: int) -> "FlopsLedger":
        if forward_macs < 0:
            raise AccountingError("negative MAC count")
        total = self.macs_cum + forward_macs
        if flops_per_update(total) > COUNTER_LIMIT or self.updates_cum + 1 > COUNTER_LIMIT:
            raise AccountingError("FLOP counter overflow")
        self.macs_cum = total
        self.updates_cum += 1
        return self

    def merge(self, other: "FlopsLedger") -> "FlopsLedger":
        total = FlopsLedger(self.macs_cum + other.macs_cum, self.updates_cum + other.updates_cum)
        if flops_per_update(total.macs_cum) > COUNTER_LIMIT:
            raise AccountingError("FLOP counter overflow")
        return total


def record_update(ledger: FlopsLedger, forward_macs: int) -> FlopsLedger:
    return ledger.record_update(forward_macs)
