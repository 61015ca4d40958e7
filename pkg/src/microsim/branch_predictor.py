"""TAGE conditional branch predictor.

A 2-bit bimodal base table backed by ``num_tagged_tables`` tagged tables
whose history lengths grow geometrically.  Hashing (all values are plain
Python ints, history bit 0 is the most recent outcome)::

    fold(h, L, w)  = XOR of the w-bit chunks of (h & (2**L - 1))
    index_i        = (pc >> 2) ^ (pc >> (2 + log2(entries)))
                     ^ fold(ghist, L_i, log2(entries))
                     ^ fold(path, min(L_i, 16), log2(entries))
    tag_i          = (pc >> 2) ^ fold(ghist, L_i, tag_bits)
                     ^ (fold(ghist, L_i, tag_bits - 1) << 1)      (masked)
    base_index     = (pc >> 2) & (base_entries - 1)

``path`` is a 16-bit register shifted by bit 2 of each predicted branch pc.

``predict`` is pure.  Training is split in two so that an out-of-order core
can update history at prediction time and the tables at retirement:

* ``speculate(pred, outcome)`` sets history to the checkpoint stored in
  ``pred`` shifted by ``outcome``.  Calling it with the checkpoint of a
  mispredicted branch is also the repair after a squash.
* ``train(pc, outcome, pred)`` updates counters, useful bits and allocates.

``update`` does both, which is the sequential (non-pipelined) usage.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import PredictorError

BASE = -1
BASE_COUNTER_BITS = 2
PATH_BITS = 16
USEFUL_RESET_PERIOD = 1 << 18


@dataclass(frozen=True)
class TageConfig:
    num_tagged_tables: int = 4
    history_lengths: tuple[int, ...] = (5, 15, 44, 130)
    table_entries: int = 1024
    tag_bits: int = 10
    counter_bits: int = 3
    useful_bits: int = 2
    base_entries: int = 4096

    def violations(self) -> list[str]:
        out = []
        h = list(self.history_lengths)
        if self.num_tagged_tables < 1:
            out.append("predictor.num_tagged_tables: must be >= 1")
        if len(h) != self.num_tagged_tables:
            out.append("predictor.history_lengths: length must equal num_tagged_tables")
        if any(x < 1 for x in h):
            out.append("predictor.history_lengths: lengths must be >= 1")
        if any(b <= a for a, b in zip(h, h[1:])):
            out.append("predictor.history_lengths: must be strictly increasing")
        for name in ("table_entries", "base_entries"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                out.append(f"predictor.{name}: must be a power of two")
        if self.tag_bits < 2:
            out.append("predictor.tag_bits: must be >= 2")
        if self.counter_bits < 2:
            out.append("predictor.counter_bits: must be >= 2")
        if self.useful_bits < 1:
            out.append("predictor.useful_bits: must be >= 1")
        return out


@dataclass(frozen=True)
class Prediction:
    taken: bool
    provider: int  # BASE or tagged table index
    alt_pred: bool
    # lookup snapshot consumed by train/speculate
    indices: tuple[int, ...] = field(default=(), repr=False)
    tags: tuple[int, ...] = field(default=(), repr=False)
    base_index: int = field(default=0, repr=False)
    history: int = field(default=0, repr=False)
    path: int = field(default=0, repr=False)
    pc: int = field(default=0, repr=False)


def fold(value: int, length: int, width: int) -> int:
    value &= (1 << length) - 1
    mask = (1 << width) - 1
    out = 0
    while value:
        out ^= value & mask
        value >>= width
    return out


class Tage:
    def __init__(self, cfg: TageConfig | None = None):
        cfg = cfg or TageConfig()
        bad = cfg.violations()
        if bad:
            raise PredictorError("BAD_CONFIG", "; ".join(bad))
        self.cfg = cfg
        self.log_entries = cfg.table_entries.bit_length() - 1
        self.hist_mask = (1 << max(cfg.history_lengths)) - 1
        self.ctr_max = (1 << cfg.counter_bits) - 1
        self.ctr_weak_taken = 1 << (cfg.counter_bits - 1)
        self.u_max = (1 << cfg.useful_bits) - 1
        self.base_max = (1 << BASE_COUNTER_BITS) - 1
        # weakly not-taken
        self.base = [(1 << (BASE_COUNTER_BITS - 1)) - 1] * cfg.base_entries
        n, e = cfg.num_tagged_tables, cfg.table_entries
        self.valid = [[False] * e for _ in range(n)]
        self.tag = [[0] * e for _ in range(n)]
        self.ctr = [[0] * e for _ in range(n)]
        self.useful = [[0] * e for _ in range(n)]
        self.ghist = 0
        self.path = 0
        self.trained = 0

    def _lookup(self, pc: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        cfg, le = self.cfg, self.log_entries
        emask = cfg.table_entries - 1
        tmask = (1 << cfg.tag_bits) - 1
        pcs = pc >> 2
        idx, tags = [], []
        for length in cfg.history_lengths:
            plen = min(length, PATH_BITS)
            i = (pcs ^ (pcs >> le) ^ fold(self.ghist, length, le)
                 ^ fold(self.path, plen, le)) & emask
            t = (pcs ^ fold(self.ghist, length, cfg.tag_bits)
                 ^ (fold(self.ghist, length, cfg.tag_bits - 1) << 1)) & tmask
            idx.append(i)
            tags.append(t)
        return tuple(idx), tuple(tags)

    def predict(self, pc: int) -> Prediction:
        idx, tags = self._lookup(pc)
        bidx = (pc >> 2) & (self.cfg.base_entries - 1)
        base_taken = self.base[bidx] > self.base_max // 2
        hits = [i for i in range(self.cfg.num_tagged_tables - 1, -1, -1)
                if self.valid[i][idx[i]] and self.tag[i][idx[i]] == tags[i]]
        if hits:
            provider = hits[0]
            taken = self.ctr[provider][idx[provider]] >= self.ctr_weak_taken
            if len(hits) > 1:
                alt = self.ctr[hits[1]][idx[hits[1]]] >= self.ctr_weak_taken
            else:
                alt = base_taken
        else:
            provider, taken, alt = BASE, base_taken, base_taken
        return Prediction(taken, provider, alt, idx, tags, bidx,
                          self.ghist, self.path, pc)

    def speculate(self, pred: Prediction, outcome: bool) -> None:
        self.ghist = ((pred.history << 1) | int(outcome)) & self.hist_mask
        self.path = ((pred.path << 1) | ((pred.pc >> 2) & 1)) & ((1 << PATH_BITS) - 1)

    def train(self, pc: int, outcome: bool, pred: Prediction) -> None:
        p = pred.provider
        if p == BASE:
            b = pred.base_index
            self.base[b] = min(self.base[b] + 1, self.base_max) if outcome \
                else max(self.base[b] - 1, 0)
        else:
            i = pred.indices[p]
            c = self.ctr[p][i]
            self.ctr[p][i] = min(c + 1, self.ctr_max) if outcome else max(c - 1, 0)
            if pred.alt_pred != pred.taken:
                u = self.useful[p][i]
                self.useful[p][i] = min(u + 1, self.u_max) if pred.taken == outcome \
                    else max(u - 1, 0)

        if pred.taken != outcome:
            longer = range(p + 1, self.cfg.num_tagged_tables)
            for j in longer:
                k = pred.indices[j]
                if self.useful[j][k] == 0:
                    self.valid[j][k] = True
                    self.tag[j][k] = pred.tags[j]
                    self.ctr[j][k] = self.ctr_weak_taken if outcome else self.ctr_weak_taken - 1
                    break
            else:
                for j in longer:
                    k = pred.indices[j]
                    self.useful[j][k] = max(self.useful[j][k] - 1, 0)

        self.trained += 1
        if self.trained % USEFUL_RESET_PERIOD == 0:
            for table in self.useful:
                table[:] = [u >> 1 for u in table]

    def update(self, pc: int, outcome: bool, pred: Prediction) -> None:
        self.train(pc, outcome, pred)
        self.speculate(pred, outcome)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.base, self.valid, self.tag, self.ctr, self.useful,
                       self.ghist, self.path, self.trained)).encode())
        return h.hexdigest()


def tage_new(cfg: TageConfig | None = None) -> Tage:
    return Tage(cfg)


def tage_predict(state: Tage, pc: int) -> Prediction:
    return state.predict(pc)


def tage_update(state: Tage, pc: int, outcome: bool, pred: Prediction) -> Tage:
    state.update(pc, outcome, pred)
    return state


class StaticPredictor:
    """Always predicts one direction; no state."""

    def __init__(self, taken: bool = False):
        self.taken = taken

    def predict(self, pc: int) -> Prediction:
        return Prediction(self.taken, BASE, self.taken, pc=pc)

    def speculate(self, pred: Prediction, outcome: bool) -> None:
        pass

    def train(self, pc: int, outcome: bool, pred: Prediction) -> None:
        pass
