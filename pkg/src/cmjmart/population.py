"""Event-driven simulation of the multi-type branching population.

Individuals are processed in birth waves; because every draw comes from
a counter-based stream keyed by the individual's ancestral path (seed,
then child ranks), the resulting tree is a pure function of
``(model, horizon, tail_cutoff, seed)`` regardless of processing order,
and enlarging the tail cutoff only appends children.

Each individual born up to the horizon samples its offspring processes
on ``[0, tail_cutoff - birth_time]``.  Children born after the horizon
are retained as tail records (they never reproduce); they are exactly
what the coming-generation sums need up to the cutoff, with the rest
covered by analytic truncation bounds computed downstream.

Replicas can be simulated jointly: :func:`simulate_batch` runs many
seeds through shared vectorized waves and produces per-replica trees
identical to individual :func:`simulate` calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import rng
from .errors import PopulationCapError, UsageError
from .models import OffspringModel, sample_offspring_batch

DEFAULT_CAP = 10_000_000


@dataclass
class BatchTrees:
    """Column store of several simulated trees (one replica per seed).

    Individuals (birth time <= horizon) live in the ``ind_*`` arrays,
    sorted by (replica, birth time, insertion order); ``ind_parent``
    holds indices into the same arrays, -1 for ancestors.  Every sampled
    child -- including those that became individuals -- occupies a row of
    the ``child_*`` arrays in deterministic wave order; ``child_store``
    points back into the individual arrays.  Tail records (born after the
    horizon, never reproducing) carry ``child_store = -1`` and
    ``child_rank = -1``; ranks order each parent's stored children by
    birth time and are unaffected by the tail split, because every tail
    child is born later than every stored sibling.
    """

    model: OffspringModel
    horizon: float
    tail_cutoff: np.ndarray
    seeds: np.ndarray
    ind_replica: np.ndarray
    ind_time: np.ndarray
    ind_type: np.ndarray
    ind_parent: np.ndarray
    ind_rank: np.ndarray
    ind_key: np.ndarray
    child_replica: np.ndarray
    child_parent: np.ndarray
    child_rel: np.ndarray
    child_time: np.ndarray
    child_type: np.ndarray
    child_rank: np.ndarray
    child_store: np.ndarray
    ind_offsets: np.ndarray

    @property
    def n_replicas(self) -> int:
        return len(self.seeds)

    @property
    def n_individuals(self) -> int:
        return len(self.ind_time)


@dataclass
class PopulationTree:
    """A single simulated tree (see :class:`BatchTrees` for field roles)."""

    model: OffspringModel
    horizon: float
    tail_cutoff: float
    seed: int
    ind_time: np.ndarray
    ind_type: np.ndarray
    ind_parent: np.ndarray
    ind_rank: np.ndarray
    ind_key: np.ndarray
    child_parent: np.ndarray
    child_rel: np.ndarray
    child_time: np.ndarray
    child_type: np.ndarray
    child_rank: np.ndarray
    child_store: np.ndarray

    @property
    def n_individuals(self) -> int:
        return len(self.ind_time)

    @property
    def tail_mask(self) -> np.ndarray:
        return self.child_store < 0

    def label(self, index: int) -> tuple:
        """Ulam-Harris label: the chain of child ranks from the ancestor."""
        parts = []
        while index >= 0 and self.ind_parent[index] >= 0:
            parts.append(int(self.ind_rank[index]))
            index = int(self.ind_parent[index])
        return tuple(reversed(parts))


@dataclass
class ComingGeneration:
    """Members born strictly after ``t`` whose parents were born at or
    before ``t``, up to the tree's tail cutoff."""

    t: float
    member_child_idx: np.ndarray
    times: np.ndarray
    types: np.ndarray
    parent_idx: np.ndarray
    truncation_bound: float = np.nan


def _ancestor_types(model: OffspringModel, seeds: np.ndarray) -> np.ndarray:
    if isinstance(model.ancestor, int):
        return np.full(len(seeds), model.ancestor, dtype=np.int16)
    probs = np.asarray(model.ancestor, dtype=float)
    out = np.empty(len(seeds), dtype=np.int16)
    for r, seed in enumerate(seeds):
        stream = rng.Stream(rng.ancestor_type_key(int(seed)))
        out[r] = stream.choice(probs) + 1
    return out


class _Columns:
    """Append-only column store with amortized growth."""

    def __init__(self, reserve: int = 1024, **fields):
        reserve = max(int(reserve), 64)
        self._data = {name: np.empty(reserve, dtype=dt) for name, dt in fields.items()}
        self.n = 0

    def append(self, **cols):
        m = len(next(iter(cols.values())))
        if m == 0:
            return
        need = self.n + m
        for name, arr in self._data.items():
            if arr.size < need:
                grown = np.empty(max(need, int(arr.size * 1.8) + 1024), dtype=arr.dtype)
                grown[:self.n] = arr[:self.n]
                self._data[name] = grown
        for name, vals in cols.items():
            self._data[name][self.n:need] = vals
        self.n = need

    def view(self, name: str) -> np.ndarray:
        return self._data[name][:self.n]


def simulate_batch(model: OffspringModel, horizon: float,
                   tail_cutoff: Union[float, np.ndarray, Sequence[float]],
                   seeds: Sequence[int],
                   cap: int = DEFAULT_CAP,
                   expected_individuals: int = 1024,
                   expected_children: int = 1024) -> BatchTrees:
    """Simulate one tree per seed through shared vectorized waves.

    The two ``expected_*`` hints pre-size the column stores (a pilot run
    can predict them); they are growth hints only and do not affect the
    result.
    """
    if horizon < 0:
        raise UsageError("horizon must be nonnegative")
    seeds = np.asarray(list(seeds), dtype=np.uint64)
    n_rep = len(seeds)
    cutoffs = np.broadcast_to(np.asarray(tail_cutoff, dtype=float), (n_rep,)).copy()
    if np.any(cutoffs < horizon):
        raise UsageError("tail_cutoff must be >= horizon")

    p = model.p
    inds = _Columns(reserve=expected_individuals,
                    replica=np.int32, time=np.float64, type=np.int16,
                    parent=np.int64, rank=np.int32, key=np.uint64)
    inds.append(replica=np.arange(n_rep, dtype=np.int32),
                time=np.zeros(n_rep),
                type=_ancestor_types(model, seeds),
                parent=np.full(n_rep, -1, dtype=np.int64),
                rank=np.zeros(n_rep, dtype=np.int32),
                key=np.array([rng.root_key(int(s)) for s in seeds], dtype=np.uint64))
    childs = _Columns(reserve=expected_children,
                      replica=np.int32, parent=np.int64, rel=np.float64,
                      time=np.float64, type=np.int16, rank=np.int32,
                      store=np.int64)

    per_replica = np.ones(n_rep, dtype=np.int64)
    frontier_time = np.zeros(n_rep)
    frontier_type = inds.view("type").copy()
    frontier_key = inds.view("key").copy()
    frontier_replica = inds.view("replica").copy()
    frontier_idx = np.arange(n_rep, dtype=np.int64)

    while frontier_idx.size:
        wave_parent, wave_pos, wave_rel, wave_type = [], [], [], []
        for i in range(1, p + 1):
            sel = np.nonzero(frontier_type == i)[0]
            if sel.size == 0:
                continue
            rows = frontier_idx[sel]
            keys_i = frontier_key[sel]
            windows = cutoffs[frontier_replica[sel]] - frontier_time[sel]
            for j in range(1, p + 1):
                spec = model.entry(i, j)
                if spec is None:
                    continue
                ekeys = rng.entry_key_array(keys_i, i, j, p)
                rrel, times = sample_offspring_batch(spec, ekeys, windows)
                if rrel.size == 0:
                    continue
                wave_parent.append(rows[rrel])
                wave_pos.append(sel[rrel])
                wave_rel.append(times)
                wave_type.append(np.full(times.size, j, dtype=np.int16))
        if not wave_parent:
            break
        parent = np.concatenate(wave_parent)
        pos = np.concatenate(wave_pos)
        rel = np.concatenate(wave_rel)
        ctype = np.concatenate(wave_type)
        abs_time = frontier_time[pos] + rel
        near = abs_time <= horizon

        # Children born past the horizon never reproduce: they are recorded
        # unranked and unkeyed.  Within each parent they all come after the
        # stored children in birth order, so ranks of stored children are
        # unaffected by the split.
        far = ~near
        n_far = int(far.sum())
        if n_far:
            fpos = pos[far]
            childs.append(replica=frontier_replica[fpos],
                          parent=parent[far],
                          rel=rel[far],
                          time=abs_time[far],
                          type=ctype[far],
                          rank=np.full(n_far, -1, dtype=np.int32),
                          store=np.full(n_far, -1, dtype=np.int64))

        if n_far == parent.size:
            break
        parent, pos, rel, ctype, abs_time = (
            parent[near], pos[near], rel[near], ctype[near], abs_time[near])

        # Group by parent, times ascending; lexsort stability breaks the
        # measure-zero ties by the deterministic emission order.
        perm = np.lexsort((rel, parent))
        parent, pos, rel, ctype, abs_time = (
            parent[perm], pos[perm], rel[perm], ctype[perm], abs_time[perm])

        starts = np.nonzero(np.diff(parent, prepend=parent[0] - 1))[0]
        offsets = np.repeat(starts, np.diff(np.append(starts, parent.size)))
        ranks = (np.arange(parent.size) - offsets + 1).astype(np.int32)

        parent_replica = frontier_replica[pos]
        ckeys = rng.child_key_array(frontier_key[pos], ranks)

        n_new = parent.size
        store_idx = inds.n + np.arange(n_new)
        inds.append(replica=parent_replica, time=abs_time, type=ctype,
                    parent=parent, rank=ranks, key=ckeys)
        np.add.at(per_replica, parent_replica, 1)
        if np.any(per_replica > cap):
            bad = int(np.argmax(per_replica > cap))
            raise PopulationCapError(
                f"replica {bad} exceeded the population cap of {cap} "
                f"individuals before the horizon", replica=bad)

        childs.append(replica=parent_replica, parent=parent, rel=rel,
                      time=abs_time, type=ctype, rank=ranks, store=store_idx)

        frontier_time = abs_time
        frontier_type = ctype
        frontier_key = ckeys
        frontier_replica = parent_replica
        frontier_idx = store_idx

    return _assemble(model, horizon, cutoffs, seeds, inds, childs)


def _assemble(model, horizon, cutoffs, seeds, inds: _Columns,
              childs: _Columns) -> BatchTrees:
    replica = inds.view("replica")
    time = inds.view("time")
    n = inds.n

    # Sort individuals by (replica, birth time); lexsort is stable, so
    # insertion order breaks ties and parents precede simultaneous children.
    perm = np.lexsort((time, replica))
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)

    replica = replica[perm]
    time = time[perm]
    typ = inds.view("type")[perm]
    rank = inds.view("rank")[perm]
    key = inds.view("key")[perm]
    parent = inds.view("parent")[perm]
    remap = parent >= 0
    parent[remap] = inverse[parent[remap]]

    c_parent = inverse[childs.view("parent")]
    c_store = childs.view("store").copy()
    c_remap = c_store >= 0
    c_store[c_remap] = inverse[c_store[c_remap]]

    n_rep = len(seeds)
    ind_offsets = np.searchsorted(replica, np.arange(n_rep + 1))

    # Children stay in wave order (deterministic); per-replica extraction
    # filters on child_replica instead of relying on contiguity.  Views of
    # the local growth buffers are returned as-is; nothing mutates them.
    return BatchTrees(
        model=model, horizon=horizon, tail_cutoff=cutoffs, seeds=seeds,
        ind_replica=replica, ind_time=time, ind_type=typ, ind_parent=parent,
        ind_rank=rank, ind_key=key,
        child_replica=childs.view("replica"),
        child_parent=c_parent,
        child_rel=childs.view("rel"),
        child_time=childs.view("time"),
        child_type=childs.view("type"),
        child_rank=childs.view("rank"),
        child_store=c_store,
        ind_offsets=ind_offsets)


def extract_tree(batch: BatchTrees, r: int) -> PopulationTree:
    """Single-replica view with indices rebased to the replica."""
    i0, i1 = batch.ind_offsets[r], batch.ind_offsets[r + 1]
    cmask = batch.child_replica == r
    parent = batch.ind_parent[i0:i1].copy()
    parent[parent >= 0] -= i0
    c_parent = batch.child_parent[cmask] - i0
    c_store = batch.child_store[cmask].copy()
    c_store[c_store >= 0] -= i0
    return PopulationTree(
        model=batch.model, horizon=batch.horizon,
        tail_cutoff=float(batch.tail_cutoff[r]), seed=int(batch.seeds[r]),
        ind_time=batch.ind_time[i0:i1], ind_type=batch.ind_type[i0:i1],
        ind_parent=parent, ind_rank=batch.ind_rank[i0:i1],
        ind_key=batch.ind_key[i0:i1],
        child_parent=c_parent, child_rel=batch.child_rel[cmask],
        child_time=batch.child_time[cmask], child_type=batch.child_type[cmask],
        child_rank=batch.child_rank[cmask], child_store=c_store)


def simulate(model: OffspringModel, horizon: float, tail_cutoff: float,
             seed: int, cap: int = DEFAULT_CAP) -> PopulationTree:
    """Simulate one tree; deterministic in all four arguments."""
    batch = simulate_batch(model, horizon, tail_cutoff, [seed], cap=cap)
    return extract_tree(batch, 0)


def coming_generation(tree: PopulationTree, t: float) -> ComingGeneration:
    """Members straddling time ``t``, exact up to the tail cutoff.

    The truncation bound is filled in by the martingale engine, where the
    root-dependent weights live.
    """
    if not 0.0 <= t <= tree.horizon:
        raise UsageError(f"t={t} outside [0, horizon={tree.horizon}]")
    parent_time = tree.ind_time[tree.child_parent]
    mask = (parent_time <= t) & (tree.child_time > t)
    idx = np.nonzero(mask)[0]
    return ComingGeneration(
        t=t,
        member_child_idx=idx,
        times=tree.child_time[idx],
        types=tree.child_type[idx],
        parent_idx=tree.child_parent[idx],
    )


def counting_process(tree: PopulationTree, t: float) -> np.ndarray:
    """Type-wise counts of births up to and including ``t``."""
    if not 0.0 <= t <= tree.horizon:
        raise UsageError(f"t={t} outside [0, horizon={tree.horizon}]")
    born = tree.ind_type[tree.ind_time <= t]
    return np.bincount(born, minlength=tree.model.p + 1)[1:].astype(np.int64)


def tree_to_csv_rows(tree: PopulationTree):
    """Rows (index, parent_index, child_rank, type, birth_time)."""
    for idx in range(tree.n_individuals):
        yield (idx, int(tree.ind_parent[idx]), int(tree.ind_rank[idx]),
               int(tree.ind_type[idx]), float(tree.ind_time[idx]))
