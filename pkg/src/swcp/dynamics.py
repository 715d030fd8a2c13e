"""Discrete-time contact process and branching random walk.

Each occupied site (each particle, for the BRW) runs one block of
independent trials per step:

* ``(2m+1)^d`` trials at probability ``alpha/(2m+1)^d`` aimed at the site
  itself and its short-range neighbors (self first, then offsets in
  lexicographic order);
* one trial at probability ``beta`` aimed at the long-range neighbor;
* small world only: one trial at probability ``gamma`` aimed at a
  uniformly random vertex.

The contact process keeps the set of sites hit at least once; the BRW
counts every hit. Trials of particle ``k`` at vertex ``x`` at time ``t``
read uniforms keyed by ``(replicate, t, x, k, channel)``, so runs from
different start states under the same stream are coupled trial by trial.

The functions here are plain Python and work on every family. Batch runs
for estimators go through ``simulate_batch``, which calls the compiled
kernels in ``engine`` and reproduces these steppers exactly.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import InvalidArgument, InvalidParameter, ResourceGuardError
from .rng import (
    GAMMA_CHANNEL,
    GAMMA_TARGET_CHANNEL,
    LONG_CHANNEL,
    MINUS_TAG,
    PLUS_TAG,
    Stream,
    combine,
    replicate_keys,
    short_successes,
    to_unit,
)
from .topology import (
    KM_ROOT,
    BigWorldAddress,
    big_world_distance,
    big_world_long_neighbor,
    big_world_short_neighbors,
    address_key,
    is_comb_vertex,
    is_tooth,
    km_key,
    km_long_neighbor,
    km_short_neighbors,
    make_small_world,
    origin,
    pack,
    small_world_key,
)

DEFAULT_MAX_SITES = 10**7


@dataclass(frozen=True)
class StopOutcome:
    """How and when a run stopped: ``Extinct``, ``Returned`` or ``Censored``."""

    kind: str
    time: int

    def __post_init__(self):
        if self.kind not in ("Extinct", "Returned", "Censored"):
            raise InvalidArgument(f"unknown outcome kind {self.kind!r}")


# ----------------------------------------------------------------- families


class Family:
    """Trial layout of one graph family under fixed parameters."""

    finite = False

    def __init__(self, params):
        self.params = params
        self.p_short = params.p_short
        self.beta = params.beta
        self.gamma = params.gamma
        if params.gamma > 0 and not self.finite:
            raise InvalidParameter("gamma > 0 needs a finite graph: a uniform random vertex is undefined here")

    origin = None

    def key(self, v):
        raise NotImplementedError

    def short_targets(self, v):
        """Closed-ball targets in trial order (self first)."""
        raise NotImplementedError

    def long_target(self, v):
        raise NotImplementedError

    def random_target(self, u):
        raise NotImplementedError

    def offspring(self, v, skey):
        """Targets hit by one particle at ``v`` whose trial block is keyed by ``skey``."""
        targets = self.short_targets(v)
        out = [targets[i] for i in short_successes(skey, len(targets), self.p_short)]
        if to_unit(combine(skey, LONG_CHANNEL)) < self.beta:
            out.append(self.long_target(v))
        if self.gamma > 0 and to_unit(combine(skey, GAMMA_CHANNEL)) < self.gamma:
            out.append(self.random_target(to_unit(combine(skey, GAMMA_TARGET_CHANNEL))))
        return out


class BigWorld(Family):
    def __init__(self, params):
        super().__init__(params)
        self.origin = origin(params.d)

    def key(self, v):
        return address_key(v)

    def short_targets(self, v):
        return [v] + big_world_short_neighbors(v, self.params.m, self.params.d)

    def long_target(self, v):
        return big_world_long_neighbor(v)


class Comb(BigWorld):
    """Big world restricted to ``+(z)``, ``+(z,0)`` and ``-(0)``; teeth only fire their long trial."""

    def short_targets(self, v):
        if not is_comb_vertex(v):
            raise InvalidArgument(f"{v} is not a comb vertex")
        if is_tooth(v):
            return []
        return super().short_targets(v)


class KM(Family):
    """Complete-graph comparison graph; short births from the root stay at the root."""

    def __init__(self, params, M=None):
        super().__init__(params)
        self.M = params.M if M is None else int(M)
        self.p_short = params.alpha / self.M
        if self.p_short > 1:
            raise InvalidParameter("alpha / M must be at most 1")
        self.origin = KM_ROOT

    def key(self, v):
        return km_key(v)

    def short_targets(self, v):
        if v.level == 1:
            return [v] * self.M
        return [v] + km_short_neighbors(v, self.M)

    def long_target(self, v):
        return km_long_neighbor(v)


class SmallWorld(Family):
    finite = True

    def __init__(self, graph, params):
        if (graph.m, graph.d) != (params.m, params.d):
            raise InvalidParameter("graph and parameters disagree on m or d")
        super().__init__(params)
        self.graph = graph
        self.table = graph.trial_table()
        self.origin = 0

    def key(self, v):
        return small_world_key(v)

    def short_targets(self, v):
        return [int(w) for w in self.table[v]]

    def long_target(self, v):
        return int(self.graph.matching[v])

    def random_target(self, u):
        return min(int(u * self.graph.n), self.graph.n - 1)


@dataclass(frozen=True)
class GraphSpec:
    """Graph choice for batch runs.

    ``family`` is ``big``, ``comb`` or ``small``. A small world uses the
    fixed matching drawn from ``graph_seed`` if given, otherwise every
    replicate draws its own graph from its stream.
    """

    family: str
    R: int = None
    graph_seed: int = None

    def __post_init__(self):
        if self.family not in ("big", "comb", "small"):
            raise InvalidParameter(f"unknown graph family {self.family!r}")
        if self.family == "small" and self.R is None:
            raise InvalidParameter("a small world needs R")

    def family_for(self, params, stream=None):
        """Python ``Family`` for one replicate (draws the replicate's graph when needed)."""
        if self.family == "big":
            return BigWorld(params)
        if self.family == "comb":
            return Comb(params)
        if self.graph_seed is not None:
            seed = self.graph_seed
        elif stream is not None:
            seed = stream.subseed()
        else:
            raise InvalidArgument("per-replicate small worlds need a stream")
        return SmallWorld(make_small_world(self.R, params.m, params.d, seed), params)

    def as_dict(self):
        out = {"family": self.family}
        if self.R is not None:
            out["R"] = self.R
        if self.graph_seed is not None:
            out["graph_seed"] = self.graph_seed
        return out


# ---------------------------------------------------------------- stepping


def cp_step(state, family, stream, t):
    """One contact-process step from ``state`` (a set of vertices) at time ``t``."""
    new = set()
    step = stream.step_key(t)
    for v in sorted(state, key=family.key):
        skey = combine(combine(step, family.key(v)), 0)
        new.update(family.offspring(v, skey))
    return frozenset(new)


def brw_step(state, family, stream, t):
    """One BRW step from ``state`` (vertex -> positive count) at time ``t``."""
    new = {}
    step = stream.step_key(t)
    for v in sorted(state, key=family.key):
        xkey = combine(step, family.key(v))
        for k in range(state[v]):
            for w in family.offspring(v, combine(xkey, k)):
                new[w] = new.get(w, 0) + 1
    return new


def _check_guard(size, max_sites):
    if size > max_sites:
        raise ResourceGuardError(f"infected set reached {size} sites (cap {max_sites})")


def run_tau(start, family, horizon, stream, max_sites=DEFAULT_MAX_SITES):
    """Extinction time from ``start``; ``Censored`` at ``horizon`` if still alive."""
    if horizon < 1:
        raise InvalidArgument("horizon must be at least 1")
    state = frozenset(start)
    if not state:
        return StopOutcome("Extinct", 0)
    for t in range(horizon):
        state = cp_step(state, family, stream, t)
        if not state:
            return StopOutcome("Extinct", t + 1)
        _check_guard(len(state), max_sites)
    return StopOutcome("Censored", horizon)


def run_sigma(family, horizon, stream, max_sites=DEFAULT_MAX_SITES):
    """First ``t >= 1`` at which the process from the origin is empty or holds the origin."""
    if horizon < 1:
        raise InvalidArgument("horizon must be at least 1")
    state = frozenset([family.origin])
    for t in range(horizon):
        state = cp_step(state, family, stream, t)
        if not state:
            return StopOutcome("Extinct", t + 1)
        if family.origin in state:
            return StopOutcome("Returned", t + 1)
        _check_guard(len(state), max_sites)
    return StopOutcome("Censored", horizon)


def run_all_ones(graph, params, horizon, stream, stride=1):
    """Contact process on ``graph`` started from every vertex infected.

    Returns:
        (outcome, trajectory): ``trajectory`` holds ``|xi_t|`` for ``t = 0, stride, 2*stride, ...``
        up to the stopping time; the final entry is always the stopping time's count.
    """
    family = SmallWorld(graph, params)
    state = frozenset(range(graph.n))
    traj = [len(state)]
    for t in range(horizon):
        state = cp_step(state, family, stream, t)
        if not state:
            traj.append(0)
            return StopOutcome("Extinct", t + 1), traj
        if (t + 1) % stride == 0:
            traj.append(len(state))
    return StopOutcome("Censored", horizon), traj


# ----------------------------------------------------------- batch runner


@dataclass
class BatchResult:
    """Per-replicate results of ``simulate_batch``; rows follow ``replicates``."""

    status: np.ndarray
    time: np.ndarray
    first_return: np.ndarray
    pops: np.ndarray
    origin: np.ndarray
    replicates: np.ndarray
    seed: int
    experiment: str
    meta: dict = field(default_factory=dict)

    def outcomes(self):
        """StopOutcome per replicate (estimator-specific stops reported as Censored)."""
        out = []
        for s, t in zip(self.status, self.time):
            if s == engine.EXTINCT:
                out.append(StopOutcome("Extinct", int(t)))
            elif s == engine.RETURNED:
                out.append(StopOutcome("Returned", int(t)))
            else:
                out.append(StopOutcome("Censored", int(t)))
        return out

    def write_outcomes_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "seed", "kind", "time"])
            for r, oc in zip(self.replicates, self.outcomes()):
                w.writerow([int(r), self.seed, oc.kind, oc.time])

    @staticmethod
    def concat(parts):
        first = parts[0]
        return BatchResult(
            status=np.concatenate([p.status for p in parts]),
            time=np.concatenate([p.time for p in parts]),
            first_return=np.concatenate([p.first_return for p in parts]),
            pops=np.concatenate([p.pops for p in parts]) if first.pops.size else first.pops,
            origin=np.concatenate([p.origin for p in parts]) if first.origin.size else first.origin,
            replicates=np.concatenate([p.replicates for p in parts]),
            seed=first.seed,
            experiment=first.experiment,
            meta=first.meta,
        )


def _tree_start(start, params, family_kind):
    """Sheet tables and start arrays for the tree kernel from a list of addresses."""
    d, m = params.d, params.m
    parents, ppos, levels, hashes, dists = [-1, -1], [0, 0], [1, 1], [PLUS_TAG, MINUS_TAG], [0, 1]
    index = {(1, ()): 0, (-1, ()): 1}
    s_list, z_list = [], []
    for a in start:
        if not isinstance(a, BigWorldAddress) or a.d != d:
            raise InvalidArgument(f"start vertex {a!r} is not a {d}-dimensional address")
        if family_kind == "comb" and not is_comb_vertex(a):
            raise InvalidArgument(f"{a} is not a comb vertex")
        key = (a.sign, ())
        sheet = index[key]
        for z in a.offsets[:-1]:
            child = (a.sign, key[1] + (z,))
            if child not in index:
                index[child] = len(parents)
                parents.append(sheet)
                ppos.append(pack(z))
                levels.append(levels[sheet] + 1)
                hashes.append(combine(hashes[sheet], pack(z)))
                dists.append(dists[sheet] + math.ceil(max(abs(c) for c in z) / m) + 1)
            key = child
            sheet = index[child]
        s_list.append(sheet)
        z_list.append(pack(a.last))
    return (
        np.array(parents, dtype=np.int64),
        np.array(ppos, dtype=np.int64),
        np.array(levels, dtype=np.int64),
        np.array(hashes, dtype=np.uint64),
        np.array(dists, dtype=np.int64),
        np.array(s_list, dtype=np.int64),
        np.array(z_list, dtype=np.int64),
    )


def _run_chunk(args):
    spec, params, keys, mode, start, horizon, opts = args
    mode_code = engine.MODE_BRW if mode == "brw" else engine.MODE_CP
    if spec.family in ("big", "comb"):
        if params.gamma > 0:
            raise InvalidParameter("gamma > 0 needs a finite graph")
        if horizon * params.m >= engine.PACK_BIAS:
            raise InvalidParameter("horizon * m exceeds the packed coordinate range")
        start = [origin(params.d)] if start is None else list(start)
        tables = _tree_start(start, params, spec.family)
        return engine.tree_batch(
            keys,
            engine.FAMILY_COMB if spec.family == "comb" else engine.FAMILY_BIG,
            mode_code,
            params.d,
            params.m,
            params.p_short,
            params.beta,
            engine.packed_trial_offsets(params.m, params.d),
            *tables,
            horizon,
            opts["stop_on_return"],
            opts["window_start"],
            opts["survive_cap"],
            opts["trunc_cap"],
            opts["prune_far"],
            opts["max_sites"],
            opts["record_pop"],
            opts["record_origin"],
        )
    from .topology import _check_torus, _trial_table

    _check_torus(spec.R, params.m, params.d)
    n = spec.R**params.d
    if start is None:
        start_arr = np.zeros(1, dtype=np.int64)
    elif isinstance(start, str) and start == "all":
        start_arr = np.arange(n, dtype=np.int64)
    else:
        start_arr = np.array(sorted(start), dtype=np.int64)
    fixed = spec.graph_seed is not None
    match = engine.fisher_yates_matching(n, spec.graph_seed) if fixed else np.zeros(n, dtype=np.int64)
    vkeys = np.array([small_world_key(v) for v in range(n)], dtype=np.uint64)
    stride = opts["record_stride"] if (opts["record_pop"] or opts["record_origin"]) else 0
    return engine.small_world_batch(
        keys,
        mode_code,
        _trial_table(spec.R, params.m, params.d),
        vkeys,
        match,
        not fixed,
        params.p_short,
        params.beta,
        params.gamma,
        start_arr,
        0,
        horizon,
        opts["stop_on_return"],
        opts["window_start"],
        opts["survive_cap"],
        stride,
    )


def simulate_batch(
    spec,
    params,
    n,
    seed,
    experiment,
    horizon,
    mode="cp",
    start=None,
    stop_on_return=False,
    window_start=-1,
    survive_cap=0,
    trunc_cap=0,
    prune_far=0,
    max_sites=DEFAULT_MAX_SITES,
    record_pop=False,
    record_origin=False,
    record_stride=1,
    replicates=None,
    workers=1,
    on_resource="raise",
):
    """Run ``n`` independent replicates on the compiled kernels.

    Args:
        spec: ``GraphSpec``.
        params: ``ModelParams``.
        n: number of replicates (ignored when ``replicates`` is given).
        seed, experiment: stream identity; replicate ``r`` uses ``Stream(seed, experiment, r)``.
        horizon: last time step.
        mode: ``"cp"`` or ``"brw"``.
        start: list of start vertices, ``"all"`` (small world) or None for the origin.
        stop_on_return: stop at the first ``t >= 1`` with the origin occupied.
        window_start: if >= 0, stop once the origin is occupied at some ``t >= window_start``.
        survive_cap: if > 0, stop once the population reaches this size.
        trunc_cap: tree families. Keep at most this many particles, closest to the origin first.
        prune_far: tree families. Drop sites that cannot reach the origin by this time.
        max_sites: resource guard on the population.
        record_pop, record_origin: keep per-step totals / origin occupancy.
        record_stride: small world only, record every this many steps.
        workers: process-pool size; results do not depend on it.
        on_resource: ``"raise"`` a ``ResourceGuardError`` or ``"keep"`` the status.

    Returns:
        BatchResult
    """
    reps = np.arange(n, dtype=np.int64) if replicates is None else np.asarray(replicates, dtype=np.int64)
    if (trunc_cap or prune_far) and spec.family == "small":
        raise InvalidParameter("truncation and pruning are only defined on tree families")
    keys = replicate_keys(seed, experiment, reps)
    opts = {
        "stop_on_return": bool(stop_on_return),
        "window_start": int(window_start),
        "survive_cap": int(survive_cap),
        "trunc_cap": int(trunc_cap),
        "prune_far": int(prune_far),
        "max_sites": int(max_sites),
        "record_pop": bool(record_pop),
        "record_origin": bool(record_origin),
        "record_stride": int(record_stride),
    }
    if workers > 1 and reps.size > 1:
        chunks = np.array_split(np.arange(reps.size), workers)
        jobs = [(spec, params, keys[c], mode, start, horizon, opts) for c in chunks if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_chunk, jobs))
        parts = [
            BatchResult(*o, replicates=reps[c], seed=seed, experiment=experiment)
            for o, c in zip(outs, [c for c in chunks if c.size])
        ]
        res = BatchResult.concat(parts)
    else:
        res = BatchResult(*_run_chunk((spec, params, keys, mode, start, horizon, opts)), reps, seed, experiment)
    res.meta = {"graph": spec.as_dict(), "params": params.as_dict(), "horizon": horizon, "mode": mode}
    if on_resource == "raise" and np.any(res.status == engine.RESOURCE):
        raise ResourceGuardError(f"population exceeded {max_sites} sites in a {spec.family} run")
    return res


def distance_to_origin(v, params):
    """Graph distance to the origin for tree-family addresses."""
    return big_world_distance(v, params.m)


__all__ = [
    "BatchResult",
    "BigWorld",
    "Comb",
    "Family",
    "GraphSpec",
    "KM",
    "SmallWorld",
    "StopOutcome",
    "Stream",
    "brw_step",
    "cp_step",
    "run_all_ones",
    "run_sigma",
    "run_tau",
    "simulate_batch",
]
