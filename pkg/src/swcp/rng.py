"""Counter-based random numbers.

Every uniform used by the simulators is a pure function of a key path
``(master seed, experiment, replicate, time, vertex, particle, channel)``.
There is no sequential generator state, so two runs that visit the same
vertex at the same time in the same replicate see the same coin flips.
That is what makes the coupling tests exact, and it lets replicates run
in any order on any number of workers.

The mixer is the splitmix64 finalizer. A pure-Python and a numba version
are kept side by side; ``tests/test_rng.py`` checks they agree bit for bit.
"""

import hashlib
import math

import numba as nb
import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0

# Root tags. Distinct constants so that keys from different families never collide by design.
ROOT_TAG = 0x5EED5EED5EED5EED
PLUS_TAG = 0x2B2B2B2B00000001
MINUS_TAG = 0x2D2D2D2D00000002
SW_TAG = 0x5757575700000003
KM_TAG = 0x4B4D4B4D00000004
GRAPH_TAG = 0x4752415000000005

# Channels inside one particle's trial block. Gap draws for the
# self/short block use channels 0, 1, 2, ...
LONG_CHANNEL = 1 << 32
GAMMA_CHANNEL = LONG_CHANNEL + 1
GAMMA_TARGET_CHANNEL = LONG_CHANNEL + 2


def mix64(x):
    x &= MASK64
    x ^= x >> 30
    x = (x * _M1) & MASK64
    x ^= x >> 27
    x = (x * _M2) & MASK64
    x ^= x >> 31
    return x


def combine(h, v):
    """Fold the integer ``v`` (any sign) into hash ``h``."""
    return mix64(h ^ mix64((v + GOLDEN) & MASK64))


def to_unit(h):
    """Map a 64-bit hash to a double in [0, 1)."""
    return (h >> 11) * _INV53


def experiment_tag(name):
    """Stable 64-bit tag for an experiment id string."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def replicate_key(seed, experiment, replicate):
    """Base key of one replicate: a pure function of (seed, experiment, replicate)."""
    h = combine(ROOT_TAG, seed)
    h = combine(h, experiment_tag(experiment))
    return combine(h, replicate)


def replicate_keys(seed, experiment, replicates):
    """Vector of base keys, one per replicate index, as uint64."""
    tag = experiment_tag(experiment)
    h = combine(combine(ROOT_TAG, seed), tag)
    return np.array([combine(h, int(r)) for r in replicates], dtype=np.uint64)


def short_successes(skey, n_trials, p):
    """Indices of successful trials among ``n_trials`` Bernoulli(p) trials.

    The successes are generated by geometric skipping: the gap before the
    next success is ``floor(log(1-U)/log(1-p))``. That has the same law as
    running every trial, but only costs one uniform per success plus one.
    Gap ``j`` uses channel ``j`` of the particle key ``skey``.
    """
    if p <= 0.0 or n_trials <= 0:
        return []
    if p >= 1.0:
        return list(range(n_trials))
    logq = math.log1p(-p)
    out = []
    idx = -1
    j = 0
    while True:
        u = to_unit(combine(skey, j))
        j += 1
        g = math.log1p(-u) / logq
        if g >= n_trials:
            break
        idx += int(g) + 1
        if idx >= n_trials:
            break
        out.append(idx)
    return out


class Stream:
    """Keyed uniform source for one replicate.

    Args:
        seed: master seed.
        experiment: experiment id string; different ids give independent streams.
        replicate: replicate index.
    """

    def __init__(self, seed, experiment="default", replicate=0):
        self.seed = int(seed)
        self.experiment = experiment
        self.replicate = int(replicate)
        self.base = replicate_key(self.seed, experiment, self.replicate)

    def step_key(self, t):
        return combine(self.base, t)

    def particle_key(self, t, vertex_key, particle=0):
        return combine(combine(self.step_key(t), vertex_key), particle)

    def uniform(self, t, vertex_key, particle, channel):
        return to_unit(combine(self.particle_key(t, vertex_key, particle), channel))

    def subseed(self, tag=GRAPH_TAG):
        """A derived 63-bit integer seed, e.g. for drawing this replicate's random graph."""
        return combine(self.base, tag) >> 1

    def __repr__(self):
        return f"Stream(seed={self.seed}, experiment={self.experiment!r}, replicate={self.replicate})"


# ---------------------------------------------------------------- numba side

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_NM1 = np.uint64(_M1)
_NM2 = np.uint64(_M2)
_NGOLD = np.uint64(GOLDEN)


@nb.njit(cache=True, inline="always")
def nb_mix64(x):
    x = x ^ (x >> _U30)
    x = x * _NM1
    x = x ^ (x >> _U27)
    x = x * _NM2
    x = x ^ (x >> _U31)
    return x


@nb.njit(cache=True, inline="always")
def nb_combine(h, v):
    """``v`` must already be a uint64 (two's complement for negative ints)."""
    return nb_mix64(h ^ nb_mix64(v + _NGOLD))


@nb.njit(cache=True, inline="always")
def nb_unit(h):
    return np.float64(h >> _U11) * _INV53


def u64(v):
    """Two's-complement view of a Python int as uint64."""
    return np.uint64(v & MASK64)


@nb.njit(cache=True)
def fisher_yates_matching(n, seed):
    """Uniform perfect matching of ``range(n)`` from a keyed Fisher-Yates shuffle."""
    key = nb_combine(np.uint64(GRAPH_TAG), np.uint64(seed))
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = np.int64(nb_unit(nb_combine(key, np.uint64(i))) * (i + 1))
        if j > i:
            j = i
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    match = np.empty(n, dtype=np.int64)
    for k in range(0, n, 2):
        match[perm[k]] = perm[k + 1]
        match[perm[k + 1]] = perm[k]
    return match
