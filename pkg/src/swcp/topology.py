"""Graph families: small world, big world, comb and the complete-graph comparison graph K_M.

The big world and its subgraphs are infinite, so nothing here builds a
graph object for them. A vertex is its canonical address and neighbors
are computed from the address alone.

Address text format, used in logs and fixtures::

    +(z1;z2;...;zn)     each zi a comma separated d-tuple, e.g. +(2,0;1,-1) for d=2
"""

import itertools
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, InvalidParameter
from .rng import KM_TAG, MINUS_TAG, PLUS_TAG, SW_TAG, combine, fisher_yates_matching

# Offsets are packed into one integer per component for hashing and for the
# numba engine: 21 bits per coordinate, biased by 2**20, at most 3 coordinates.
PACK_BITS = 21
PACK_BIAS = 1 << 20
MAX_PACKED_DIM = 3


@dataclass(frozen=True)
class ModelParams:
    """Infection parameters.

    ``alpha`` is the total self + short-range mass: each of the ``(2m+1)^d``
    closed-ball trials succeeds with probability ``alpha / (2m+1)^d``.
    ``beta`` is the long-range probability and ``gamma`` the probability of
    one extra infection sent to a uniformly random grid vertex (small world only).

    The model is meant for ``alpha > beta > 0``; pass ``strict=False`` to
    allow degenerate corners such as ``alpha = beta = 0`` in tests.
    """

    alpha: float
    beta: float
    gamma: float = 0.0
    m: int = 1
    d: int = 1
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise InvalidParameter(f"m must be a positive integer, got {self.m}")
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameter(f"d must be a positive integer, got {self.d}")
        if self.alpha < 0 or self.p_short > 1.0:
            raise InvalidParameter(f"alpha/(2m+1)^d must lie in [0,1], got {self.p_short}")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParameter(f"beta must lie in [0,1], got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameter(f"gamma must lie in [0,1], got {self.gamma}")
        if self.strict and not self.alpha > self.beta > 0:
            raise InvalidParameter(
                f"expected alpha > beta > 0 (got alpha={self.alpha}, beta={self.beta}); pass strict=False to override"
            )

    @classmethod
    def from_lambda(cls, lam, r, gamma=0.0, m=1, d=1, strict=True):
        """Parameters with ``alpha + beta = lam`` and ``alpha / beta = r``."""
        if r <= 0:
            raise InvalidParameter(f"r must be positive, got {r}")
        beta = lam / (1.0 + r)
        return cls(alpha=lam - beta, beta=beta, gamma=gamma, m=m, d=d, strict=strict)

    @property
    def M(self):
        return (2 * self.m + 1) ** self.d

    @property
    def p_short(self):
        return self.alpha / (2 * self.m + 1) ** self.d

    @property
    def lam(self):
        return self.alpha + self.beta

    @property
    def r(self):
        return self.alpha / self.beta if self.beta > 0 else math.inf

    @property
    def u(self):
        return self.beta / (self.alpha + self.beta) if self.alpha + self.beta > 0 else math.nan

    def as_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "m": self.m, "d": self.d}


# ------------------------------------------------------------------ offsets


@lru_cache(maxsize=None)
def ball_offsets(m, d):
    """Nonzero offsets of the L-infinity ball of radius m, in lexicographic order."""
    return tuple(y for y in itertools.product(range(-m, m + 1), repeat=d) if any(y))


@lru_cache(maxsize=None)
def trial_offsets(m, d):
    """Closed-ball offsets in trial order: self first, then ``ball_offsets``."""
    return ((0,) * d,) + ball_offsets(m, d)


def pack(z):
    """Pack a d-vector (d <= 3, |z_i| < 2**20) into one nonnegative integer."""
    if len(z) > MAX_PACKED_DIM:
        raise InvalidParameter(f"simulation keys support d <= {MAX_PACKED_DIM}, got d={len(z)}")
    out = 0
    for i, zi in enumerate(z):
        if not -PACK_BIAS <= zi < PACK_BIAS:
            raise InvalidArgument(f"coordinate {zi} outside packable range")
        out |= (zi + PACK_BIAS) << (PACK_BITS * i)
    return out


def unpack(code, d):
    mask = (1 << PACK_BITS) - 1
    return tuple(((code >> (PACK_BITS * i)) & mask) - PACK_BIAS for i in range(d))


def pack_delta(y):
    """Signed packed offset; ``pack(z) + pack_delta(y) == pack(z + y)`` while no coordinate overflows."""
    return sum(yi << (PACK_BITS * i) for i, yi in enumerate(y))


def _linf(z):
    return max((abs(c) for c in z), default=0)


def _add(z, y):
    return tuple(a + b for a, b in zip(z, y))


# ------------------------------------------------------------- big world


@dataclass(frozen=True, order=True)
class BigWorldAddress:
    """Vertex ``sign (z_1, ..., z_n)`` of the big world.

    ``offsets`` is a tuple of d-tuples. Every component except the last is nonzero.
    """

    sign: int
    offsets: tuple

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise InvalidArgument(f"sign must be +1 or -1, got {self.sign!r}")
        if not self.offsets:
            raise InvalidArgument("an address needs at least one component")
        d = len(self.offsets[0])
        for j, z in enumerate(self.offsets):
            if len(z) != d or d == 0:
                raise InvalidArgument(f"inconsistent component dimension in {self.offsets!r}")
            if j < len(self.offsets) - 1 and not any(z):
                raise InvalidArgument(f"component {j + 1} of {self.offsets!r} is zero but not last")

    @classmethod
    def make(cls, sign, *components):
        """Convenience constructor; integer components are read as 1-vectors."""
        comps = tuple((c,) if isinstance(c, int) else tuple(c) for c in components)
        return cls(1 if sign in ("+", 1) else -1, comps)

    @property
    def level(self):
        return len(self.offsets)

    @property
    def d(self):
        return len(self.offsets[0])

    @property
    def last(self):
        return self.offsets[-1]

    def __str__(self):
        return format_address(self)


def origin(d=1):
    return BigWorldAddress(1, ((0,) * d,))


def big_world_short_neighbors(a, m, d=None):
    """The ``(2m+1)^d - 1`` short-range neighbors of ``a``, offsets in lexicographic order."""
    d = a.d if d is None else d
    if d != a.d:
        raise InvalidArgument(f"address has dimension {a.d}, expected {d}")
    head = a.offsets[:-1]
    return [BigWorldAddress(a.sign, head + (_add(a.last, y),)) for y in ball_offsets(m, d)]


def big_world_long_neighbor(a):
    """Append a zero, drop a trailing zero, or flip the sign of ``(0)``."""
    if any(a.last):
        return BigWorldAddress(a.sign, a.offsets + ((0,) * a.d,))
    if a.level > 1:
        return BigWorldAddress(a.sign, a.offsets[:-1])
    return BigWorldAddress(-a.sign, a.offsets)


def big_world_neighbors(a, m):
    return big_world_short_neighbors(a, m) + [big_world_long_neighbor(a)]


def big_world_distance(a, m):
    """Graph distance from ``+(0)`` to ``a``."""
    steps = sum(math.ceil(_linf(z) / m) for z in a.offsets) + a.level - 1
    return steps + (1 if a.sign < 0 else 0)


def address_key(a):
    """64-bit RNG key of a big-world address (prefix fold, so it matches the engine's sheet hashes)."""
    h = PLUS_TAG if a.sign > 0 else MINUS_TAG
    for z in a.offsets:
        h = combine(h, pack(z))
    return h


def big_world_ball(K, m, d=1):
    """All addresses within graph distance ``K`` of ``+(0)``, in BFS order."""
    start = origin(d)
    seen = {start: 0}
    order = [start]
    queue = deque([start])
    while queue:
        a = queue.popleft()
        if seen[a] == K:
            continue
        for b in big_world_neighbors(a, m):
            if b not in seen:
                seen[b] = seen[a] + 1
                order.append(b)
                queue.append(b)
    return order


def ball_size(K, m, d=1):
    """``N_K``: number of big-world vertices within distance K of a point."""
    return len(big_world_ball(K, m, d))


# ------------------------------------------------------------------- comb


def is_comb_vertex(a):
    if a.sign > 0 and a.level == 1:
        return True
    if a.sign > 0 and a.level == 2 and not any(a.last):
        return True
    return a.sign < 0 and a.level == 1 and not any(a.last)


def is_tooth(a):
    """Comb vertices with no short-range neighbors: ``+(z,0)`` and ``-(0)``."""
    return is_comb_vertex(a) and not (a.sign > 0 and a.level == 1)


def comb_neighbors(a, m, d=None):
    """Neighbors of a comb vertex: the big-world neighbors that lie on the comb."""
    if not is_comb_vertex(a):
        raise InvalidArgument(f"{a} is not a comb vertex")
    if is_tooth(a):
        return [big_world_long_neighbor(a)]
    return big_world_short_neighbors(a, m, d) + [big_world_long_neighbor(a)]


# -------------------------------------------------------------------- K_M


@dataclass(frozen=True, order=True)
class KMAddress:
    """Vertex ``(z_1, ..., z_n)`` of K_M: ``z_1 = 0``, ``0 <= z_j < M``, nonzero except possibly last."""

    offsets: tuple

    def __post_init__(self):
        z = self.offsets
        if not z or z[0] != 0:
            raise InvalidArgument(f"K_M address must start with 0, got {z!r}")
        for j, zj in enumerate(z[1:-1], start=1):
            if zj == 0:
                raise InvalidArgument(f"interior component {j + 1} of {z!r} is zero")

    def validate(self, M):
        if any(not 0 <= zj < M for zj in self.offsets):
            raise InvalidArgument(f"{self.offsets!r} has a component outside [0, {M})")
        return self

    @property
    def level(self):
        return len(self.offsets)

    def __str__(self):
        return "(" + ";".join(str(z) for z in self.offsets) + ")"


KM_ROOT = KMAddress((0,))


def km_long_neighbor(a):
    if a.level == 1:
        return KMAddress((0, 0))
    if a.offsets[-1] != 0:
        return KMAddress(a.offsets + (0,))
    if a.level == 2:
        return KM_ROOT
    return KMAddress(a.offsets[:-1])


def km_short_neighbors(a, M):
    """Other members of ``a``'s complete-graph copy, by increasing last component; none for the root."""
    a.validate(M)
    if a.level == 1:
        return []
    head = a.offsets[:-1]
    return [KMAddress(head + (z,)) for z in range(M) if z != a.offsets[-1]]


def km_neighbors(a, M):
    return km_short_neighbors(a, M) + [km_long_neighbor(a)]


def km_chain_state(a):
    """Image of ``a`` under the projection onto the birth-death chain."""
    n = a.level
    if n == 1:
        return 0
    return 2 * n - 3 if a.offsets[-1] == 0 else 2 * n - 2


def km_key(a):
    h = KM_TAG
    for z in a.offsets:
        h = combine(h, z)
    return h


# ------------------------------------------------------------ small world


@dataclass(frozen=True, eq=False)
class SmallWorldGraph:
    """Torus ``(Z mod R)^d`` with L-infinity radius-m edges plus one perfect matching.

    Vertex ``v`` has torus coordinates ``np.unravel_index(v, (R,)*d)``.
    ``matching[v]`` is its long-range partner.
    """

    R: int
    m: int
    d: int
    seed: int
    matching: np.ndarray

    @property
    def n(self):
        return self.R**self.d

    @property
    def M(self):
        return (2 * self.m + 1) ** self.d

    def __eq__(self, other):
        return (
            isinstance(other, SmallWorldGraph)
            and (self.R, self.m, self.d, self.seed) == (other.R, other.m, other.d, other.seed)
            and np.array_equal(self.matching, other.matching)
        )

    def __hash__(self):
        return hash((self.R, self.m, self.d, self.seed))

    def coords(self, v):
        return tuple(int(c) for c in np.unravel_index(v, (self.R,) * self.d))

    def index(self, coords):
        return int(np.ravel_multi_index(tuple(c % self.R for c in coords), (self.R,) * self.d))

    def trial_table(self):
        """``(n, M)`` array: column 0 is the vertex itself, then its short neighbors in offset order."""
        return _trial_table(self.R, self.m, self.d)

    def parallel_edge_count(self):
        """Number of matched pairs that are also short-range neighbors."""
        table = self.trial_table()
        hits = (table[:, 1:] == self.matching[:, None]).any(axis=1)
        return int(hits.sum()) // 2


def _check_torus(R, m, d):
    if int(R) != R or R < 1:
        raise InvalidParameter(f"R must be a positive integer, got {R}")
    if R % 2:
        raise InvalidParameter(f"R must be even so the vertices can be perfectly matched, got {R}")
    if R < 2 * m + 2:
        raise InvalidParameter(f"R={R} would wrap the radius-{m} ball onto itself; need R >= {2 * m + 2}")
    if m < 1 or d < 1:
        raise InvalidParameter("m and d must be positive")


@lru_cache(maxsize=16)
def _trial_table(R, m, d):
    n = R**d
    grid = np.stack(np.unravel_index(np.arange(n), (R,) * d), axis=1)
    cols = []
    for y in trial_offsets(m, d):
        shifted = (grid + np.asarray(y)) % R
        cols.append(np.ravel_multi_index(tuple(shifted.T), (R,) * d))
    table = np.stack(cols, axis=1).astype(np.int64)
    table.setflags(write=False)
    return table


def random_matching(n, seed):
    """Uniform perfect matching of ``range(n)``: keyed shuffle, then pair consecutive entries."""
    if n % 2:
        raise InvalidParameter("a perfect matching needs an even number of vertices")
    return fisher_yates_matching(int(n), int(seed))


def make_small_world(R, m, d, seed):
    """Small world on ``(Z mod R)^d`` with a matching drawn from ``seed``."""
    _check_torus(R, m, d)
    match = random_matching(R**d, seed)
    match.setflags(write=False)
    return SmallWorldGraph(R=int(R), m=int(m), d=int(d), seed=int(seed), matching=match)


def small_world_neighbors(g, v):
    """``(short, long)``: the torus ball around ``v`` minus ``v``, and ``v``'s matched partner."""
    if not 0 <= v < g.n:
        raise InvalidArgument(f"vertex {v} outside [0, {g.n})")
    row = g.trial_table()[v]
    return [int(w) for w in row[1:]], int(g.matching[v])


def small_world_key(v):
    return combine(SW_TAG, v)


def save_small_world(g, path):
    """Header line ``R m d seed`` then the matching, one integer per line."""
    with open(path, "w") as fh:
        fh.write(f"{g.R} {g.m} {g.d} {g.seed}\n")
        fh.write("\n".join(str(int(w)) for w in g.matching))
        fh.write("\n")


def load_small_world(path):
    with open(path) as fh:
        R, m, d, seed = (int(x) for x in fh.readline().split())
        match = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
    _check_torus(R, m, d)
    if match.shape != (R**d,):
        raise InvalidArgument(f"expected {R**d} matching entries, got {match.size}")
    idx = np.arange(match.size)
    if np.any(match[match] != idx) or np.any(match == idx):
        raise InvalidArgument("matching is not a fixed-point-free involution")
    match.setflags(write=False)
    return SmallWorldGraph(R=R, m=m, d=d, seed=seed, matching=match)


# ------------------------------------------------------- covering diagnostics


def cover_image(g, x, a):
    """Small-world vertex that ``a`` lands on when ``+(0)`` is placed at ``x``."""
    v = x if a.sign > 0 else int(g.matching[x])
    for j, z in enumerate(a.offsets):
        if j > 0:
            v = int(g.matching[v])
        v = g.index(_add(g.coords(v), z))
    return v


def is_ball_treelike(g, x, K):
    """True iff the radius-K ball around ``x`` is identical to the big-world ball.

    The big-world ball is lifted onto ``g`` through the covering map rooted at
    ``x``. The site is good when the map is injective on the ball and no edge
    leaving the ball's boundary lands back inside it.
    """
    if K < 0:
        raise InvalidArgument("K must be nonnegative")
    ball = big_world_ball(K, g.m, g.d)
    images = {}
    taken = set()
    for a in ball:
        v = cover_image(g, x, a)
        if v in taken:
            return False
        images[a] = v
        taken.add(v)
    depth_k = [a for a in ball if big_world_distance(a, g.m) == K]
    for a in depth_k:
        for b in big_world_neighbors(a, g.m):
            if b in images:
                continue
            if cover_image(g, x, b) in taken:
                return False
    return True


# ----------------------------------------------------------------- text I/O

_ADDR_RE = re.compile(r"^\s*([+-])\((.*)\)\s*$")


def format_address(a):
    body = ";".join(",".join(str(c) for c in z) for z in a.offsets)
    return ("+" if a.sign > 0 else "-") + "(" + body + ")"


def parse_address(text):
    match = _ADDR_RE.match(text)
    if not match:
        raise InvalidArgument(f"cannot parse address {text!r}")
    sign = 1 if match.group(1) == "+" else -1
    try:
        comps = tuple(tuple(int(c) for c in part.split(",")) for part in match.group(2).split(";"))
    except ValueError as exc:
        raise InvalidArgument(f"cannot parse address {text!r}") from exc
    return BigWorldAddress(sign, comps)
