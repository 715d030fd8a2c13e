"""Critical values in closed form, the K_M birth-death chain, and Monte Carlo estimators.

Closed forms cover the comb BRW threshold, the level-matrix eigenvalue and
the first-return generating function of the chain that the walk on K_M
projects to. Estimators wrap ``dynamics.simulate_batch``.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from . import engine
from .dynamics import GraphSpec, simulate_batch
from .errors import BracketError, DomainError, InvalidArgument, InvalidParameter
from .topology import KM_ROOT, ModelParams, km_chain_state, km_long_neighbor, km_short_neighbors

# ---------------------------------------------------------------- closed forms


def comb_brw_critical(r):
    """BRW critical value on the comb at ratio ``r = alpha/beta``; independent of m.

    Args:
        r: ratio alpha/beta, positive.

    Returns:
        2(r+1)/(r+sqrt(r^2+4)).
    """
    if not r > 0:
        raise InvalidParameter(f"r must be positive, got {r}")
    return 2.0 * (r + 1.0) / (r + math.sqrt(r * r + 4.0))


def limiting_quadratic_root(r):
    """Positive root of ``lam^2/(1+r)^2 + r*lam/(1+r) - 1 = 0``.

    This is the M -> infinity limit of ``F = 1`` for the K_M chain. Solved
    with the cancellation-free form ``2|c| / (b + sqrt(b^2 - 4ac))``.
    """
    if not r > 0:
        raise InvalidParameter(f"r must be positive, got {r}")
    a = 1.0 / (1.0 + r) ** 2
    b = r / (1.0 + r)
    return 2.0 / (b + math.sqrt(b * b + 4.0 * a))


def level_matrix_eigenvalue(alpha, beta):
    """Largest eigenvalue of [[alpha, beta], [beta, 0]]: the root of x^2 - alpha x - beta^2."""
    if alpha < 0 or beta < 0:
        raise InvalidParameter("alpha and beta must be nonnegative")
    return 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0 * beta * beta))


def strong_survival_boundary(r):
    """lambda on the curve alpha + beta^2 = 1 at ratio r (alpha = r*beta)."""
    if not r > 0:
        raise InvalidParameter(f"r must be positive, got {r}")
    # beta^2 + r beta - 1 = 0
    beta = 2.0 / (r + math.sqrt(r * r + 4.0))
    return (1.0 + r) * beta


def _check_chain_args(u, M):
    if not 0.0 < u < 1.0:
        raise InvalidParameter(f"u must lie in (0, 1), got {u}")
    if M < 2:
        raise InvalidParameter(f"M must be at least 2, got {M}")


def chain_kernel(j, u, M):
    """Transition row of the projected chain at state ``j`` as ``[(state, prob), ...]``."""
    _check_chain_args(u, M)
    if j < 0 or int(j) != j:
        raise InvalidArgument(f"chain state must be a nonnegative integer, got {j}")
    if j == 0:
        return [(0, 1.0 - u), (1, u)]
    stay_or_back = (1.0 - u) / M
    onward = (1.0 - u) * (1.0 - 1.0 / M)
    if j % 2:
        return [(j - 1, u), (j, stay_or_back), (j + 1, onward)]
    return [(j - 1, stay_or_back), (j, onward), (j + 1, u)]


def chain_coefficients(lam, u, M):
    """Coefficients ``(a, b, c)`` of ``a h(2n+2) - b h(2n) + c h(2n-2) = 0``.

    Obtained by eliminating the odd states from ``h(x) = lam * sum_y r(x, y) h(y)``.
    """
    _check_chain_args(u, M)
    if not lam > 0:
        raise InvalidParameter("lambda must be positive")
    q = 1.0 - 1.0 / M
    a = lam**2 * u * (1.0 - u) * q
    b = (
        1.0
        - lam * (1.0 - u) / M
        - (lam - lam**2 * (1.0 - u) / M) * (1.0 - u) * q
        - lam**2 * (1.0 - u) ** 2 * q / M
        - lam**2 * u**2
    )
    c = lam**2 * u * (1.0 - u) / M
    return a, b, c


def chain_theta2(lam, u, M):
    """Smaller root of ``a x^2 - b x + c``; raises DomainError outside the real-root regime."""
    a, b, c = chain_coefficients(lam, u, M)
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise DomainError(f"complex roots: b^2 - 4ac = {disc:.3e} < 0 at lambda={lam}")
    if b <= 0:
        raise DomainError(f"b = {b:.3e} <= 0 at lambda={lam}: roots are not in (0, 1]")
    return 2.0 * c / (b + math.sqrt(disc))


@dataclass(frozen=True)
class ChainAnalysis:
    lam: float
    r: float
    M: int
    u: float
    a: float
    b: float
    c: float
    theta2: float
    h1: float
    F: float
    G: float  # inf when F >= 1

    @property
    def theta1(self):
        return (self.b + math.sqrt(max(self.b * self.b - 4 * self.a * self.c, 0.0))) / (2 * self.a)


def chain_F(lam, u, M):
    """First-return generating function of the chain at 0, with its ingredients.

    Args:
        lam: generating-function variable (the BRW mean offspring).
        u: probability of a long-range step, ``1/(1+r)``.
        M: complete-graph size.

    Returns:
        ChainAnalysis
    """
    a, b, c = chain_coefficients(lam, u, M)
    theta2 = chain_theta2(lam, u, M)
    denom = 1.0 - lam * (1.0 - u) / M
    if denom <= 0:
        raise DomainError(f"1 - lambda(1-u)/M = {denom:.3e} <= 0")
    h1 = lam * (u + (1.0 - u) * (1.0 - 1.0 / M) * theta2) / denom
    F = lam * (1.0 - u + u * h1)
    G = 1.0 / (1.0 - F) if F < 1.0 else math.inf
    return ChainAnalysis(lam, (1.0 - u) / u, M, u, a, b, c, theta2, h1, F, G)


def chain_F_limit(lam, u):
    """M -> infinity limit of ``F``: ``lam (1-u) + u^2 lam^2``."""
    return lam * (1.0 - u) + (u * lam) ** 2


def _below_one(lam, u, M):
    try:
        return chain_F(lam, u, M).F < 1.0
    except DomainError:
        # past the radius of convergence the series diverges
        return False


@dataclass(frozen=True)
class LowerBound:
    value: float
    active: str  # "radius" when F < 1 up to the radius of convergence, "F=1" otherwise
    F_at_value: float
    iterations: int


def lambda2_brw_lower_bound(r, M, tol=1e-9, detail=False):
    """sup{lam : F(lam) < 1} for the K_M chain, by bisection on the predicate.

    ``F`` is increasing in ``lam`` and the series only converges up to a
    finite radius, where ``b^2 = 4ac``. Points past the radius count as
    ``F = inf``, so the supremum is either a root of ``F = 1`` or the radius
    itself; ``detail=True`` reports which.
    """
    if not r > 0:
        raise InvalidParameter(f"r must be positive, got {r}")
    u = 1.0 / (1.0 + r)
    lo = 1e-6
    if not _below_one(lo, u, M):
        raise DomainError("F >= 1 already at lambda = 1e-6", )
    hi = 1.0
    while _below_one(hi, u, M):
        lo = hi
        hi *= 1.5
        if hi > 1e6:
            raise DomainError(f"no upper bracket for r={r}, M={M}")
    n = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _below_one(mid, u, M):
            lo = mid
        else:
            hi = mid
        n += 1
    if not detail:
        return lo
    F_lo = chain_F(lo, u, M).F
    try:
        chain_F(hi, u, M)
        active = "F=1"
    except DomainError:
        active = "radius"
    return LowerBound(lo, active, F_lo, n)


# --------------------------------------------------------- chain simulation


def _chain_step(states, u, M, rng):
    """Vectorized one-step move of independent chains."""
    U = rng.random(states.size)
    s = states
    out = s.copy()
    zero = s == 0
    odd = (s % 2 == 1)
    even = ~zero & ~odd
    p_sb = (1.0 - u) / M
    # state 0
    out[zero & (U < u)] = 1
    # odd: down with u, stay with (1-u)/M, else up
    out[odd & (U < u)] = s[odd & (U < u)] - 1
    up_odd = odd & (U >= u + p_sb)
    out[up_odd] = s[up_odd] + 1
    # even: up with u, down with (1-u)/M, else stay
    out[even & (U < u)] = s[even & (U < u)] + 1
    dn = even & (U >= u) & (U < u + p_sb)
    out[dn] = s[dn] - 1
    return out


def simulate_chain_F(lam, r, M, n, k_max, seed):
    """Monte Carlo ``sum_{k <= k_max} lam^k P(tau = k)`` for the first return ``tau`` to 0.

    Returns:
        (estimate, stderr, n_unreturned)
    """
    u = 1.0 / (1.0 + r)
    rng = np.random.default_rng(seed)
    states = np.zeros(n, dtype=np.int64)
    tau = np.full(n, -1, dtype=np.int64)
    alive = np.arange(n)
    for k in range(1, k_max + 1):
        st = _chain_step(states[alive], u, M, rng)
        hit = st == 0
        tau[alive[hit]] = k
        states[alive] = st
        alive = alive[~hit]
        if alive.size == 0:
            break
    w = np.where(tau > 0, np.power(float(lam), np.maximum(tau, 0)), 0.0)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n)), int((tau < 0).sum())


def simulate_chain_green(lam, r, M, n, k_max, seed):
    """Monte Carlo ``sum_{k <= k_max} lam^k P(S_k = 0)`` with ``S_0 = 0`` (includes k = 0).

    Returns:
        (estimate, stderr)
    """
    u = 1.0 / (1.0 + r)
    rng = np.random.default_rng(seed)
    states = np.zeros(n, dtype=np.int64)
    acc = np.ones(n)
    for k in range(1, k_max + 1):
        states = _chain_step(states, u, M, rng)
        acc += (lam**k) * (states == 0)
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n))


def km_walk_transitions(r, M, n_walks, steps, seed, max_state=None):
    """Walk one particle on K_M and tally transitions of its chain image.

    From a vertex the walk moves to the target of one birth, chosen in
    proportion to the birth probabilities (``alpha/M`` per closed-ball
    target, ``beta`` along the long edge). From the root every short
    birth stays at the root.

    Returns:
        counts: dict ``j -> dict(j' -> count)``.
    """
    u = 1.0 / (1.0 + r)
    rng = np.random.default_rng(seed)
    counts = {}
    for _ in range(n_walks):
        v = KM_ROOT
        j = 0
        for _ in range(steps):
            U = rng.random()
            if U < u:
                w = km_long_neighbor(v)
            elif v.level == 1:
                w = v
            else:
                k = int(rng.integers(M))
                w = v if k == 0 else km_short_neighbors(v, M)[k - 1]
            jw = km_chain_state(w)
            row = counts.setdefault(j, {})
            row[jw] = row.get(jw, 0) + 1
            v, j = w, jw
            if max_state is not None and j > max_state:
                break
    return counts


# ---------------------------------------------------------------- estimators

_Z95 = float(norm.ppf(0.975))


def wilson_interval(k, n, z=_Z95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass
class Estimate:
    value: float
    stderr: float
    ci_low: float
    ci_high: float
    replicates: int
    censored: int
    seed: int

    @classmethod
    def from_counts(cls, k, n, censored, seed):
        p = k / n if n else 0.0
        lo, hi = wilson_interval(k, n)
        # the Wilson interval always contains p up to rounding; clamp to keep the invariant exact
        return cls(p, math.sqrt(p * (1 - p) / n) if n else 0.0, min(lo, p), max(hi, p), n, censored, seed)


def estimate_record(operation, est, params, horizon, graph=None, M=None):
    """JSON-ready estimator record."""
    ps = {"alpha": params.alpha, "beta": params.beta, "gamma": params.gamma, "m": params.m, "d": params.d}
    if graph is not None and graph.R is not None:
        ps["R"] = graph.R
    if M is not None:
        ps["M"] = M
    return {
        "operation": operation,
        "params": ps,
        "horizon": horizon,
        "replicates": est.replicates,
        "censored": est.censored,
        "value": est.value,
        "stderr": est.stderr,
        "ci": [est.ci_low, est.ci_high],
        "seed": est.seed,
    }


@dataclass(frozen=True)
class Classifier:
    """How one replicate is scored.

    ``kind`` is ``survival`` (alive at T) or ``return`` (origin occupied at
    some time in ``[T - window, T]``). ``survive_cap`` lets the survival
    classifier stop a replicate once its population reaches the cap.
    ``trunc_cap`` keeps only the particles closest to the origin for the
    return classifier; that is a lower bound for the untruncated process.
    """

    kind: str = "survival"
    window: int = None
    survive_cap: int = 0
    trunc_cap: int = 0
    mode: str = "cp"

    def __post_init__(self):
        if self.kind not in ("survival", "return"):
            raise InvalidParameter(f"unknown classifier {self.kind!r}")

    def window_for(self, T):
        w = T // 5 if self.window is None else self.window
        if not 0 <= w <= T:
            raise InvalidParameter(f"window must lie in [0, T], got {w}")
        return w


def _score(spec, params, T, reps, seed, experiment, clf, workers):
    """(successes, censored) over replicate indices ``reps``."""
    if clf.kind == "survival":
        res = simulate_batch(
            spec, params, 0, seed, experiment, T, mode=clf.mode, survive_cap=clf.survive_cap,
            replicates=reps, workers=workers,
        )
        alive = res.status != engine.EXTINCT
        return int(alive.sum()), 0
    w = clf.window_for(T)
    tree = spec.family != "small"
    res = simulate_batch(
        spec, params, 0, seed, experiment, T, mode=clf.mode, window_start=T - w,
        prune_far=T if tree else 0, trunc_cap=clf.trunc_cap if tree else 0,
        replicates=reps, workers=workers,
    )
    hit = res.status == engine.WINDOW_HIT
    censored = int((res.status == engine.CENSORED).sum())
    return int(hit.sum()), censored


def estimate_survival_probability(spec, params, T, n, seed, survive_cap=0, mode="cp", experiment="survival", workers=1):
    """P(process from the origin is alive at T), Wilson 95% CI.

    With ``survive_cap > 0`` a replicate whose population reaches the cap is
    scored alive without running to T.
    """
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    clf = Classifier("survival", survive_cap=survive_cap, mode=mode)
    k, cens = _score(spec, params, T, np.arange(n), seed, experiment, clf, workers)
    return Estimate.from_counts(k, n, cens, seed)


def estimate_return_probability(spec, params, T, window, n, seed, trunc_cap=0, mode="cp", experiment="return", workers=1):
    """P(origin occupied at some t in [T - window, T]), Wilson 95% CI.

    On tree families sites that cannot reach the origin by T are dropped
    (exact); ``trunc_cap > 0`` additionally keeps only the closest particles.
    ``censored`` counts replicates alive at T without a hit.
    """
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    if not 0 <= window <= T:
        raise InvalidParameter("window must lie in [0, T]")
    clf = Classifier("return", window=window, trunc_cap=trunc_cap, mode=mode)
    k, cens = _score(spec, params, T, np.arange(n), seed, experiment, clf, workers)
    return Estimate.from_counts(k, n, cens, seed)


@dataclass
class TraceRow:
    iteration: int
    lam: float
    estimate: float
    ci_low: float
    ci_high: float
    decision: str


@dataclass
class BisectionResult:
    lam_low: float
    lam_high: float
    resolved: bool
    trace: list = field(default_factory=list)

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "lambda", "estimate", "ci_low", "ci_high", "decision"])
            for row in self.trace:
                w.writerow([row.iteration, repr(row.lam), repr(row.estimate), repr(row.ci_low), repr(row.ci_high), row.decision])


def bisect_critical(
    spec,
    r,
    classifier,
    bracket,
    T,
    n,
    seed,
    m=1,
    d=1,
    threshold=0.02,
    tol=0.02,
    max_replicates=None,
    experiment=None,
    workers=1,
    strict=True,
):
    """Bisect on lambda at fixed r for where the classifier crosses ``threshold``.

    A point is ``below`` when its CI lies under the threshold, ``above`` when
    it lies over it, and a ``tie`` otherwise. Ties double the replicate count
    (new replicate indices, merged counts) up to ``max_replicates``; a
    persistent tie stops the search and the current bracket is returned with
    ``resolved=False``. All points share one stream, so neighbouring
    lambdas see common random numbers.

    Returns:
        BisectionResult: ``lam_low`` certified below, ``lam_high`` certified above.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise BracketError(f"degenerate bracket [{lo}, {hi}]", {"bracket": (lo, hi)})
    max_replicates = 4 * n if max_replicates is None else max_replicates
    experiment = experiment or f"bisect-{classifier.kind}"
    trace = []

    def evaluate(lam):
        params = ModelParams.from_lambda(lam, r, m=m, d=d, strict=strict)
        k_tot, cens_tot, done = 0, 0, 0
        size = n
        while True:
            reps = np.arange(done, done + size)
            k, cens = _score(spec, params, T, reps, seed, experiment, classifier, workers)
            k_tot, cens_tot, done = k_tot + k, cens_tot + cens, done + size
            est = Estimate.from_counts(k_tot, done, cens_tot, seed)
            if est.ci_high < threshold:
                dec = "below"
            elif est.ci_low > threshold:
                dec = "above"
            else:
                dec = "tie"
            trace.append(TraceRow(len(trace), lam, est.value, est.ci_low, est.ci_high, dec))
            if dec != "tie" or 2 * done > max_replicates:
                return dec
            size = done

    d_lo = evaluate(lo)
    d_hi = evaluate(hi)
    if d_lo != "below" or d_hi != "above":
        raise BracketError(
            f"bracket [{lo}, {hi}] does not straddle {threshold}: {d_lo} / {d_hi}",
            {"trace": [asdict(t) for t in trace]},
        )
    resolved = True
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        dec = evaluate(mid)
        if dec == "below":
            lo = mid
        elif dec == "above":
            hi = mid
        else:
            resolved = False
            break
    return BisectionResult(lo, hi, resolved, trace)


# ------------------------------------------------------------- growth rate


@dataclass
class GrowthRateEstimate:
    c2_hat: float
    slope_stderr: float
    intercept: float
    t_range: tuple
    log_means: list
    residuals: dict
    mode: str

    @property
    def z(self):
        return self.c2_hat / self.slope_stderr if self.slope_stderr > 0 else math.copysign(math.inf, self.c2_hat)


def _slope(ts, y):
    A = np.vstack([ts, np.ones_like(ts)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef[0], coef[1]


def estimate_growth_rate(
    params,
    t_min,
    t_max,
    n,
    seed,
    mode="cp",
    spec=None,
    pairs=((5, 5), (5, 10)),
    n_boot=400,
    experiment="growth",
    workers=1,
):
    """Least-squares slope of log E|B_t| over ``[t_min, t_max]`` on the big world.

    The log-means at different t come from the same trajectories, so the
    standard errors of the slope and of the residuals
    ``log E|B_{t+s}| - log E|B_t| - log E|B_s|`` are bootstrapped over
    replicates (``n_boot`` resamples, seeded from ``seed``).

    Returns:
        GrowthRateEstimate; ``c2_hat = -inf`` when some mean in range is 0.
    """
    if not 0 <= t_min < t_max:
        raise InvalidParameter("need 0 <= t_min < t_max")
    spec = GraphSpec("big") if spec is None else spec
    t_need = max([t_max] + [t + s for t, s in pairs])
    res = simulate_batch(spec, params, n, seed, experiment, t_need, mode=mode, record_pop=True, workers=workers)
    pops = res.pops.astype(np.float64)
    ts = np.arange(t_min, t_max + 1, dtype=np.float64)
    means = pops.mean(axis=0)
    boot_rng = np.random.default_rng([seed, 0x6B])
    idx = boot_rng.integers(0, n, size=(n_boot, n))

    def stats(mean_row):
        with np.errstate(divide="ignore"):
            lm = np.log(mean_row)
        if np.any(~np.isfinite(lm[t_min : t_max + 1])):
            sl, ic = -math.inf, math.nan
        else:
            sl, ic = _slope(ts, lm[t_min : t_max + 1])
        with np.errstate(invalid="ignore"):
            # nan once the process is dead at both ends of a pair
            resid = [lm[t + s] - lm[t] - lm[s] for t, s in pairs]
        return sl, ic, resid

    sl, ic, resid = stats(means)
    boot_sl, boot_res = [], []
    for row in idx:
        b_sl, _, b_res = stats(pops[row].mean(axis=0))
        boot_sl.append(b_sl)
        boot_res.append(b_res)
    boot_sl = np.array(boot_sl)
    boot_res = np.array(boot_res)
    se = float(np.std(boot_sl[np.isfinite(boot_sl)], ddof=1)) if np.isfinite(sl) else math.nan
    residuals = {}
    for k, (t, s) in enumerate(pairs):
        col = boot_res[:, k]
        col = col[np.isfinite(col)]
        residuals[(t, s)] = (float(resid[k]), float(np.std(col, ddof=1)) if col.size > 1 else math.nan)
    with np.errstate(divide="ignore"):
        log_means = [(int(t), float(np.log(means[t]))) for t in range(t_min, t_max + 1)]
    return GrowthRateEstimate(float(sl), se, float(ic), (t_min, t_max), log_means, residuals, mode)


def dump_json(obj, path):
    """Deterministic JSON (sorted keys, fixed float repr)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
