"""Rectangle probabilities and equicoordinate quantiles of multivariate t.

One and two dimensions are computed by deterministic formulas (univariate
CDF; Drezner-Wesolowsky quadrature for the bivariate normal and the
Dunnett-Sobel series for the bivariate t).  Higher dimensions use Genz's
separation-of-variables transform, integrated by randomized rank-1
lattice rules with variable prioritization.  Results are deterministic for
a given seed.

``df = inf`` means the multivariate normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special, stats

from .errors import MvtAccuracyError

__all__ = [
    "MvtProblem",
    "mvt_cdf",
    "mvt_probability",
    "equicoordinate_quantile",
    "bvn_cdf",
    "bvt_cdf",
]

DEFAULT_TOL = 1e-4
DEFAULT_SEED = 42
DEFAULT_MAX_POINTS = 10_000_000
N_SHIFTS = 12
ERROR_FACTOR = 3.0
DEGENERATE_VAR = 1e-12
MERGE_TOL = 1e-10
BVT_SERIES_MAX_DF = 5000
_CHUNK = 1 << 15
_U_MAX = 1.0 - 2.0**-53
_U_MIN = 1e-300


@dataclass(frozen=True)
class MvtProblem:
    """``P(lower <= T <= upper)`` for ``T`` standard multivariate t with correlation ``corr``."""

    upper: NDArray[np.float64]
    corr: NDArray[np.float64]
    df: float = math.inf
    lower: NDArray[np.float64] | None = None
    tol: float = DEFAULT_TOL
    seed: int = DEFAULT_SEED
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        R = np.atleast_2d(np.asarray(self.corr, dtype=float))
        q = upper.size
        lower = (
            np.full(q, -np.inf)
            if self.lower is None
            else np.atleast_1d(np.asarray(self.lower, dtype=float))
        )
        if q < 1:
            raise ValueError("need at least one coordinate")
        if R.shape != (q, q) or lower.shape != (q,):
            raise ValueError(f"shape mismatch: {q} bounds, correlation {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise ValueError("corr must be a symmetric matrix with unit diagonal")
        if np.linalg.eigvalsh(R).min() < -1e-8:
            raise ValueError("corr is not positive semidefinite")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not (self.df > 0):
            raise ValueError("df must be positive")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "corr", R)
        object.__setattr__(self, "df", float(self.df))


# ---------------------------------------------------------------------------
# univariate and bivariate distribution functions
# ---------------------------------------------------------------------------


def _t_cdf(x, df: float):
    if math.isinf(df):
        return special.ndtr(x)
    return special.stdtr(df, x)


@lru_cache(maxsize=None)
def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def _bvnu(h: float, k: float, r: float) -> float:
    """``P(X > h, Y > k)`` for a standard bivariate normal with correlation ``r``."""
    if h == np.inf or k == np.inf:
        return 0.0
    if h == -np.inf:
        return float(special.ndtr(-k))
    if k == -np.inf:
        return float(special.ndtr(-h))
    if r >= 1.0:
        return float(special.ndtr(-max(h, k)))
    if r <= -1.0:
        return float(max(0.0, special.ndtr(-h) - special.ndtr(k)))
    ar = abs(r)
    n = 12 if ar < 0.3 else (24 if ar < 0.75 else 40)
    x, w = _gl(n)
    hk = h * k
    tp = 2 * math.pi
    if ar < 0.925:
        hs = (h * h + k * k) / 2
        asr = math.asin(r)
        sn = np.sin(asr * (x + 1) / 2)
        bvn = np.sum(w * np.exp((sn * hk - hs) / (1 - sn * sn)))
        return float(bvn * asr / (2 * tp) + special.ndtr(-h) * special.ndtr(-k))
    if r < 0:
        k = -k
        hk = -hk
    as_ = (1 - r) * (1 + r)
    a = math.sqrt(as_)
    bs = (h - k) ** 2
    c = (4 - hk) / 8
    d = (12 - hk) / 16
    bvn = a * math.exp(-(bs / as_ + hk) / 2) * (1 - c * (bs - as_) * (1 - d * bs / 5) / 3 + c * d * as_ * as_ / 5)
    if hk > -160:
        b = math.sqrt(bs)
        bvn -= math.exp(-hk / 2) * math.sqrt(tp) * special.ndtr(-b / a) * b * (1 - c * bs * (1 - d * bs / 5) / 3)
    a2 = a / 2
    xs = (a2 * (x + 1)) ** 2
    rs = np.sqrt(1 - xs)
    asr = -(bs / xs + hk) / 2
    ok = asr > -100
    terms = np.zeros_like(xs)
    terms[ok] = np.exp(asr[ok]) * (
        np.exp(-hk * (1 - rs[ok]) / (2 * (1 + rs[ok]))) / rs[ok] - (1 + c * xs[ok] * (1 + d * xs[ok]))
    )
    bvn += a2 * np.sum(w * terms)
    bvn = -bvn / tp
    if r > 0:
        bvn += special.ndtr(-max(h, k))
    else:
        bvn = -bvn
        if k > h:
            if h < 0:
                bvn += special.ndtr(k) - special.ndtr(h)
            else:
                bvn += special.ndtr(-h) - special.ndtr(-k)
    return float(min(1.0, max(0.0, bvn)))


def bvn_cdf(h: float, k: float, r: float) -> float:
    """``P(X <= h, Y <= k)`` for the standard bivariate normal."""
    return _bvnu(-h, -k, r)


def _bvtl_series(nu: int, dh: float, dk: float, r: float) -> float:
    """Dunnett-Sobel series for ``P(X <= dh, Y <= dk)``, integer ``nu``."""
    eps = 1e-15
    if 1 - r <= eps:
        return float(special.stdtr(nu, min(dh, dk)))
    if r + 1 <= eps:
        return float(max(0.0, special.stdtr(nu, dh) - special.stdtr(nu, -dk)))
    pi = math.pi
    tpi = 2 * pi
    snu = math.sqrt(nu)
    ors = 1 - r * r
    hrk = dh - r * dk
    krh = dk - r * dh
    if abs(hrk) + ors > 0:
        xnhk = hrk**2 / (hrk**2 + ors * (nu + dk**2))
        xnkh = krh**2 / (krh**2 + ors * (nu + dh**2))
    else:
        xnhk = xnkh = 0.0
    hs = 1.0 if hrk >= 0 else -1.0
    ks = 1.0 if krh >= 0 else -1.0
    if nu % 2 == 0:
        bvt = math.atan2(math.sqrt(ors), -r) / tpi
        gmph = dh / math.sqrt(16 * (nu + dh**2))
        gmpk = dk / math.sqrt(16 * (nu + dk**2))
        btnckh = 2 * math.atan2(math.sqrt(xnkh), math.sqrt(1 - xnkh)) / pi
        btpdkh = 2 * math.sqrt(xnkh * (1 - xnkh)) / pi
        btnchk = 2 * math.atan2(math.sqrt(xnhk), math.sqrt(1 - xnhk)) / pi
        btpdhk = 2 * math.sqrt(xnhk * (1 - xnhk)) / pi
        for j in range(1, nu // 2 + 1):
            bvt += gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btnckh += btpdkh
            btpdkh = 2 * j * btpdkh * (1 - xnkh) / (2 * j + 1)
            btnchk += btpdhk
            btpdhk = 2 * j * btpdhk * (1 - xnhk) / (2 * j + 1)
            gmph = gmph * (2 * j - 1) / (2 * j * (1 + dh**2 / nu))
            gmpk = gmpk * (2 * j - 1) / (2 * j * (1 + dk**2 / nu))
    else:
        qhrk = math.sqrt(dh**2 + dk**2 - 2 * r * dh * dk + nu * ors)
        hkrn = dh * dk + r * nu
        hkn = dh * dk - nu
        hpk = dh + dk
        bvt = math.atan2(-snu * (hkn * qhrk + hpk * hkrn), hkn * hkrn - nu * hpk * qhrk) / tpi
        if bvt < -eps:
            bvt += 1
        gmph = dh / (tpi * snu * (1 + dh**2 / nu))
        gmpk = dk / (tpi * snu * (1 + dk**2 / nu))
        btnckh = btpdkh = math.sqrt(xnkh)
        btnchk = btpdhk = math.sqrt(xnhk)
        for j in range(1, (nu - 1) // 2 + 1):
            bvt += gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btpdkh = (2 * j - 1) * btpdkh * (1 - xnkh) / (2 * j)
            btnckh += btpdkh
            btpdhk = (2 * j - 1) * btpdhk * (1 - xnhk) / (2 * j)
            btnchk += btpdhk
            gmph = gmph * 2 * j / ((2 * j + 1) * (1 + dh**2 / nu))
            gmpk = gmpk * 2 * j / ((2 * j + 1) * (1 + dk**2 / nu))
    return float(min(1.0, max(0.0, bvt)))


_MIX_EDGES = np.array(
    [0, 1e-12, 1e-8, 1e-5, 1e-3, 0.02, 0.15, 0.5, 0.85, 0.98, 1 - 1e-3, 1 - 1e-5, 1 - 1e-8, 1 - 1e-12, 1]
)


@lru_cache(maxsize=64)
def _mix_nodes(df: float):
    x, w = _gl(20)
    lo, hi = _MIX_EDGES[:-1, None], _MIX_EDGES[1:, None]
    u = (lo + (hi - lo) * (x + 1) / 2).ravel()
    wt = ((hi - lo) / 2 * w).ravel()
    return np.sqrt(special.chdtri(df, 1 - u) / df), wt


def _bvt_mixture(df: float, h: float, k: float, r: float) -> float:
    """Bivariate t as a scale mixture of bivariate normals.

    Composite Gauss-Legendre in the chi quantile, with panels graded towards
    both ends where the scale varies fastest.
    """
    s, wt = _mix_nodes(float(df))
    vals = np.array([bvn_cdf(h * si, k * si, r) for si in s])
    return float(np.sum(wt * vals))


def bvt_cdf(h: float, k: float, r: float, df: float = math.inf) -> float:
    """``P(T1 <= h, T2 <= k)`` for the standard bivariate t (normal when ``df`` is infinite)."""
    if math.isinf(df):
        return bvn_cdf(h, k, r)
    if h == -np.inf or k == -np.inf:
        return 0.0
    if h == np.inf:
        return float(special.stdtr(df, k))
    if k == np.inf:
        return float(special.stdtr(df, h))
    if float(df).is_integer() and df <= BVT_SERIES_MAX_DF:
        return _bvtl_series(int(df), h, k, r)
    return _bvt_mixture(df, h, k, r)


def _bivariate_rect(a, b, r: float, df: float) -> float:
    F = lambda h, k: bvt_cdf(h, k, r, df)  # noqa: E731
    p = F(b[0], b[1]) - F(a[0], b[1]) - F(b[0], a[1]) + F(a[0], a[1])
    return float(min(1.0, max(0.0, p)))


# ---------------------------------------------------------------------------
# dimension reduction
# ---------------------------------------------------------------------------


def _reduce(a: NDArray, b: NDArray, R: NDArray):
    """Drop unbounded coordinates and merge perfectly (anti)correlated pairs."""
    keep = ~(np.isneginf(a) & np.isposinf(b))
    a, b, R = a[keep], b[keep], R[np.ix_(keep, keep)]
    a, b = a.copy(), b.copy()
    active = list(range(a.size))
    i = 0
    while i < len(active):
        ii = active[i]
        j = i + 1
        while j < len(active):
            jj = active[j]
            rho = R[ii, jj]
            if rho >= 1 - MERGE_TOL:
                a[ii], b[ii] = max(a[ii], a[jj]), min(b[ii], b[jj])
                active.pop(j)
            elif rho <= -1 + MERGE_TOL:
                a[ii], b[ii] = max(a[ii], -b[jj]), min(b[ii], -a[jj])
                active.pop(j)
            else:
                j += 1
        i += 1
    idx = np.array(active, dtype=int)
    return a[idx], b[idx], R[np.ix_(idx, idx)]


# ---------------------------------------------------------------------------
# Genz separation of variables with randomized lattice rules
# ---------------------------------------------------------------------------


def _prioritized_cholesky(a: NDArray, b: NDArray, R: NDArray):
    """Cholesky factor with variables ordered by smallest expected interval probability."""
    m = a.size
    a, b, C = a.copy(), b.copy(), R.copy()
    L = np.zeros((m, m))
    y = np.zeros(m)
    for i in range(m):
        best, best_p = i, np.inf
        for j in range(i, m):
            s2 = C[j, j] - L[j, :i] @ L[j, :i]
            if s2 <= DEGENERATE_VAR:
                p = np.inf  # deterministic given the others: place last
            else:
                s = math.sqrt(s2)
                mu = L[j, :i] @ y[:i]
                p = special.ndtr((b[j] - mu) / s) - special.ndtr((a[j] - mu) / s)
            if p < best_p:
                best, best_p = j, p
        if best != i:
            for arr in (a, b):
                arr[[i, best]] = arr[[best, i]]
            C[[i, best], :] = C[[best, i], :]
            C[:, [i, best]] = C[:, [best, i]]
            L[[i, best], :] = L[[best, i], :]
        s2 = C[i, i] - L[i, :i] @ L[i, :i]
        if s2 <= DEGENERATE_VAR:
            L[i, i] = 0.0
            y[i] = 0.0
            continue
        L[i, i] = math.sqrt(s2)
        if i + 1 < m:
            L[i + 1 :, i] = (C[i + 1 :, i] - L[i + 1 :, :i] @ L[i, :i]) / L[i, i]
        mu = L[i, :i] @ y[:i]
        lo, hi = (a[i] - mu) / L[i, i], (b[i] - mu) / L[i, i]
        den = special.ndtr(hi) - special.ndtr(lo)
        if den > 1e-300:
            y[i] = (_phi(lo) - _phi(hi)) / den
        else:
            y[i] = lo if np.isfinite(lo) else hi
    return a, b, L


def _phi(x: float) -> float:
    return 0.0 if not np.isfinite(x) else math.exp(-x * x / 2) / math.sqrt(2 * math.pi)


def _integrand(x: NDArray, s: NDArray | None, a: NDArray, b: NDArray, L: NDArray) -> NDArray:
    """Genz's conditioned product for one block of points ``x``.

    ``s`` holds the chi scales of a t problem (``None`` for the normal case).
    Works dimension-major and in place; infinite limits skip their CDF call.
    """
    N = x.shape[0]
    m = a.size
    f = np.ones(N)
    Y = np.empty((m, N))
    mu = np.zeros(N)
    buf = np.empty(N)
    lo = np.empty(N)

    def scaled(limit, out):
        if s is None:
            np.subtract(limit, mu, out=out)
        else:
            np.multiply(s, limit, out=out)
            out -= mu
        return out

    for i in range(m):
        if i:
            np.dot(L[i, :i], Y[:i], out=mu)
        fa, fb = np.isfinite(a[i]), np.isfinite(b[i])
        d = L[i, i]
        if d > 0:
            inv = 1.0 / d
            if fb:
                hi = special.ndtr(scaled(b[i], buf) * inv)
            else:
                hi = np.ones(N)
            if fa:
                scaled(a[i], lo)
                lo *= inv
                special.ndtr(lo, out=lo)
                hi -= lo
                np.clip(hi, 0.0, 1.0, out=hi)
            f *= hi
            if i < m - 1:
                np.multiply(x[:, i], hi, out=buf)
                if fa:
                    buf += lo
                np.clip(buf, _U_MIN, _U_MAX, out=buf)
                special.ndtri(buf, out=Y[i])
        else:
            # degenerate direction: the coordinate is a deterministic function of earlier ones
            if fa:
                f *= mu >= (a[i] if s is None else a[i] * s)
            if fb:
                f *= mu <= (b[i] if s is None else b[i] * s)
            Y[i] = 0.0
    return f


@lru_cache(maxsize=None)
def _lattice_generator(d: int) -> NDArray:
    primes = []
    cand = 2
    while len(primes) < d:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return np.sqrt(np.array(primes, dtype=float)) % 1.0


class _ScaleCache:
    """Byte-bounded FIFO cache of chi scales for t problems.

    The chi variable is the first lattice coordinate with its own random
    shifts, so its scales depend only on (seed, index range, df) and are
    shared by every problem dimension, p-value and quantile step.
    """

    def __init__(self, max_bytes: int = 256 * 2**20):
        self.max_bytes = max_bytes
        self.store: dict[tuple, NDArray] = {}
        self.nbytes = 0

    def get(self, seed: int, start: int, stop: int, df: float) -> NDArray:
        key = (seed, start, stop, df)
        hit = self.store.get(key)
        if hit is not None:
            return hit
        z0 = _lattice_generator(1)[0]
        shifts = np.random.default_rng(seed).random(N_SHIFTS)
        j = np.arange(start + 1, stop + 1, dtype=float)
        u = np.abs(2.0 * ((j[None, :] * z0 + shifts[:, None]) % 1.0) - 1.0)
        scales = np.sqrt(special.chdtri(df, np.clip(u, _U_MIN, _U_MAX)) / df)
        while self.store and self.nbytes + scales.nbytes > self.max_bytes:
            self.nbytes -= self.store.pop(next(iter(self.store))).nbytes
        self.store[key] = scales
        self.nbytes += scales.nbytes
        return scales


_scales = _ScaleCache()


def _lattice_points(dim: int, seed: int, start: int, stop: int) -> list[NDArray]:
    """Baker-transformed, randomly shifted rank-1 lattice points, one array per shift."""
    z = _lattice_generator(dim + 1)[1:]
    shifts = np.random.default_rng([seed, dim]).random((N_SHIFTS, dim))
    j = np.arange(start + 1, stop + 1, dtype=float)[:, None]
    base = (j * z) % 1.0
    return [np.abs(2.0 * ((base + sh) % 1.0) - 1.0) for sh in shifts]


def _chunks(start: int, stop: int):
    """Split ``[start, stop)`` into cache-aligned chunks."""
    while start < stop:
        end = min(stop, (start // _CHUNK + 1) * _CHUNK) if start >= _CHUNK else min(stop, _CHUNK)
        yield start, end
        start = end


def _genz(a, b, R, df, tol, seed, max_points, fixed_n: int | None = None):
    """Randomized-lattice estimate; returns ``(p, error, points_per_shift)``."""
    a, b, L = _prioritized_cholesky(a, b, R)
    m = a.size
    t_problem = not math.isinf(df)
    sums = np.zeros(N_SHIFTS)
    done = 0
    target = fixed_n or _FIRST_N
    while True:
        for lo, hi in _chunks(done, target):
            points = _lattice_points(m - 1, seed, lo, hi)
            scales = _scales.get(seed, lo, hi, df) if t_problem else None
            for r, x in enumerate(points):
                sums[r] += _integrand(x, None if scales is None else scales[r], a, b, L).sum()
        done = target
        est = sums / done
        p = min(1.0, max(0.0, float(est.mean())))
        err = float(ERROR_FACTOR * est.std(ddof=1) / math.sqrt(N_SHIFTS))
        if err <= tol or fixed_n is not None:
            return p, err, done
        if 2 * done * N_SHIFTS > max_points:
            raise MvtAccuracyError(
                f"error {err:.2e} above tolerance {tol:.2e} after {done * N_SHIFTS} points",
                estimate=p,
                error=err,
            )
        target = 2 * done


_FIRST_N = 1 << 9


def mvt_cdf(problem: MvtProblem) -> tuple[float, float]:
    """Rectangle probability and its error estimate."""
    a, b, R = _reduce(problem.lower, problem.upper, problem.corr)
    return _cdf_reduced(a, b, R, problem.df, problem.tol, problem.seed, problem.max_points)[:2]


def _cdf_reduced(a, b, R, df, tol, seed, max_points, fixed_n=None):
    q = a.size
    if q == 0:
        return 1.0, 0.0, 0
    if np.any(a >= b):
        return 0.0, 0.0, 0
    if q == 1:
        return float(_t_cdf(b[0], df) - _t_cdf(a[0], df)), 0.0, 0
    if q == 2:
        return _bivariate_rect(a, b, float(R[0, 1]), df), 0.0, 0
    return _genz(a, b, R, df, tol, seed, max_points, fixed_n)


def mvt_probability(
    upper: ArrayLike,
    corr: ArrayLike,
    df: float = math.inf,
    lower: ArrayLike | None = None,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
    max_points: int = DEFAULT_MAX_POINTS,
) -> tuple[float, float]:
    """Functional shortcut for :func:`mvt_cdf`."""
    return mvt_cdf(MvtProblem(upper, corr, df, lower, tol, seed, max_points))


def equicoordinate_quantile(
    alpha: float,
    corr: ArrayLike,
    df: float = math.inf,
    two_sided: bool = False,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Critical value ``c`` with ``P(max T_j <= c) = 1 - alpha`` (``max |T_j|`` if two-sided).

    Exact root search in one and two dimensions.  Otherwise a coarse search
    is refined by secant steps on a fixed lattice, where the estimated CDF is
    a smooth function of ``c``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    problem = MvtProblem(np.ones(np.atleast_2d(corr).shape[0]), corr, df, tol=tol, seed=seed)
    R, df, q = problem.corr, problem.df, problem.corr.shape[0]
    target = 1 - alpha
    tdist = stats.t(df) if not math.isinf(df) else stats.norm()
    side = 2 if two_sided else 1
    lo = float(tdist.isf(alpha / side))
    if q == 1:
        return lo

    def cdf(c: float, eps: float = tol, fixed_n: int | None = None):
        lower = np.full(q, -c) if two_sided else np.full(q, -np.inf)
        a, b, Rr = _reduce(lower, np.full(q, c), R)
        return _cdf_reduced(a, b, Rr, df, eps, seed, max_points, fixed_n)

    exact = _reduce(np.full(q, -np.inf), np.ones(q), R)[2].shape[0] <= 2
    coarse = tol if exact else min(10 * tol, 0.1 * alpha)
    f = lambda c: cdf(c, coarse)[0] - target  # noqa: E731
    hi = float(tdist.isf(alpha / (side * q)))
    if f(lo) >= 0:
        return lo
    while f(hi) <= 0:
        hi += 0.5
    c = float(optimize.brentq(f, lo, hi, xtol=1e-10 if exact else 1e-5))
    if exact:
        return c

    p, _, n = cdf(c)
    g = lambda x: cdf(x, tol, n)[0] - target  # noqa: E731
    c_prev, g_prev = c, p - target
    c_cur = c + (1e-3 if g_prev < 0 else -1e-3)
    g_cur = g(c_cur)
    for _ in range(30):
        if abs(g_cur) <= tol / 20 or g_cur == g_prev:
            break
        c_next = c_cur - g_cur * (c_cur - c_prev) / (g_cur - g_prev)
        c_prev, g_prev = c_cur, g_cur
        c_cur, g_cur = c_next, g(c_next)
    return float(c_cur)
