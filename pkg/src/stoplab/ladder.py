"""Ladder-walk Monte Carlo for the two universal constants.

The walk starts at 0 at an offset u in [0,1), takes one Gaussian increment of
variance 1-u to reach time 1 and unit-variance increments after that, and
stops at the first integer time its value is >= 0. The second and first
moments of the stopped value, averaged over the offset, are the two constants
(theta ~ 0.589, gamma ~ 0.582) that multiply the h and sqrt(h) convergence
coefficients.

Estimators come in dual routes so they can cross-validate:

* moment route: the stopped value's moments directly (JIT survivor loop);
* occupation route: time spent at or above 0 on a fine grid of step 1/m;
* local-time route: the Tanaka discretization on the same fine grid.

The first-passage index has infinite mean, so paths are capped at `n_max`
steps; truncated paths contribute 0 to every sum and are reported as a
fraction so the unmeasured mass is auditable.

Reproducibility contract: work is split into fixed-size blocks of 2^18 paths;
each (estimator, offset, block) triple gets its own stream seeded through
numpy's SeedSequence, and block partial sums are combined with math.fsum.
Results are therefore bit-identical for a given seed regardless of worker
count or scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import (
    BAD_ARGUMENT,
    CAP_TOO_SMALL,
    INSUFFICIENT_HITS,
    NumericalError,
    ValidationError,
)
from .model import StoppingProblem

DEFAULT_N_MAX = 100_000
DEFAULT_MAX_TRUNCATED_FRACTION = 0.05
BLOCK_SIZE = 1 << 18

# Intervals whose endpoints both sit below this level are not fine-filled: the
# bridge crossing probability exp(-2 a b) is < 1e-15, so all skipped fine
# nodes are negative and contribute nothing to either fine estimator.
SKIP_LEVEL = 4.2

# stream tags, part of the seeding contract
_TAG_RANDOMIZED = 0
_TAG_FIXED = 1
_TAG_FINE = 2
_TAG_HIT = 3


# --------------------------------------------------------------------------
# sample types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LadderSample:
    """One stopped walk; fine path attached when requested."""

    u: float
    stop_index: int
    terminal: float
    truncated: bool
    fine_times: np.ndarray | None = None
    fine_values: np.ndarray | None = None


@dataclass(frozen=True)
class OffsetMoments:
    """Per-offset moment estimates Ĥ(u), M̂(u) with standard errors."""

    u: float
    h_hat: float
    h_se: float
    m_hat: float
    m_se: float
    n_paths: int
    truncated_fraction: float


@dataclass(frozen=True)
class OffsetEstimate:
    """A single fine-grid estimate (occupation or local time) at one offset."""

    u: float
    value: float
    se: float
    n_paths: int
    fine_steps: int
    truncated_fraction: float


@dataclass(frozen=True)
class OffsetCurves:
    u: np.ndarray
    h_hat: np.ndarray
    h_se: np.ndarray
    m_hat: np.ndarray
    m_se: np.ndarray


@dataclass(frozen=True)
class ConstantsEstimate:
    theta: float
    theta_se: float
    gamma: float
    gamma_se: float
    n_paths: int
    truncated_fraction: float
    u_mode: str
    n_max: int
    seed: int
    curves: OffsetCurves | None = None


@dataclass(frozen=True)
class ConstantsConfig:
    n_paths: int = 2_000_000
    u_mode: str = "randomized"  # or "fixed-grid"
    u_grid: int = 64
    n_max: int = DEFAULT_N_MAX
    seed: int = 0
    workers: int = 1
    max_truncated_fraction: float = DEFAULT_MAX_TRUNCATED_FRACTION


@dataclass(frozen=True)
class UniformityReport:
    ks_distance: float
    n_hits: int
    n_paths: int
    n_excluded: int
    h: float
    substeps: int
    horizon: float
    out_of_regime: bool
    cell_counts: np.ndarray


# --------------------------------------------------------------------------
# JIT kernels (one block each; seeded externally)
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def _walk_block(seed, n_paths, u_fixed, randomize_u, n_max):
    np.random.seed(seed)
    s1 = 0.0
    s2 = 0.0
    s4 = 0.0
    trunc = 0
    for _ in range(n_paths):
        if randomize_u:
            u = np.random.random()
        else:
            u = u_fixed
        w = np.sqrt(1.0 - u) * np.random.standard_normal()
        n = 1
        while w < 0.0 and n < n_max:
            w += np.random.standard_normal()
            n += 1
        if w >= 0.0:
            s1 += w
            w2 = w * w
            s2 += w2
            s4 += w2 * w2
        else:
            trunc += 1
    return s1, s2, s4, trunc


@nb.njit(cache=True)
def _fine_block(seed, n_paths, u, m, n_max, skip_level):
    """Coarse walk plus bridge-filled fine grid; returns occupation and
    Tanaka local-time sums (value and squared-value) and the truncation count.
    """
    np.random.seed(seed)
    occ_s = 0.0
    occ_s2 = 0.0
    loc_s = 0.0
    loc_s2 = 0.0
    trunc = 0
    wbuf = np.empty(n_max + 1)
    for _ in range(n_paths):
        wbuf[0] = 0.0
        w = np.sqrt(1.0 - u) * np.random.standard_normal()
        wbuf[1] = w
        n = 1
        while w < 0.0 and n < n_max:
            w += np.random.standard_normal()
            n += 1
            wbuf[n] = w
        if w < 0.0:
            trunc += 1
            continue
        occ = 0.0
        tanaka = 0.0
        for i in range(n):
            if i == 0:
                t0 = u
                t1 = 1.0
            else:
                t0 = float(i)
                t1 = float(i + 1)
            a = wbuf[i]
            b = wbuf[i + 1]
            if a < -skip_level and b < -skip_level:
                continue
            j0 = int(np.floor(t0 * m)) + 1
            j1 = int(np.ceil(t1 * m)) - 1
            prev_t = t0
            prev_w = a
            if prev_w >= 0.0:
                occ += 1.0
            for j in range(j0, j1 + 1):
                tj = j / m
                frac = (t1 - tj) / (t1 - prev_t)
                mean = prev_w * frac + b * (1.0 - frac)
                var = (tj - prev_t) * frac
                wj = mean + np.sqrt(var) * np.random.standard_normal()
                if prev_w >= 0.0:
                    tanaka += wj - prev_w
                prev_t = tj
                prev_w = wj
                if wj >= 0.0:
                    occ += 1.0
            if prev_w >= 0.0:
                tanaka += b - prev_w
        occ_frac = occ / m
        lt = max(w, 0.0) - tanaka
        occ_s += occ_frac
        occ_s2 += occ_frac * occ_frac
        loc_s += lt
        loc_s2 += lt * lt
    return occ_s, occ_s2, loc_s, loc_s2, trunc


@nb.njit(cache=True)
def _hit_block(seed, n_paths, log_ratio, mu, sigma, dt, max_steps, out):
    """First fine-node crossing indices of a log-space GBM walk; -1 = no hit."""
    np.random.seed(seed)
    sd = sigma * np.sqrt(dt)
    drift = mu * dt
    for ip in range(n_paths):
        y = 0.0
        out[ip] = -1
        for j in range(1, max_steps + 1):
            y += drift + sd * np.random.standard_normal()
            if y >= log_ratio:
                out[ip] = j
                break
    return 0


# --------------------------------------------------------------------------
# block scheduling
# --------------------------------------------------------------------------

def _block_seed(seed: int, spawn_key: tuple) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=spawn_key).generate_state(1)[0])


def _blocks(n_paths: int) -> list[tuple[int, int]]:
    """(block_index, block_size) pairs; the split is part of the RNG contract."""
    out = []
    i = 0
    remaining = n_paths
    while remaining > 0:
        size = min(BLOCK_SIZE, remaining)
        out.append((i, size))
        remaining -= size
        i += 1
    return out


def _run_blocks(kernel, seed, tag_key, n_paths, workers, extra_args, n_outputs):
    """Run per-block kernels and fsum their partials in block order."""
    jobs = [
        (kernel, _block_seed(seed, tag_key + (bi,)), size, extra_args)
        for bi, size in _blocks(n_paths)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    sums = [math.fsum(r[k] for r in results) for k in range(n_outputs - 1)]
    trunc = sum(int(r[n_outputs - 1]) for r in results)
    return sums, trunc


def _run_one(job):
    kernel, block_seed, size, extra_args = job
    return kernel(block_seed, size, *extra_args)


def _mean_se(s: float, s2: float, n: int) -> tuple[float, float]:
    mean = s / n
    var = max(s2 / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def _check_truncation(trunc: int, n_paths: int, bound: float) -> float:
    frac = trunc / n_paths
    if frac > bound:
        raise NumericalError(
            f"cap too small: truncated fraction {frac:.4g} exceeds bound {bound:.4g}",
            CAP_TOO_SMALL,
        )
    return frac


# --------------------------------------------------------------------------
# scalar reference sampler
# --------------------------------------------------------------------------

def sample_ladder(
    u: float,
    rng: np.random.Generator,
    n_max: int = DEFAULT_N_MAX,
    fine_steps: int | None = None,
) -> LadderSample:
    """Draw one stopped walk; the reference implementation for tests.

    Draw order (part of the reproducibility contract): the coarse integer-time
    increments first, then, when `fine_steps` is given, Brownian-bridge fills
    interval by interval at the global 1/m grid points inside each interval.
    The fine path is exactly consistent in law with generating everything at
    step 1/m directly.
    """
    if not 0.0 <= u < 1.0:
        raise ValidationError("offset u must lie in [0, 1)", BAD_ARGUMENT)
    if n_max < 1:
        raise ValidationError("n_max must be >= 1", BAD_ARGUMENT)
    values = [0.0]
    w = math.sqrt(1.0 - u) * rng.standard_normal()
    values.append(w)
    n = 1
    while w < 0.0 and n < n_max:
        w += rng.standard_normal()
        n += 1
        values.append(w)
    truncated = w < 0.0

    fine_t = fine_v = None
    if fine_steps is not None:
        m = int(fine_steps)
        if m < 1:
            raise ValidationError("fine_steps must be >= 1", BAD_ARGUMENT)
        ft = [u]
        fv = [0.0]
        for i in range(n):
            t0, t1 = (u, 1.0) if i == 0 else (float(i), float(i + 1))
            b = values[i + 1]
            prev_t, prev_w = ft[-1], fv[-1]
            j0 = int(math.floor(t0 * m)) + 1
            j1 = int(math.ceil(t1 * m)) - 1
            for j in range(j0, j1 + 1):
                tj = j / m
                frac = (t1 - tj) / (t1 - prev_t)
                mean = prev_w * frac + b * (1.0 - frac)
                var = (tj - prev_t) * frac
                wj = mean + math.sqrt(var) * rng.standard_normal()
                ft.append(tj)
                fv.append(wj)
                prev_t, prev_w = tj, wj
            ft.append(t1)
            fv.append(b)
        fine_t = np.array(ft)
        fine_v = np.array(fv)

    return LadderSample(
        u=u,
        stop_index=n,
        terminal=w,
        truncated=truncated,
        fine_times=fine_t,
        fine_values=fine_v,
    )


def discretized_occupation(sample: LadderSample) -> float:
    """(1/m)-weighted count of fine nodes in [u, N) sitting at or above 0."""
    t, v = sample.fine_times, sample.fine_values
    if t is None:
        raise ValidationError("sample carries no fine path", BAD_ARGUMENT)
    m = _infer_fine_steps(t)
    return float(np.sum(v[:-1] >= 0.0)) / m


def discretized_local_time(sample_values: np.ndarray) -> float:
    """Tanaka discretization on a fine path: W_N^+ minus the indicator sum."""
    v = np.asarray(sample_values, dtype=float)
    pos = v[:-1] >= 0.0
    return float(max(v[-1], 0.0) - np.sum(np.diff(v)[pos]))


def _infer_fine_steps(times: np.ndarray) -> int:
    # interior nodes sit on the global 1/m grid; the smallest full step is 1/m
    return int(round(1.0 / np.min(np.diff(times))))


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------

def estimate_H_M(
    u: float,
    n_paths: int,
    seed: int = 0,
    n_max: int = DEFAULT_N_MAX,
    workers: int = 1,
    max_truncated_fraction: float = DEFAULT_MAX_TRUNCATED_FRACTION,
) -> OffsetMoments:
    """Sample means of the stopped value's square and value at a fixed offset."""
    if n_paths < 2:
        raise ValidationError("n_paths must be >= 2", BAD_ARGUMENT)
    if not 0.0 <= u < 1.0:
        raise ValidationError("offset u must lie in [0, 1)", BAD_ARGUMENT)
    (s1, s2, s4), trunc = _run_blocks(
        _walk_block, seed, (_TAG_FIXED, _u_key(u)), n_paths, workers,
        (float(u), False, int(n_max)), 4,
    )
    frac = _check_truncation(trunc, n_paths, max_truncated_fraction)
    m_hat, m_se = _mean_se(s1, s2, n_paths)
    h_hat, h_se = _mean_se(s2, s4, n_paths)
    return OffsetMoments(
        u=u, h_hat=h_hat, h_se=h_se, m_hat=m_hat, m_se=m_se,
        n_paths=n_paths, truncated_fraction=frac,
    )


def _u_key(u: float) -> int:
    # stable 64-bit key for the offset so each u gets its own substream
    return int(np.float64(u).view(np.uint64))


def estimate_theta_gamma(config: ConstantsConfig) -> ConstantsEstimate:
    """The two universal constants with standard errors.

    Randomized mode draws the offset uniformly per path, so the constants are
    plain sample means; fixed-grid mode estimates the per-offset curves on
    midpoints and applies the midpoint rule, which also yields the curves for
    the CSV/figure outputs.
    """
    if config.n_paths < 10_000:
        raise ValidationError("n_paths >= 1e4 required for meaningful errors", BAD_ARGUMENT)
    if config.u_mode == "randomized":
        (s1, s2, s4), trunc = _run_blocks(
            _walk_block, config.seed, (_TAG_RANDOMIZED,), config.n_paths,
            config.workers, (0.0, True, int(config.n_max)), 4,
        )
        frac = _check_truncation(trunc, config.n_paths, config.max_truncated_fraction)
        gamma, gamma_se = _mean_se(s1, s2, config.n_paths)
        theta, theta_se = _mean_se(s2, s4, config.n_paths)
        curves = None
        n_used = config.n_paths
    elif config.u_mode == "fixed-grid":
        j = int(config.u_grid)
        if j < 2:
            raise ValidationError("fixed-grid mode needs u_grid >= 2", BAD_ARGUMENT)
        n_per = config.n_paths // j
        if n_per < 2:
            raise ValidationError("n_paths too small for the offset grid", BAD_ARGUMENT)
        us = (np.arange(j) + 0.5) / j
        rows = [
            estimate_H_M(
                float(u), n_per, seed=config.seed, n_max=config.n_max,
                workers=config.workers,
                max_truncated_fraction=config.max_truncated_fraction,
            )
            for u in us
        ]
        theta = math.fsum(r.h_hat for r in rows) / j
        gamma = math.fsum(r.m_hat for r in rows) / j
        theta_se = math.sqrt(math.fsum(r.h_se ** 2 for r in rows)) / j
        gamma_se = math.sqrt(math.fsum(r.m_se ** 2 for r in rows)) / j
        frac = math.fsum(r.truncated_fraction for r in rows) / j
        curves = OffsetCurves(
            u=us,
            h_hat=np.array([r.h_hat for r in rows]),
            h_se=np.array([r.h_se for r in rows]),
            m_hat=np.array([r.m_hat for r in rows]),
            m_se=np.array([r.m_se for r in rows]),
        )
        n_used = n_per * j
    else:
        raise ValidationError(f"unknown u_mode {config.u_mode!r}", BAD_ARGUMENT)

    return ConstantsEstimate(
        theta=theta, theta_se=theta_se, gamma=gamma, gamma_se=gamma_se,
        n_paths=n_used, truncated_fraction=frac, u_mode=config.u_mode,
        n_max=config.n_max, seed=config.seed, curves=curves,
    )


def estimate_H_occupation(
    u: float,
    n_paths: int,
    fine_steps: int = 64,
    seed: int = 0,
    n_max: int = DEFAULT_N_MAX,
    workers: int = 1,
    max_truncated_fraction: float = DEFAULT_MAX_TRUNCATED_FRACTION,
) -> OffsetEstimate:
    """Occupation-time route to the per-offset second-moment curve."""
    occ, _loc, frac = _fine_estimates(
        u, n_paths, fine_steps, seed, n_max, workers, max_truncated_fraction
    )
    return OffsetEstimate(
        u=u, value=occ[0], se=occ[1], n_paths=n_paths,
        fine_steps=fine_steps, truncated_fraction=frac,
    )


def estimate_M_localtime(
    u: float,
    n_paths: int,
    fine_steps: int = 64,
    seed: int = 0,
    n_max: int = DEFAULT_N_MAX,
    workers: int = 1,
    max_truncated_fraction: float = DEFAULT_MAX_TRUNCATED_FRACTION,
) -> OffsetEstimate:
    """Tanaka local-time route to the per-offset first-moment curve."""
    _occ, loc, frac = _fine_estimates(
        u, n_paths, fine_steps, seed, n_max, workers, max_truncated_fraction
    )
    return OffsetEstimate(
        u=u, value=loc[0], se=loc[1], n_paths=n_paths,
        fine_steps=fine_steps, truncated_fraction=frac,
    )


def _fine_estimates(u, n_paths, fine_steps, seed, n_max, workers, max_trunc):
    if fine_steps < 16:
        raise ValidationError("fine_steps must be >= 16", BAD_ARGUMENT)
    if not 0.0 <= u < 1.0:
        raise ValidationError("offset u must lie in [0, 1)", BAD_ARGUMENT)
    (occ_s, occ_s2, loc_s, loc_s2), trunc = _run_blocks(
        _fine_block, seed, (_TAG_FINE, _u_key(u), int(fine_steps)), n_paths,
        workers, (float(u), int(fine_steps), int(n_max), SKIP_LEVEL), 5,
    )
    frac = _check_truncation(trunc, n_paths, max_trunc)
    return _mean_se(occ_s, occ_s2, n_paths), _mean_se(loc_s, loc_s2, n_paths), frac


# --------------------------------------------------------------------------
# fractional-part uniformity diagnostic
# --------------------------------------------------------------------------

def diagnose_fractional_uniformity(
    problem: StoppingProblem,
    x0: float,
    x_target: float,
    h: float,
    substeps: int,
    n_paths: int,
    seed: int = 0,
    horizon: float = 10.0,
    min_hits: int = 100,
) -> UniformityReport:
    """Tests that the hitting time's position inside its h-cell is uniform.

    Simulates the log-price walk at step h/substeps, records the first fine
    node at or above the target, and compares the empirical distribution of
    U = frac(tau/h) against uniform. The hitting time is observed on the fine
    lattice, so the distance is evaluated at the fine-cell boundaries j/m
    (a continuous-uniform KS would be floored at 1/m by quantization alone).
    Paths that have not hit by the horizon are excluded and counted.
    """
    if not problem.diffusion.is_gbm:
        raise ValidationError("uniformity diagnostic supports GBM only", BAD_ARGUMENT)
    if not 0.0 < x0 < x_target:
        raise ValidationError("need 0 < x0 < x_target", BAD_ARGUMENT)
    if h <= 0 or substeps < 1:
        raise ValidationError("need h > 0 and substeps >= 1", BAD_ARGUMENT)
    m = int(substeps)
    dt = h / m
    max_steps = int(round(horizon / dt))
    out_of_regime = h >= horizon
    b = problem.diffusion.b
    sigma = problem.diffusion.sigma
    mu = b - 0.5 * sigma * sigma
    log_ratio = math.log(x_target / x0)

    hit_steps: list[np.ndarray] = []
    for bi, size in _blocks(n_paths):
        buf = np.empty(size, dtype=np.int64)
        _hit_block(
            _block_seed(seed, (_TAG_HIT, bi)), size, log_ratio, mu, sigma,
            dt, max_steps, buf,
        )
        hit_steps.append(buf)
    steps = np.concatenate(hit_steps)
    hits = steps[steps > 0]
    n_hits = int(hits.size)
    if n_hits < min_hits:
        raise NumericalError(
            f"insufficient hits: {n_hits} < {min_hits}", INSUFFICIENT_HITS
        )

    # U = frac(tau/h) on the 1/m lattice, via integer arithmetic; a hit at an
    # exact h-multiple belongs to the last cell of its coarse interval.
    cell = (hits - 1) % m  # 0..m-1
    counts = np.bincount(cell, minlength=m).astype(float)
    ecdf = np.cumsum(counts) / n_hits
    edges = np.arange(1, m + 1) / m
    ks = float(np.max(np.abs(ecdf - edges)))
    return UniformityReport(
        ks_distance=ks,
        n_hits=n_hits,
        n_paths=n_paths,
        n_excluded=int(n_paths - n_hits),
        h=h,
        substeps=m,
        horizon=horizon,
        out_of_regime=out_of_regime,
        cell_counts=counts,
    )
