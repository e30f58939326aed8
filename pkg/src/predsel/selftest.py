"""Quick oracle checks runnable from the command line (``predsel selftest``)."""
from __future__ import annotations

import math
import time

import numpy as np
from scipy import integrate, stats


def _check_kl():
    from .infotheory import knn_kl_divergence

    rng = np.random.default_rng(1)
    est = knn_kl_divergence(rng.normal(0, 1, 5000), rng.normal(1, 1, 5000))
    return abs(est - 0.5) <= 0.1, f"KL(N(0,1)||N(1,1)) = {est:.4f} (analytic 0.5)"


def _check_neighbors():
    from .infotheory import NeighborIndex

    rng = np.random.default_rng(2)
    for _ in range(20):
        n, d = int(rng.integers(2, 200)), int(rng.integers(1, 4))
        x = rng.normal(size=(n, d))
        brute = np.abs(x[:, None, :] - x[None, :, :]).max(axis=2)
        np.fill_diagonal(brute, np.inf)
        if not np.array_equal(NeighborIndex(x).within(), brute.min(axis=1)):
            return False, f"nearest-neighbour mismatch at n={n}, d={d}"
    return True, "nearest-neighbour search matches brute force"


def _check_rk4():
    from .dynamics import IntegratorConfig, OscillatorState, SpringKind, integrate

    errs = []
    steps = (0.1, 0.05, 0.025)
    for h in steps:
        traj = integrate(SpringKind.OLS, None, {"c": 0.0, "k1_0": 1.0}, OscillatorState(1.0, 0.0),
                         IntegratorConfig(step=h, horizon=2.0))
        errs.append(abs(traj.x[-1] - math.cos(2.0)))
    order = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    return 3.8 <= order <= 4.2, f"RK4 convergence exponent {order:.3f}"


def _check_evidence():
    from .inference import TmcmcSettings, tmcmc_sample
    from .probmodel import PriorSpec

    y = np.random.default_rng(3).normal(1.0, 1.0, 20)

    def log_l(theta):
        return stats.norm.logpdf(y[None, :], np.atleast_2d(theta)[:, :1], 1.0).sum(axis=1)

    shift = -log_l(np.array([[y.mean()]]))[0]
    z, _ = integrate.quad(lambda m: math.exp(log_l(np.array([[m]]))[0] + shift) / 20.0, -10, 10, points=[y.mean()])
    truth = math.log(z) - shift
    prior = PriorSpec((("mu", -10.0, 10.0),))
    post = tmcmc_sample(prior.log_density, log_l, prior.sample, TmcmcSettings(n_pop=1000, seed=0))
    return abs(post.log_evidence - truth) <= 0.3, f"log evidence {post.log_evidence:.3f} vs quadrature {truth:.3f}"


def run_selftest(verbose: bool = True) -> bool:
    ok_all = True
    for check in (_check_kl, _check_neighbors, _check_rk4, _check_evidence):
        t0 = time.perf_counter()
        ok, msg = check()
        ok_all &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {msg} ({time.perf_counter() - t0:.2f} s)")
    return ok_all
