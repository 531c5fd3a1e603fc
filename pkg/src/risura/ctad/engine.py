"""Sweep driver, rank pruning and the detector report."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .elbo import compute_elbo
from .state import CoupledData, NumericalError, init_state
from .updates import (
    cap_beta, refresh_C, update_beta, update_eta, update_G, update_gamma, update_X, update_xi,
)

__all__ = ["Schedule", "CtadReport", "prune", "sweep_once", "run_ctad", "component_power"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """Iteration control.

    ``noise_floor`` and ``floor_decay`` anneal a lower bound on the noise
    variance ``1/E[beta]``: it starts at ``noise_floor`` times the mean energy
    per observed entry and shrinks by ``floor_decay`` every sweep.  Without it
    the noise precision of near-noiseless data explodes within a few sweeps and
    every surplus column gets locked into an exact-fit split of the signal.
    The floor is lifted once a single column remains.
    ``power_rel`` prunes columns whose rank-one energy has fallen below that
    fraction of the total, since the precision ratios of a dead column stall
    long before ``kappa`` under a nearly flat hyperprior.  ``select_settle``
    is the number of prune-free sweeps (counted from ``prune_start``) every
    chain of a dual start must complete before one of them is kept; while the
    floor still caps a chain's noise precision its bound tracks the floor
    rather than the fit, so selection also waits for every cap to release.
    """

    max_iter: int = 300
    tol: float = 1e-7
    kappa: float = 1e6
    prune_start: int = 20
    prune_every: int = 5
    prune: bool = True
    power_rel: float = 1e-10
    noise_floor: float = 0.3
    floor_decay: float = 0.9
    select_settle: int = 50
    debug: bool = False


@dataclass
class CtadReport:
    K_hat: int
    G_hat: np.ndarray
    factors: list
    beta_mean: float
    iterations: int
    converged: bool
    elbo_trace: list
    prune_events: list = field(default_factory=list)  # (sweep, removed columns, ELBO after removal)
    component_power: np.ndarray = None
    state: object = field(default=None, repr=False)

    def significant(self, floor):
        """Number of components whose mean received energy per subblock exceeds ``floor``."""
        return int(np.sum(self.component_power > floor))


def component_power(state, data):
    """Mean (over subblocks) energy of each rank-one term ``||x_1 o ... o x_d o P g||^2``."""
    K = state.K
    out = np.zeros(K)
    for l in range(data.L):
        p = np.sum(np.abs(data.P[l] @ state.MG) ** 2, axis=0)
        for m in state.M[l]:
            p = p * np.sum(np.abs(m) ** 2, axis=0)
        out += p
    return out / data.L


def prune(state, kappa=1e6, power=None, power_rel=0.0):
    """Drop columns whose eta and gamma means both exceed ``kappa`` times the minimum.

    When ``power`` (per-column rank-one energy) is given, columns below
    ``power_rel`` times the total are dropped as well.  At least one column
    always survives.  Returns the removed column indices (relative to the input).
    """
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    K = state.K
    if K <= 1:
        return []
    Ee, Eg = state.eta.mean(), state.gamma.mean()
    dead = (Ee > kappa * Ee.min()) & (Eg > kappa * Eg.min())
    if power is not None and power_rel > 0:
        power = np.asarray(power, dtype=float)
        dead |= power <= power_rel * power.sum()
    if dead.all():
        dead[np.argmin(Ee * Eg)] = False
    if not dead.any():
        return []
    keep = np.flatnonzero(~dead)
    Ng = state.Ng
    gidx = (np.arange(Ng)[:, None] * K + keep[None, :]).reshape(-1)
    state.MG = state.MG[:, keep]
    state.Omega = state.Omega[np.ix_(gidx, gidx)]
    sign, logdet = np.linalg.slogdet(state.Omega)
    state.Omega_logdet = float(logdet)
    state.M = [[m[:, keep] for m in row] for row in state.M]
    state.Sigma = [[s[np.ix_(keep, keep)] for s in row] for row in state.Sigma]
    state.Sigma_logdet = [[float(np.linalg.slogdet(s)[1]) for s in row] for row in state.Sigma]
    state.gamma = state.gamma.take(keep)
    state.eta = state.eta.take(keep)
    state.xi = state.xi.take(keep)
    state.C = state.C_cov = None
    return [int(k) for k in np.flatnonzero(dead)]


def _check_pd(state):
    mats = [("Omega", state.Omega)] + [
        (f"Sigma[{l}][{i}]", s) for l, row in enumerate(state.Sigma) for i, s in enumerate(row)
    ]
    for name, m in mats:
        if np.linalg.eigvalsh(m).min() <= 0:
            raise NumericalError(f"{name} lost positive definiteness")


def sweep_once(state, data, on_update=None, noise_floor=0.0):
    """One full coordinate-ascent sweep: G, every X_l^i, then xi, eta, gamma, beta.

    ``noise_floor`` (absolute variance) caps ``E[beta]`` after its update.
    """
    steps = [("G", lambda: update_G(state, data))]
    for l in range(data.L):
        for i in range(data.d):
            steps.append((f"X[{l}][{i}]", lambda l=l, i=i: update_X(state, data, l, i)))
    steps += [
        ("xi", lambda: update_xi(state, data)),
        ("eta", lambda: update_eta(state, data)),
        ("gamma", lambda: update_gamma(state, data)),
        ("beta", lambda: cap_beta(update_beta(state, data), noise_floor)),
    ]
    for name, step in steps:
        step()
        if on_update is not None:
            on_update(name, state)
    return state


class _Run:
    """One chain of sweeps with its own noise floor, pruning and stopping state."""

    def __init__(self, state, data, schedule):
        self.state, self.data, self.schedule = state, data, schedule
        refresh_C(state, data)
        self.floor = schedule.noise_floor * sum(data.energy) / (data.L * data.n_entries)
        self.rows, self.prune_events = [], []
        self.prev, self.it, self.converged = None, 0, False
        self.last_prune = 0
        self.capped = False

    def step(self):
        state, data, schedule = self.state, self.data, self.schedule
        self.it += 1
        it = self.it
        try:
            # with one column left there is nothing to protect from the noise
            floor = self.floor if state.K > 1 else 0.0
            sweep_once(state, data, noise_floor=floor)
        except NumericalError as exc:
            raise NumericalError(f"sweep {it}: {exc}") from exc
        self.floor *= schedule.floor_decay
        self.capped = floor > 0 and float(state.beta.rate) <= float(state.beta.shape) * floor * (1 + 1e-12)
        if schedule.debug:
            _check_pd(state)
        elbo = compute_elbo(state, data)
        state.elbo_trace.append(elbo)
        self.rows.append((it, elbo, state.K, float(state.beta.mean())))

        prev = self.prev
        settled = prev is not None and abs(elbo - prev) <= schedule.tol * abs(prev)
        due = it >= schedule.prune_start and (it - schedule.prune_start) % schedule.prune_every == 0
        pruned = []
        if schedule.prune and (due or settled):
            pruned = prune(state, schedule.kappa, component_power(state, data), schedule.power_rel)
            if pruned:
                refresh_C(state, data)
                # the next sweep starts from the reduced model; keep its bound for comparison
                self.prune_events.append((it, pruned, compute_elbo(state, data)))
                self.last_prune = it
                log.debug("sweep %d: pruned columns %s, K=%d", it, pruned, state.K)
        self.converged = settled and not pruned
        self.prev = None if pruned else elbo
        return self.converged or it >= schedule.max_iter

    def settled(self):
        """Prune-free for ``select_settle`` sweeps with a noise level set by the data, not the floor."""
        start = max(self.last_prune, self.schedule.prune_start)
        return self.it - start >= self.schedule.select_settle and not self.capped

    def bound(self):
        return self.state.elbo_trace[-1]


def run_ctad(Y_list, P_list=None, K_init=8, delta=1e-6, schedule=None, rng=None,
             state=None, diagnostics=None, init="dual"):
    """Variational coupled-tensor detection with automatic rank learning.

    Parameters
    ----------
    Y_list, P_list : observed subblock tensors and their mixing matrices
        (or a prepared :class:`CoupledData` as ``Y_list``).
    K_init : column budget.
    schedule : :class:`Schedule`, optional
    rng : seed or Generator for the initialization.
    state : optional starting state (overrides ``K_init``/``rng``/``init``).
    init : ``"random"``, ``"svd"`` (see :func:`init_state`) or ``"dual"``.
        ``"dual"`` advances one chain from each initialization in lockstep
        until both have stopped pruning (see :class:`Schedule`) and keeps the
        one with the higher ELBO.  Random starts can lock a surplus column
        into a split of one device when the data underdetermine ``G``;
        spectral starts can stall in a poor basin on well-posed data.
    diagnostics : optional path; per-sweep ``iteration, elbo, K, beta_mean`` CSV.
    """
    schedule = schedule or Schedule()
    data = CoupledData.coerce(Y_list, P_list)
    if state is not None:
        runs = [_Run(state.copy(), data, schedule)]
    elif init == "dual":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        seeds = rng.integers(0, 2**63, size=2)
        runs = [_Run(init_state(data, K_init, delta, s, m), data, schedule)
                for s, m in zip(seeds, ("random", "svd"))]
    else:
        runs = [_Run(init_state(data, K_init, delta, rng, init), data, schedule)]

    finished = False
    while len(runs) > 1:
        done = [run.step() for run in runs]
        if any(done) or all(run.settled() for run in runs):
            best = max(range(len(runs)), key=lambda j: runs[j].bound())
            runs, finished = [runs[best]], done[best]
    run = runs[0]
    while not finished:
        finished = run.step()
    state = run.state

    if diagnostics is not None:
        with open(diagnostics, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "elbo", "K", "beta_mean"])
            for r in run.rows:
                w.writerow([r[0], f"{r[1]:.9g}", r[2], f"{r[3]:.9g}"])

    return CtadReport(
        K_hat=state.K,
        G_hat=state.MG.copy(),
        factors=[[m.copy() for m in row] for row in state.M],
        beta_mean=float(state.beta.mean()),
        iterations=run.it,
        converged=run.converged,
        elbo_trace=list(state.elbo_trace),
        prune_events=run.prune_events,
        component_power=component_power(state, data),
        state=state,
    )
