"""Fast invariant checks runnable from an installed package (``risura selftest``)."""

import time

import numpy as np

from . import tensor_core as tc
from .airlink import crandn
from .ctad import run_ctad
from .harness import nmse
from .modem_codec import TreeCodeProfile, decode_tree, encode_tree

__all__ = ["run_selftest", "elbo_decreases"]


def elbo_decreases(report, rel=1e-8):
    """Sweeps after which the ELBO dropped by more than ``rel`` relative.

    When columns were pruned after sweep ``t`` the next sweep is compared
    with the bound of the reduced model, which is where it started from.
    """
    after_prune = {ev[0]: ev[2] for ev in report.prune_events}
    trace = report.elbo_trace
    bad = []
    for t in range(1, len(trace)):
        ref = after_prune.get(t, trace[t - 1])
        if trace[t] < ref - rel * abs(ref):
            bad.append(t + 1)
    return bad


def _tensor_checks(rng):
    for _ in range(20):
        order = int(rng.integers(2, 5))
        shape = tuple(int(s) for s in rng.integers(1, 5, size=order))
        T = crandn(rng, *shape)
        for n in range(order):
            if not np.allclose(tc.fold(tc.unfold(T, n), n, shape), T, rtol=0, atol=1e-12):
                return False
        R = int(rng.integers(1, 4))
        factors = [crandn(rng, s, R) for s in shape]
        X = tc.kruskal_reconstruct(factors)
        for n in range(order):
            rhs = factors[n] @ tc.khatri_rao_except(factors, n).T
            if not np.allclose(tc.unfold(X, n), rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max())):
                return False
        kr = tc.khatri_rao_chain(factors[::-1])
        lhs = kr.conj().T @ kr
        if not np.allclose(lhs, tc.hadamard_all([f.conj().T @ f for f in factors]), atol=1e-10):
            return False
    return True


def _elbo_checks(rng):
    for trial in range(3):
        tau, M, Ng, Ka, L = (3, 4), 6, 8, 2, 2
        P = [crandn(rng, M, Ng) for _ in range(L)]
        G = np.zeros((Ng, Ka), complex)
        for k in range(Ka):
            G[rng.choice(Ng, 2, replace=False), k] = crandn(rng, 2)
        Y = [tc.kruskal_reconstruct([crandn(rng, t, Ka) for t in tau] + [P[l] @ G])
             + (0.1 * crandn(rng, *tau, M) if trial % 2 else 0) for l in range(L)]
        report = run_ctad(Y, P, K_init=4, rng=trial)
        if elbo_decreases(report):
            return False
    return True


def _codec_checks(rng):
    profile = TreeCodeProfile(3, 12, (0, 6, 12), seed=7)
    msgs = rng.integers(0, 2, size=(4, profile.B_total), dtype=np.uint8)
    blocks = [encode_tree(m, profile) for m in msgs]
    lists = [[b[l] for b in blocks] for l in range(profile.L)]
    got = {m.tobytes() for m in decode_tree(lists, profile)}
    return got == {m.tobytes() for m in msgs}


def _nmse_checks(rng):
    G = crandn(rng, 10, 3)
    perm = rng.permutation(3)
    G_hat = G[:, perm] * np.exp(2j * np.pi * rng.random(3))
    return nmse(G, G_hat) < 1e-20 and abs(nmse(G, np.zeros_like(G)) - 1.0) < 1e-15


def run_selftest(seed=0, verbose=True):
    rng = np.random.default_rng(seed)
    suites = [
        ("tensor identities", _tensor_checks),
        ("ELBO monotone per sweep", _elbo_checks),
        ("tree code round trip", _codec_checks),
        ("aligned NMSE", _nmse_checks),
    ]
    ok = True
    for name, fn in suites:
        t0 = time.perf_counter()
        passed = bool(fn(rng))
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}  ({time.perf_counter() - t0:.2f}s)")
    return ok
