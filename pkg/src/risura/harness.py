"""End-to-end trials, metrics and parameter sweeps.

A trial draws channels and RIS patterns, estimates the RIS-BS channel,
encodes and modulates one message per active device, synthesizes the
received subblock tensors, runs the detector, demaps every surviving
component, stitches the fragments with the tree decoder and scores the
outcome.  All randomness comes from one seed, split per stage.
"""

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import airlink
from .config import SystemConfig, coerce_field
from .ctad import Schedule, run_ctad
from .modem_codec import (
    TreeCodeProfile, decode_tree, demap_mode, demap_span, encode_tree, indices_to_bits,
    make_constellations, map_bits_to_signal, parity_ok,
)
from .phase1 import estimate_U_alternating, estimate_U_genie

__all__ = [
    "TrialResult",
    "TrialError",
    "run_trial",
    "nmse",
    "nmse_db",
    "packet_error_rate",
    "false_alarms",
    "schedule_from_config",
    "trial_seeds",
    "sweep",
    "SWEEP_COLUMNS",
]

log = logging.getLogger(__name__)

STAGES = ("channels", "patterns", "phase1", "encode", "phase2_rx", "ctad", "demap", "decode", "metrics")

SWEEP_COLUMNS = (
    "nmse_db", "nmse_linear", "per", "p_rank_correct", "k_hat_mean", "false_alarm_mean",
    "trials", "failures",
)


class TrialError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass
class TrialResult:
    seed: int
    Ka: int
    K_hat: int = 0
    nmse: float = float("nan")       # linear
    nmse_G: float = float("nan")     # dB
    per: float = float("nan")
    rank_correct: bool = False
    false_alarms: int = 0
    anchored_valid: int = 0          # components whose column-linked fragments pass every parity check
    elbo_final: float = float("nan")
    iterations: int = 0
    converged: bool = False
    wall_time: dict = field(default_factory=dict)
    failed: bool = False
    stage: str = ""
    error: str = ""

    @property
    def total_time(self):
        return float(sum(self.wall_time.values()))

    def summary(self):
        """Flat dict for printing (timings rounded to microseconds)."""
        out = asdict(self)
        out["wall_time"] = {k: round(v, 6) for k, v in self.wall_time.items()}
        return out


def nmse(G_true, G_hat):
    """Normalized squared error after greedy column alignment.

    Columns of ``G_hat`` are paired with columns of ``G_true`` in decreasing
    order of normalized correlation; each paired column is scaled by its
    least-squares complex factor and true columns left unpaired are compared
    with zeros.
    """
    G_true = np.asarray(G_true, dtype=complex)
    G_hat = np.asarray(G_hat, dtype=complex).reshape(G_true.shape[0], -1)
    ref = np.linalg.norm(G_true) ** 2
    if ref == 0:
        raise ValueError("G_true is all zeros")
    aligned = np.zeros_like(G_true)
    nt = np.linalg.norm(G_true, axis=0)
    nh = np.linalg.norm(G_hat, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.abs(G_true.conj().T @ G_hat) / np.outer(nt, nh)
    corr = np.nan_to_num(corr, nan=0.0)
    free_t = np.ones(G_true.shape[1], bool)
    free_h = np.ones(G_hat.shape[1], bool)
    for _ in range(min(G_true.shape[1], G_hat.shape[1])):
        masked = np.where(free_t[:, None] & free_h[None, :], corr, -1.0)
        t, h = np.unravel_index(np.argmax(masked), masked.shape)
        free_t[t] = free_h[h] = False
        if nh[h] > 0:
            g = G_hat[:, h]
            aligned[:, t] = (np.vdot(g, G_true[:, t]) / nh[h] ** 2) * g
    return float(np.linalg.norm(G_true - aligned) ** 2 / ref)


def nmse_db(value):
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def _message_keys(messages):
    return {np.asarray(m, dtype=np.uint8).tobytes() for m in messages}


def packet_error_rate(sent, decoded, Ka):
    """Fraction of the ``Ka`` sent messages absent from the decoded list (exact match)."""
    if Ka < 1:
        raise ValueError("Ka must be >= 1")
    got = _message_keys(decoded)
    hits = sum(np.asarray(m, dtype=np.uint8).tobytes() in got for m in sent)
    return 1.0 - hits / Ka


def false_alarms(sent, decoded):
    """Decoded messages that no device sent."""
    sent_keys = _message_keys(sent)
    return sum(k not in sent_keys for k in _message_keys(decoded))


def schedule_from_config(cfg):
    return Schedule(
        max_iter=cfg.max_iter, tol=cfg.tol, kappa=cfg.kappa, prune_start=cfg.prune_start,
        prune_every=cfg.prune_every, power_rel=cfg.power_rel, noise_floor=cfg.noise_floor,
        floor_decay=cfg.floor_decay, select_settle=cfg.select_settle,
    )


def _stage_rngs(seed):
    children = np.random.SeedSequence(seed).spawn(len(STAGES))
    return {name: np.random.default_rng(s) for name, s in zip(STAGES, children)}


def _pipeline(cfg, seed, result):
    rngs = _stage_rngs(seed)
    clock = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except Exception as exc:  # report any module failure with its stage
            raise TrialError(name, exc) from exc
        finally:
            clock[name] = clock.get(name, 0.0) + time.perf_counter() - t0
            result.wall_time = dict(clock)

    chan = stage("channels", lambda: airlink.synth_channels(cfg, rngs["channels"]))

    def patterns():
        V1, v2 = airlink.gen_ris_patterns(cfg.N, cfg.pilot_length, cfg.L, cfg.p_on, rngs["patterns"])
        return chan.attach_patterns(V1, v2)

    stage("patterns", patterns)

    def phase1():
        if cfg.estimator == "genie":
            est = estimate_U_genie(chan)
        else:
            # device 1 sends unit-modulus pilots at the data power
            rng = rngs["phase1"]
            g1 = math.sqrt(cfg.power) * np.exp(2j * np.pi * rng.random(cfg.pilot_length))
            Y1 = airlink.phase1_rx(chan.U, chan.h[:, 0], g1, chan.V_phase1, cfg.noise_var, rng)
            est = estimate_U_alternating(Y1, chan.V_phase1, g1, ridge=cfg.ridge)
        return [airlink.effective_mixing(est.U_hat, chan.A_R, v) for v in chan.v_phase2]

    P_hat = stage("phase1", phase1)

    profile = TreeCodeProfile(cfg.L, cfg.R, cfg.parity, cfg.code_seed)
    constellations = stage("encode", lambda: make_constellations(cfg.tau, cfg.mode_bits, cfg.code_seed))

    def encode():
        msgs = rngs["encode"].integers(0, 2, size=(cfg.Ka, profile.B_total), dtype=np.uint8)
        vectors = [[np.zeros((t, cfg.Ka), dtype=complex) for t in cfg.tau] for _ in range(cfg.L)]
        for k in range(cfg.Ka):
            blocks = encode_tree(msgs[k], profile)
            for l in range(cfg.L):
                _, idx = map_bits_to_signal(blocks[l], constellations, cfg.power)
                for i, c in enumerate(constellations):
                    vectors[l][i][:, k] = c.codebook[idx[i]]
                vectors[l][0][:, k] *= math.sqrt(cfg.power)
        return msgs, vectors

    sent, vectors = stage("encode", encode)

    def phase2():
        if chan.ongrid:
            return airlink.phase2_rx(chan.P, chan.lam, vectors, cfg.noise_var, rngs["phase2_rx"])
        # off-grid channels do not lie on the dictionary: mix the element-domain channels directly
        direct = [chan.U * v[None, :] for v in chan.v_phase2]
        return airlink.phase2_rx(direct, chan.h, vectors, cfg.noise_var, rngs["phase2_rx"])

    Y = stage("phase2_rx", phase2)
    report = stage("ctad", lambda: run_ctad(
        Y, P_hat, K_init=cfg.K_init, delta=cfg.delta, schedule=schedule_from_config(cfg),
        rng=rngs["ctad"], init=cfg.init,
    ))

    def demap():
        per_block = [[] for _ in range(cfg.L)]
        per_component = []
        for k in range(report.K_hat):
            frags = []
            for l in range(cfg.L):
                cols = [report.factors[l][i][:, k] for i in range(cfg.d)]
                if any(np.linalg.norm(c) == 0 for c in cols):
                    frags = None
                    break
                idx = [demap_mode(c, con)[0] for c, con in zip(cols, constellations)]
                frags.append(indices_to_bits(idx, constellations))
            if frags is None:
                continue
            per_component.append(frags)
            for l in range(cfg.L):
                per_block[l].append(frags[l])
        for l in range(cfg.L):
            per_block[l].extend(_shared_mode_candidates(report.factors[l], constellations))
        return per_block, per_component

    per_block, per_component = stage("demap", demap)
    decoded = stage("decode", lambda: decode_tree(per_block, profile))

    def metrics():
        result.K_hat = report.K_hat
        result.rank_correct = report.K_hat == cfg.Ka
        result.nmse = nmse(chan.lam, report.G_hat)
        result.nmse_G = nmse_db(result.nmse)
        result.per = packet_error_rate(sent, decoded, cfg.Ka)
        result.false_alarms = false_alarms(sent, decoded)
        result.anchored_valid = sum(_anchored_ok(frags, profile) for frags in per_component)
        result.elbo_final = float(report.elbo_trace[-1])
        result.iterations = report.iterations
        result.converged = report.converged

    stage("metrics", metrics)
    return result


def _shared_mode_candidates(factors, constellations):
    """Extra fragments for components that collide in some mode of one block.

    Two devices that pick the same codeword in mode ``i`` make the block's
    decomposition unique only up to a mixing in the other modes, so the
    individual decisions there can both land on one device.  For every such
    group the codewords closest to the span of its other-mode vectors are
    offered as alternatives; the tree decoder's parity checks arbitrate.
    """
    K = factors[0].shape[1]
    live = [k for k in range(K) if all(np.linalg.norm(f[:, k]) > 0 for f in factors)]
    idx = {k: [demap_mode(f[:, k], c)[0] for f, c in zip(factors, constellations)] for k in live}
    extra = []
    for i in range(len(factors)):
        groups = {}
        for k in live:
            groups.setdefault(idx[k][i], []).append(k)
        for group in groups.values():
            if len(group) < 2:
                continue
            for j in range(len(factors)):
                if j == i:
                    continue
                cands, _ = demap_span([factors[j][:, k] for k in group], constellations[j])
                for c in cands:
                    if any(idx[k][j] == c for k in group):
                        continue
                    for k in group:
                        alt = list(idx[k])
                        alt[j] = c
                        extra.append(indices_to_bits(alt, constellations))
    return extra


def _anchored_ok(frags, profile):
    info = np.concatenate([f[: profile.info_sizes[l]] for l, f in enumerate(frags)])
    return all(
        parity_ok(info[: profile.info_offsets[l + 1]], frags[l], profile, l) for l in range(profile.L)
    )


def run_trial(cfg, seed):
    """Run one seeded end-to-end trial.

    Never raises for pipeline failures: the result comes back with
    ``failed=True`` and the failing ``stage`` and message filled in.
    """
    if not isinstance(cfg, SystemConfig):
        raise TypeError("cfg must be a SystemConfig")
    result = TrialResult(seed=int(seed), Ka=cfg.Ka)
    try:
        _pipeline(cfg, seed, result)
    except TrialError as exc:
        result.failed = True
        result.stage = exc.stage
        result.error = str(exc)
        log.warning("trial seed=%s failed: %s", seed, exc)
    return result


def trial_seeds(master_seed, trials):
    """Independent per-trial seeds spawned from the master seed.

    Trial ``t`` always gets the same seed for a given master, whatever the
    number of trials or the axis value, so sweep points share random draws.
    """
    root = np.random.SeedSequence(master_seed)
    return [int(s.generate_state(1, np.uint64)[0]) for s in root.spawn(trials)]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".9g")


def _aggregate(results):
    ok = [r for r in results if not r.failed]
    row = {"trials": len(results), "failures": len(results) - len(ok)}
    if not ok:
        for key in SWEEP_COLUMNS[:6]:
            row[key] = float("nan")
        row["wall_time_mean"] = float("nan")
        return row
    lin = float(np.mean([r.nmse for r in ok]))
    row.update(
        nmse_linear=lin,
        nmse_db=nmse_db(lin),
        per=float(np.mean([r.per for r in ok])),
        p_rank_correct=float(np.mean([r.rank_correct for r in ok])),
        k_hat_mean=float(np.mean([r.K_hat for r in ok])),
        false_alarm_mean=float(np.mean([r.false_alarms for r in ok])),
        wall_time_mean=float(np.mean([r.total_time for r in ok])),
    )
    return row


def _run_job(job):
    cfg, seed = job
    return run_trial(cfg, seed)


def sweep(cfg, axis, values, trials, out_path, workers=1, master_seed=None, plots=True):
    """Run ``trials`` seeded trials per axis value and write the summary CSV.

    The CSV (header row, 9 significant digits) holds only seed-determined
    quantities so that reruns are byte-identical; mean wall time per value goes
    to ``<stem>_timing.csv`` next to it.  With ``plots`` one PNG per metric is
    written as ``<stem>_<metric>.png``.  Returns ``(rows, results)`` where
    ``results[j]`` lists the TrialResults of value ``j``.
    """
    names = {f.name for f in fields(SystemConfig)}
    if axis not in names:
        raise ValueError(f"unknown sweep axis {axis!r}; choose a SystemConfig field")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    values = [coerce_field(axis, v) for v in values]
    master = cfg.seed if master_seed is None else master_seed
    seeds = trial_seeds(master, trials)
    cfgs = [_with_axis(cfg, axis, v) for v in values]

    jobs = [(c, s) for c in cfgs for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_run_job, jobs))
    else:
        flat = [_run_job(j) for j in jobs]
    results = [flat[j * trials:(j + 1) * trials] for j in range(len(values))]

    rows = []
    for v, res in zip(values, results):
        row = {axis: v}
        row.update(_aggregate(res))
        rows.append(row)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((axis,) + SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt_axis(row[axis])] + [_fmt(row[c]) for c in SWEEP_COLUMNS])
    timing = out_path.with_name(out_path.stem + "_timing.csv")
    with open(timing, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((axis, "wall_time_mean"))
        for row in rows:
            w.writerow([_fmt_axis(row[axis]), _fmt(row["wall_time_mean"])])
    if plots:
        _plot(rows, axis, out_path)
    return rows, results


def _with_axis(cfg, axis, value):
    changes = {axis: value}
    # keep derived consistency for the common axes
    if axis == "L" and len(cfg.parity) != value:
        changes["parity"] = _stretch_parity(cfg, value)
        changes["B_total"] = sum(cfg.R - p for p in changes["parity"])
    if axis == "Ka" and value > cfg.K_init:
        changes["K_init"] = 2 * value
    return cfg.with_(**changes)


def _stretch_parity(cfg, L):
    """Parity profile for a different block count: first block free, the rest as the last block."""
    tail = cfg.parity[-1] if len(cfg.parity) > 1 else cfg.R // 2
    return (0,) + tuple(min(tail, cfg.R) for _ in range(L - 1))


def _fmt_axis(value):
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, str):
        return value
    return _fmt(value)


def _plot(rows, axis, out_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = list(range(len(rows)))
    labels = [_fmt_axis(r[axis]) for r in rows]
    numeric = all(isinstance(r[axis], (int, float)) and not isinstance(r[axis], bool) for r in rows)
    if numeric:
        xs = [r[axis] for r in rows]
    for metric in ("nmse_db", "per", "p_rank_correct", "k_hat_mean"):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(xs, [r[metric] for r in rows], marker="o")
        if not numeric:
            ax.set_xticks(xs)
            ax.set_xticklabels(labels)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path.with_name(f"{out_path.stem}_{metric}.png"), dpi=100)
        plt.close(fig)
