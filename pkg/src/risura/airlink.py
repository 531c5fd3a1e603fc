"""Physical-layer model of the RIS-aided uplink.

Covers steering vectors and the angular dictionary, device-RIS / RIS-BS
channel synthesis, RIS reflection patterns, the effective per-subblock mixing
matrices ``P_l = Vhat_l A_R`` and noisy received-signal synthesis for both
transmission phases.  Noise is circularly-symmetric complex Gaussian.
"""

from dataclasses import dataclass

import numpy as np

from .tensor_core import kruskal_reconstruct

__all__ = [
    "ChannelRealization",
    "steering_vector",
    "angle_grid",
    "build_dictionary",
    "large_scale_gain",
    "crandn",
    "synth_channels",
    "gen_ris_patterns",
    "phase1_rx",
    "effective_mixing",
    "phase2_rx",
]


def crandn(rng, *shape, var=1.0):
    """i.i.d. CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def steering_vector(x, n):
    """Half-wavelength ULA response ``[1, e^{-j pi x}, ..., e^{-j pi (n-1) x}] / sqrt(n)``."""
    if n < 1:
        raise ValueError("array length must be >= 1")
    return np.exp(-1j * np.pi * x * np.arange(n)) / np.sqrt(n)


def angle_grid(n_points):
    """``n_points`` uniformly spaced points covering [-1, 1).

    The right end point is excluded because x = -1 and x = 1 produce the same
    steering vector; with ``n_points`` equal to the array length this is the
    DFT grid.
    """
    if n_points < 1:
        raise ValueError("grid length must be >= 1")
    return -1.0 + 2.0 * np.arange(n_points) / n_points


def build_dictionary(N1, N2, N1g, N2g):
    """Angular dictionary ``A_R`` of shape ``(N1*N2, N1g*N2g)``."""
    if N1g < N1 or N2g < N2 or min(N1, N2) < 1:
        raise ValueError(f"invalid grid sizes: ({N1g}, {N2g}) for a {N1}x{N2} panel")
    a1 = np.stack([steering_vector(x, N1) for x in angle_grid(N1g)], axis=1)
    a2 = np.stack([steering_vector(x, N2) for x in angle_grid(N2g)], axis=1)
    return np.kron(a1, a2)


def large_scale_gain(distance, l0_db, d0, exponent):
    """Path gain ``l0 * (d / d0) ** -exponent`` (linear scale)."""
    return 10.0 ** (l0_db / 10.0) * (np.asarray(distance, dtype=float) / d0) ** (-exponent)


@dataclass
class ChannelRealization:
    A_R: np.ndarray          # (N, Ng)
    lam: np.ndarray          # (Ng, Ka) angular coefficients
    h: np.ndarray            # (N, Ka) device-RIS channels
    U: np.ndarray            # (M, N) RIS-BS channel
    large_scale: np.ndarray  # (Ka,) per-device large-scale gain
    V_phase1: np.ndarray = None      # (N, t_p)
    v_phase2: list = None            # L vectors of length N
    P: list = None                   # L matrices (M, Ng)
    ongrid: bool = True

    def attach_patterns(self, V_phase1, v_phase2):
        self.V_phase1 = V_phase1
        self.v_phase2 = list(v_phase2)
        self.P = [effective_mixing(self.U, self.A_R, v) for v in self.v_phase2]
        return self


def _device_gains(cfg, rng, count):
    lo, hi = cfg.dist_range
    dist = rng.uniform(lo, hi, size=count)
    gains = large_scale_gain(dist, cfg.l0_db, cfg.d0, cfg.exponent_devris)
    if cfg.normalize_pathloss:
        gains = gains / large_scale_gain(lo, cfg.l0_db, cfg.d0, cfg.exponent_devris)
    return gains


def _physical_response(cfg, azimuth, elevation):
    u = np.cos(elevation) * np.sin(azimuth)
    v = -np.cos(elevation) * np.cos(azimuth)
    return np.kron(steering_vector(u, cfg.N1), steering_vector(v, cfg.N2))


def synth_channels(cfg, rng, A_R=None):
    """Draw device-RIS and RIS-BS channels for the ``cfg.Ka`` active devices.

    ``cfg.mode == "ongrid"``: each angular vector has ``zeta_s`` nonzeros at
    uniformly chosen grid indices with CN(0, large_scale) values, and the
    channel is exactly ``A_R @ lam``.  ``"physical"``: ``paths_per_device``
    off-grid paths whose azimuth/elevation are uniform offsets (within the
    angular spread) around a uniformly drawn mean direction; ``lam`` is then
    the least-squares projection onto the dictionary, kept for reference.
    """
    if A_R is None:
        A_R = build_dictionary(cfg.N1, cfg.N2, cfg.N1g, cfg.N2g)
    Ka, Ng, N = cfg.Ka, cfg.Ng, cfg.N
    gains = _device_gains(cfg, rng, Ka)

    if cfg.mode == "ongrid":
        lam = np.zeros((Ng, Ka), dtype=complex)
        for k in range(Ka):
            support = rng.choice(Ng, size=cfg.zeta_s, replace=False)
            lam[support, k] = crandn(rng, cfg.zeta_s, var=gains[k])
        h = A_R @ lam
    else:
        half = np.deg2rad(cfg.angular_spread_deg) / 2.0
        h = np.zeros((N, Ka), dtype=complex)
        for k in range(Ka):
            az0 = rng.uniform(0.0, 2.0 * np.pi)
            el0 = rng.uniform(-np.pi / 2.0, np.pi / 2.0)
            for _ in range(cfg.paths_per_device):
                az = az0 + rng.uniform(-half, half)
                el = el0 + rng.uniform(-half, half)
                h[:, k] += crandn(rng, 1)[0] * _physical_response(cfg, az, el)
            h[:, k] *= np.sqrt(gains[k])
        lam = np.linalg.lstsq(A_R, h, rcond=None)[0]

    risbs = 1.0
    if not cfg.normalize_pathloss:
        risbs = large_scale_gain(cfg.dist_risbs, cfg.l0_db, cfg.d0, cfg.exponent_risbs)
    U = crandn(rng, cfg.M, N, var=risbs)
    return ChannelRealization(A_R=A_R, lam=lam, h=h, U=U, large_scale=gains,
                              ongrid=cfg.mode == "ongrid")


def gen_ris_patterns(N, t_p, L, p_on, rng):
    """Phase-1 matrix (Bernoulli on/off, uniform phases) and L unit-modulus phase-2 vectors."""
    if t_p < 1 or L < 1:
        raise ValueError("need t_p >= 1 and L >= 1")
    on = rng.random((N, t_p)) < p_on
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(N, t_p))
    V_phase1 = on * np.exp(1j * theta)
    v_phase2 = [np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=N)) for _ in range(L)]
    return V_phase1, v_phase2


def phase1_rx(U, h1, g1, V_phase1, noise_var, rng):
    """``Y = U (V o (h1 g1^T)) + W``."""
    U = np.asarray(U)
    h1 = np.asarray(h1).reshape(-1)
    g1 = np.asarray(g1).reshape(-1)
    V_phase1 = np.asarray(V_phase1)
    if V_phase1.shape != (h1.size, g1.size) or U.shape[1] != h1.size:
        raise ValueError(
            f"shape mismatch: U {U.shape}, h1 {h1.shape}, g1 {g1.shape}, V {V_phase1.shape}"
        )
    F = V_phase1 * np.outer(h1, g1)
    Y = U @ F
    if noise_var > 0:
        Y = Y + crandn(rng, *Y.shape, var=noise_var)
    return Y


def effective_mixing(U, A_R, v):
    """``P = Vhat A_R`` with ``Vhat[:, n] = v[n] * U[:, n]``."""
    U = np.asarray(U)
    v = np.asarray(v).reshape(-1)
    if U.shape[1] != v.size or A_R.shape[0] != v.size:
        raise ValueError(f"shape mismatch: U {U.shape}, A_R {A_R.shape}, v {v.shape}")
    return (U * v[None, :]) @ A_R


def phase2_rx(P_list, lam, mode_vectors, noise_var, rng):
    """Received subblock tensors.

    Parameters
    ----------
    P_list : list of (M, Ng) arrays
    lam : (Ng, Ka) array
    mode_vectors : nested list ``[l][i]`` of ``(tau_i, Ka)`` arrays
        Column k of ``mode_vectors[l][i]`` is device k's mode-i vector in
        subblock l (transmit power already folded in).
    noise_var : float

    Returns
    -------
    list of arrays of shape ``(tau_1, ..., tau_d, M)``.
    """
    lam = np.asarray(lam)
    if len(mode_vectors) != len(P_list):
        raise ValueError("need one set of mode vectors per subblock")
    out = []
    for P, xs in zip(P_list, mode_vectors):
        if any(x.shape[1] != lam.shape[1] for x in xs) or P.shape[1] != lam.shape[0]:
            raise ValueError("shape mismatch between signals, mixing matrix and channels")
        shape = tuple(x.shape[0] for x in xs) + (P.shape[0],)
        if lam.shape[1] == 0:
            Y = np.zeros(shape, dtype=complex)
        else:
            Y = kruskal_reconstruct(list(xs) + [P @ lam]).astype(complex)
        if noise_var > 0:
            Y = Y + crandn(rng, *shape, var=noise_var)
        out.append(Y)
    return out
