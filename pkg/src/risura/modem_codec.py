"""Tensor modulation and the tree outer code.

A message of ``B_total`` bits is split into ``L`` blocks of ``R`` coded bits:
block 1 carries ``R`` info bits, block ``l >= 2`` carries ``R - p_l`` info bits
followed by ``p_l`` parity bits.  Each block is then split across the ``d``
tensor modes; the bits of mode ``i`` select a codeword of a per-mode
sub-constellation and the transmitted signal is the outer product of the
selected codewords.

Sub-constellations are seeded random unit-norm codebooks.  Demapping is by
normalized correlation, so it is blind to the complex scale every recovered
CP factor carries.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import outer

__all__ = [
    "MAX_CODEBOOK_ENTRIES",
    "SubConstellation",
    "TreeCodeProfile",
    "make_constellations",
    "bits_to_int",
    "int_to_bits",
    "bits_to_hex",
    "encode_tree",
    "map_bits_to_signal",
    "demap_mode",
    "demap_span",
    "parity_ok",
    "decode_tree",
]

# complex entries stored across one codebook
MAX_CODEBOOK_ENTRIES = 1 << 24


def bits_to_int(bits):
    value = 0
    for b in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(b)
    return value


def int_to_bits(value, width):
    return np.array([(value >> (width - 1 - j)) & 1 for j in range(width)], dtype=np.uint8)


def bits_to_hex(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    width = max(1, (bits.size + 3) // 4)
    return format(bits_to_int(bits), f"0{width}x")


@dataclass(frozen=True)
class SubConstellation:
    mode_index: int
    dim: int
    bits: int
    seed: int
    codebook: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def build(cls, mode_index, dim, bits, seed):
        size = 1 << bits
        if size * dim > MAX_CODEBOOK_ENTRIES:
            raise ValueError(
                f"codebook with 2^{bits} codewords of length {dim} exceeds the "
                f"{MAX_CODEBOOK_ENTRIES}-entry memory bound; reduce bits per mode"
            )
        rng = np.random.default_rng([seed, dim, bits])
        book = rng.standard_normal((size, dim)) + 1j * rng.standard_normal((size, dim))
        book /= np.linalg.norm(book, axis=1, keepdims=True)
        return cls(mode_index=mode_index, dim=dim, bits=bits, seed=seed, codebook=book)

    @property
    def size(self):
        return self.codebook.shape[0]

    def max_coherence(self):
        g = np.abs(self.codebook.conj() @ self.codebook.T)
        np.fill_diagonal(g, 0.0)
        return float(g.max()) if self.size > 1 else 0.0


def make_constellations(tau, mode_bits, seed):
    if len(tau) != len(mode_bits):
        raise ValueError("need one bit count per mode")
    return [SubConstellation.build(i, t, b, seed) for i, (t, b) in enumerate(zip(tau, mode_bits))]


class TreeCodeProfile:
    """Block layout and parity equations of the tree code.

    Parity bit ``j`` of block ``l`` is the XOR of a seeded pseudo-random
    half-density subset of the info bits of blocks ``1..l``.
    """

    def __init__(self, L, R, parity, seed=0):
        parity = tuple(int(p) for p in parity)
        if len(parity) != L:
            raise ValueError(f"parity profile length {len(parity)} != L={L}")
        if parity[0] != 0:
            raise ValueError("block 1 must carry no parity bits")
        if any(p < 0 or p > R for p in parity):
            raise ValueError("parity counts must lie in [0, R]")
        self.L = int(L)
        self.R = int(R)
        self.parity = parity
        self.seed = int(seed)
        self.info_sizes = tuple(R - p for p in parity)
        self.info_offsets = tuple(int(x) for x in np.cumsum((0,) + self.info_sizes))
        rng = np.random.default_rng([self.seed, self.L, self.R])
        self.parity_matrices = [
            (rng.random((p, self.info_offsets[l + 1])) < 0.5).astype(np.uint8)
            for l, p in enumerate(parity)
        ]

    @property
    def B_total(self):
        return self.info_offsets[-1]

    @property
    def total_parity(self):
        return sum(self.parity)

    def __repr__(self):
        return f"TreeCodeProfile(L={self.L}, R={self.R}, parity={self.parity}, seed={self.seed})"


def encode_tree(message_bits, profile):
    """Return an ``(L, R)`` uint8 array of coded blocks."""
    msg = np.asarray(message_bits, dtype=np.uint8).reshape(-1)
    if msg.size != profile.B_total:
        raise ValueError(f"message has {msg.size} bits, profile expects {profile.B_total}")
    blocks = np.zeros((profile.L, profile.R), dtype=np.uint8)
    for l in range(profile.L):
        lo, hi = profile.info_offsets[l], profile.info_offsets[l + 1]
        blocks[l, : hi - lo] = msg[lo:hi]
        if profile.parity[l]:
            blocks[l, hi - lo:] = (profile.parity_matrices[l] @ msg[:hi]) % 2
    return blocks


def map_bits_to_signal(block_bits, constellations, power):
    """Map one block to ``sqrt(power) * x_1 o ... o x_d``; also returns the codeword indices."""
    bits = np.asarray(block_bits, dtype=np.uint8).reshape(-1)
    widths = [c.bits for c in constellations]
    if bits.size != sum(widths):
        raise ValueError(f"block has {bits.size} bits, constellations carry {sum(widths)}")
    indices, vectors, pos = [], [], 0
    for c, w in zip(constellations, widths):
        idx = bits_to_int(bits[pos:pos + w])
        pos += w
        indices.append(idx)
        vectors.append(c.codebook[idx])
    vectors[0] = np.sqrt(power) * vectors[0]
    return outer(*vectors), indices


def demap_mode(x_hat, constellation):
    """Scale- and phase-invariant codeword decision: ``argmax |c^H x| / ||x||``."""
    x = np.asarray(x_hat).reshape(-1)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("cannot demap an all-zero vector")
    corr = np.abs(constellation.codebook.conj() @ x) / nx
    idx = int(np.argmax(corr))  # first maximum wins ties
    return idx, float(min(corr[idx], 1.0))


def demap_span(vectors, constellation, count=None):
    """Codewords lying closest to the span of several estimated vectors.

    Components that share a codeword in one mode are only identified up to
    an invertible mixing in the other modes; their codewords there still lie
    in the span of the estimates.  Returns the indices of the ``count``
    (default: number of vectors) codewords with the largest energy fraction
    ``||Q^H c||^2`` in that span, best first, and the fractions.
    """
    V = np.column_stack([np.asarray(v).reshape(-1) for v in vectors])
    V = V[:, np.linalg.norm(V, axis=0) > 0]
    if V.shape[1] == 0:
        raise ValueError("cannot demap an all-zero span")
    count = V.shape[1] if count is None else int(count)
    Q, _ = np.linalg.qr(V)
    energy = np.sum(np.abs(constellation.codebook.conj() @ Q) ** 2, axis=1)
    order = np.argsort(-energy, kind="stable")[:count]
    return [int(i) for i in order], np.minimum(energy[order], 1.0)


def indices_to_bits(indices, constellations):
    return np.concatenate([int_to_bits(i, c.bits) for i, c in zip(indices, constellations)])


def parity_ok(path_info, fragment, profile, l):
    """Check block ``l``'s parity given the info bits of blocks ``1..l``."""
    p = profile.parity[l]
    if p == 0:
        return True
    return np.array_equal((profile.parity_matrices[l] @ path_info) % 2, fragment[profile.info_sizes[l]:])


def decode_tree(candidate_lists, profile):
    """Stitch per-block fragments into messages whose parity checks all pass.

    Explores every choice of one fragment per block, extending all live paths
    a block at a time and dropping those whose recomputed parity disagrees
    with the fragment's parity bits.  Returns the surviving messages (uint8
    arrays of length ``B_total``), deduplicated.
    """
    if len(candidate_lists) != profile.L:
        raise ValueError(f"expected {profile.L} candidate lists, got {len(candidate_lists)}")
    lists = []
    for l, cands in enumerate(candidate_lists):
        arr = np.asarray(cands, dtype=np.uint8).reshape(-1, profile.R)
        # repeated fragments only create duplicate paths
        if arr.shape[0]:
            _, first = np.unique(arr, axis=0, return_index=True)
            arr = arr[np.sort(first)]
        lists.append(arr)
    if any(arr.shape[0] == 0 for arr in lists):
        return []

    paths = lists[0][:, : profile.info_sizes[0]]
    for l in range(1, profile.L):
        frags = lists[l]
        info = frags[:, : profile.info_sizes[l]]
        par = frags[:, profile.info_sizes[l]:]
        n_paths, n_frag = paths.shape[0], frags.shape[0]
        cand = np.concatenate(
            [np.repeat(paths, n_frag, axis=0), np.tile(info, (n_paths, 1))], axis=1
        )
        if profile.parity[l]:
            expect = (cand.astype(np.int64) @ profile.parity_matrices[l].T.astype(np.int64)) % 2
            keep = np.all(expect == np.tile(par, (n_paths, 1)), axis=1)
            cand = cand[keep]
        paths = cand
        if paths.shape[0] == 0:
            return []

    out, seen = [], set()
    for row in paths:
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(row.copy())
    return out
