"""Vector quantization: k-means codebooks, residual VQ, quantizer dropout.

The numpy functions here are the reference encode/decode path used for
tokenization. ``ResidualVQ`` is the trainable torch counterpart used inside
the SS-SC autoencoder; ``ResidualVQ.to_stack()`` exports its codebooks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CODEBOOK_MAGIC = b"DSCB"
CODEBOOK_VERSION = 1
DEFAULT_CODEBOOK_SIZE = 2048
MAX_RVQ_DEPTH = 8


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError(f"codebook entries must be a non-empty K x D matrix, got shape {e.shape}")
        if not np.isfinite(e).all():
            raise ValueError("codebook entries must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def __getitem__(self, idx: int) -> np.ndarray:
        if not 0 <= idx < self.size:
            raise IndexError(f"token id {idx} outside [0, {self.size})")
        return self.entries[idx]


@dataclass
class RvqStack:
    codebooks: list = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= len(self.codebooks) <= MAX_RVQ_DEPTH:
            raise ValueError(f"an RVQ stack holds 1..{MAX_RVQ_DEPTH} codebooks, got {len(self.codebooks)}")
        dims = {cb.dim for cb in self.codebooks}
        if len(dims) != 1:
            raise ValueError(f"all codebooks must share one dimension, got {sorted(dims)}")

    @property
    def max_depth(self) -> int:
        return len(self.codebooks)

    @property
    def dim(self) -> int:
        return self.codebooks[0].dim


def _sq_dists(x: np.ndarray, entries: np.ndarray) -> np.ndarray:
    # direct differences, so exact ties stay exact
    return ((x[:, None, :] - entries[None, :, :]) ** 2).sum(-1)


def vq_encode_batch(vecs: np.ndarray, cb: Codebook, chunk: int = 256) -> np.ndarray:
    vecs = np.asarray(vecs, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != cb.dim:
        raise ValueError(f"expected vectors of dim {cb.dim}, got shape {vecs.shape}")
    out = np.empty(len(vecs), dtype=np.int64)
    for i in range(0, len(vecs), chunk):
        out[i : i + chunk] = np.argmin(_sq_dists(vecs[i : i + chunk], cb.entries), axis=1)
    return out


def vq_encode(vec, cb: Codebook) -> int:
    """Nearest codeword by squared distance; ties go to the lowest id."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (cb.dim,):
        raise ValueError(f"expected a vector of dim {cb.dim}, got shape {vec.shape}")
    return int(vq_encode_batch(vec[None], cb)[0])


def _check_depth(depth: int, stack: RvqStack):
    if not 1 <= depth <= stack.max_depth:
        raise ValueError(f"depth must lie in [1, {stack.max_depth}], got {depth}")


def rvq_encode_batch(frames: np.ndarray, stack: RvqStack, depth: int) -> np.ndarray:
    """Greedy residual quantization of ``(N, D)`` frames; returns ``(N, depth)`` ids."""
    _check_depth(depth, stack)
    residual = np.array(frames, dtype=np.float64)
    if residual.ndim != 2 or residual.shape[1] != stack.dim:
        raise ValueError(f"expected frames of dim {stack.dim}, got shape {residual.shape}")
    ids = np.empty((len(residual), depth), dtype=np.int64)
    for level in range(depth):
        cb = stack.codebooks[level]
        ids[:, level] = vq_encode_batch(residual, cb)
        residual = residual - cb.entries[ids[:, level]]
    return ids


def rvq_encode(frame, stack: RvqStack, depth: int) -> list[int]:
    frame = np.asarray(frame, dtype=np.float64)
    return [int(i) for i in rvq_encode_batch(frame[None], stack, depth)[0]]


def rvq_decode_batch(ids: np.ndarray, stack: RvqStack) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] > stack.max_depth:
        raise ValueError(f"expected (N, depth<= {stack.max_depth}) ids, got shape {ids.shape}")
    out = np.zeros((ids.shape[0], stack.dim))
    for level in range(ids.shape[1]):
        cb = stack.codebooks[level]
        col = ids[:, level]
        if col.size and (col.min() < 0 or col.max() >= cb.size):
            raise ValueError(f"invalid token id at level {level}: ids must lie in [0, {cb.size})")
        out += cb.entries[col]
    return out


def rvq_decode(ids, stack: RvqStack) -> np.ndarray:
    ids = list(ids)
    if not ids:
        return np.zeros(stack.dim)
    return rvq_decode_batch(np.asarray([ids]), stack)[0]


def sample_dropout_depth(rng: np.random.Generator, max_depth: int = MAX_RVQ_DEPTH) -> int:
    """Quantizer dropout: depth drawn uniformly from ``{1, ..., max_depth}``."""
    return int(rng.integers(1, max_depth + 1))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = rng.integers(len(x))
        else:
            idx = rng.choice(len(x), p=d2 / total)
        centers[i] = x[idx]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(1))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray, chunk: int = 4096):
    c2 = (centers**2).sum(1)
    labels = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for i in range(0, len(x), chunk):
        xb = x[i : i + chunk]
        d = (xb**2).sum(1)[:, None] - 2.0 * xb @ centers.T + c2[None]
        labels[i : i + chunk] = d.argmin(1)
        dist[i : i + chunk] = np.maximum(d[np.arange(len(xb)), labels[i : i + chunk]], 0.0)
    return labels, dist


def kmeans_fit(features, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the largest centroid shift falls below ``tol`` relative to the
    data scale, or after ``max_iter`` iterations. Empty clusters are reseeded
    with the point farthest from its centroid.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be an N x D matrix, got shape {x.shape}")
    if len(x) < k:
        raise ValueError(f"need at least k={k} feature vectors, got {len(x)}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    scale = max(float(np.abs(x).max()), 1e-12)
    for _ in range(max_iter):
        labels, dist = _assign(x, centers)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(dist.argmax())
            new[j] = x[far]
            dist[far] = -1.0
        shift = np.abs(new - centers).max()
        centers = new
        if shift <= tol * scale:
            break
    return Codebook(centers)


def save_codebook(cb: Codebook, path) -> None:
    header = CODEBOOK_MAGIC + struct.pack("<BII", CODEBOOK_VERSION, cb.size, cb.dim)
    Path(path).write_bytes(header + cb.entries.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    raw = Path(path).read_bytes()
    if raw[:4] != CODEBOOK_MAGIC:
        raise ValueError(f"{path}: not a codebook file (bad magic)")
    version, k, d = struct.unpack_from("<BII", raw, 4)
    if version != CODEBOOK_VERSION:
        raise ValueError(f"{path}: unsupported codebook version {version}")
    payload = raw[13:]
    if len(payload) != 4 * k * d:
        raise ValueError(f"{path}: expected {4 * k * d} payload bytes, found {len(payload)}")
    return Codebook(np.frombuffer(payload, dtype="<f4").reshape(k, d).astype(np.float64))


class EmaCodebook(nn.Module):
    """One trainable VQ level: EMA codeword updates, k-means init, dead-code reset."""

    def __init__(self, size: int, dim: int, decay: float = 0.99, eps: float = 1e-5):
        super().__init__()
        self.size, self.dim, self.decay, self.eps = size, dim, decay, eps
        self.register_buffer("embed", torch.zeros(size, dim))
        self.register_buffer("cluster_size", torch.zeros(size))
        self.register_buffer("embed_sum", torch.zeros(size, dim))
        self.register_buffer("initted", torch.tensor(False))
        self.register_buffer("usage", torch.zeros(size))
        self.register_buffer("idle_epochs", torch.zeros(size))

    def init_from(self, x: torch.Tensor, seed: int = 0):
        flat = x.detach().reshape(-1, self.dim).double().cpu().numpy()
        if len(flat) >= self.size:
            centers = kmeans_fit(flat, self.size, seed=seed, max_iter=20).entries
        else:
            rng = np.random.default_rng(seed)
            centers = flat[rng.integers(len(flat), size=self.size)]
            centers = centers + 1e-3 * rng.standard_normal(centers.shape)
        self.embed.copy_(torch.as_tensor(centers, dtype=self.embed.dtype))
        self.embed_sum.copy_(self.embed)
        self.cluster_size.fill_(1.0)
        self.initted.fill_(True)

    def nearest(self, x: torch.Tensor) -> torch.Tensor:
        flat = x.reshape(-1, self.dim)
        d = (flat.pow(2).sum(1, keepdim=True) - 2 * flat @ self.embed.t() + self.embed.pow(2).sum(1)[None])
        return d.argmin(1).view(x.shape[:-1])

    def forward(self, x: torch.Tensor, update: bool, rows: torch.Tensor | None = None):
        """Quantize ``(B, ..., D)``; EMA statistics use only examples where ``rows`` is set."""
        ids = self.nearest(x.detach())
        quant = F.embedding(ids, self.embed)
        if update:
            keep = x.detach() if rows is None else x.detach()[rows]
            flat = keep.reshape(-1, self.dim)
            sel = ids if rows is None else ids[rows]
            onehot = F.one_hot(sel.reshape(-1), self.size).type(flat.dtype)
            counts = onehot.sum(0)
            self.usage.add_(counts)
            self.cluster_size.mul_(self.decay).add_(counts, alpha=1 - self.decay)
            self.embed_sum.mul_(self.decay).add_(onehot.t() @ flat, alpha=1 - self.decay)
            n = self.cluster_size.sum()
            smoothed = (self.cluster_size + self.eps) / (n + self.size * self.eps) * n
            self.embed.copy_(self.embed_sum / smoothed[:, None])
        return quant, ids

    def end_epoch(self, samples: torch.Tensor, gen: torch.Generator, patience: int = 2) -> int:
        """Replace codewords idle for ``patience`` epochs; returns how many."""
        self.idle_epochs.add_(1.0).mul_((self.usage == 0).to(self.idle_epochs.dtype))
        self.usage.zero_()
        dead = torch.nonzero(self.idle_epochs >= patience).flatten()
        if len(dead) == 0:
            return 0
        flat = samples.detach().reshape(-1, self.dim)
        pick = torch.randint(0, len(flat), (len(dead),), generator=gen)
        self.embed[dead] = flat[pick].to(self.embed.dtype)
        self.embed_sum[dead] = self.embed[dead]
        self.cluster_size[dead] = 1.0
        self.idle_epochs[dead] = 0.0
        return len(dead)


class ResidualVQ(nn.Module):
    def __init__(self, num_levels: int = MAX_RVQ_DEPTH, size: int = DEFAULT_CODEBOOK_SIZE, dim: int = 64, decay: float = 0.99):
        super().__init__()
        self.levels = nn.ModuleList(EmaCodebook(size, dim, decay) for _ in range(num_levels))
        self.dim = dim

    @property
    def max_depth(self) -> int:
        return len(self.levels)

    def forward(self, x: torch.Tensor, depth=None):
        """Quantize ``(B, ..., D)`` with straight-through gradients.

        ``depth`` is an int or a ``(B,)`` tensor of per-example depths
        (quantizer dropout). Returns the quantized tensor, ids for the deepest
        requested level count, the commitment loss and the residual entering
        each level (for dead-code replacement).
        """
        batch = x.shape[0]
        if depth is None:
            depth = self.max_depth
        per = torch.as_tensor(depth, dtype=torch.long).expand(batch) if not torch.is_tensor(depth) or depth.dim() == 0 else depth.long()
        if int(per.min()) < 1 or int(per.max()) > self.max_depth:
            raise ValueError(f"depth must lie in [1, {self.max_depth}], got {per.tolist()}")
        update = self.training
        residual = x
        quant = torch.zeros_like(x)
        ids, residuals = [], []
        for level in range(int(per.max())):
            cb = self.levels[level]
            rows = per > level
            if update and not bool(cb.initted):
                cb.init_from(residual[rows], seed=level)
            residuals.append(residual.detach()[rows])
            q, i = cb(residual, update, None if bool(rows.all()) else rows)
            q = q * rows.view(batch, *([1] * (x.dim() - 1))).to(q.dtype)
            quant = quant + q
            residual = residual - q.detach()
            ids.append(i)
        commit = F.mse_loss(x, quant.detach())
        quant = x + (quant - x).detach()
        return quant, torch.stack(ids, -1), commit, residuals

    def decode_ids(self, ids: torch.Tensor) -> torch.Tensor:
        out = 0
        for level in range(ids.shape[-1]):
            out = out + F.embedding(ids[..., level], self.levels[level].embed)
        return out

    def to_stack(self) -> RvqStack:
        return RvqStack([Codebook(cb.embed.detach().double().cpu().numpy()) for cb in self.levels])
