"""Watermark encoder/decoder assembly.

The encoder perturbs atom positions additively (p' = p + position mask) using
position, atom, and edge features plus the expanded payload bits. The decoder
never sees raw coordinates: extraction always runs on the canonicalized
low-dimensional recovery of the distance matrix, which is what makes the hard
bits invariant under rigid motions of the input.

Ablation variants drop the atom embedder, the edge embedder, or both; a
disabled embedder is removed from the feature concatenation entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import geometry
from .errors import DataError, NumericError
from .layers import (Conv3x3, CrossBlock, Linear, LayerNorm, ParamStore,
                     SelfAttention, adaptive_avg_pool, sinusoidal_pe)
from .molecule import EdgeSet, Molecule, MoleculeBatch, batch_molecules
from .transforms import RigidTransform

MAX_PAYLOAD_BITS = 32


@dataclass
class Watermark:
    """Binary payload of length L (1..32 bits)."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits).reshape(-1).astype(np.int64)
        if not (1 <= b.size <= MAX_PAYLOAD_BITS):
            raise DataError(f"payload length must be 1..{MAX_PAYLOAD_BITS}, got {b.size}")
        if not np.isin(b, (0, 1)).all():
            raise DataError("payload bits must be 0/1")
        self.bits = b

    @property
    def length(self) -> int:
        return self.bits.size

    @classmethod
    def from_string(cls, text: str) -> "Watermark":
        """Parse '0101...' or 'hex:a3/8' (hex digits with explicit bit length)."""
        text = text.strip()
        if text.startswith("hex:"):
            body = text[4:]
            if "/" not in body:
                raise DataError("hex payload needs an explicit length, e.g. hex:a3/8")
            digits, ln = body.split("/", 1)
            value, length = int(digits, 16), int(ln)
            bits = [(value >> (length - 1 - i)) & 1 for i in range(length)]
            return cls(np.array(bits))
        if not set(text) <= {"0", "1"}:
            raise DataError(f"payload string must be binary digits, got {text!r}")
        return cls(np.array([int(ch) for ch in text]))

    def to_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    @classmethod
    def random(cls, rng: np.random.Generator, length: int) -> "Watermark":
        return cls(rng.integers(0, 2, size=length))


@dataclass
class CodecConfig:
    """Architecture knobs; the (use_atom, use_edge) flags name the variants."""

    L: int
    C: int = 64
    d_model: int = 64
    aggregation: str = "MEAN"            # SUM | MEAN neighbor-distance pooling
    use_atom_embedder: bool = True
    use_edge_embedder: bool = True
    growth: int = 16

    def __post_init__(self):
        if not (1 <= self.L <= MAX_PAYLOAD_BITS):
            raise DataError(f"L must be 1..{MAX_PAYLOAD_BITS}, got {self.L}")
        if self.aggregation not in ("SUM", "MEAN"):
            raise DataError(f"aggregation must be SUM or MEAN, got {self.aggregation!r}")
        if self.C < 1 or self.growth < 0 or self.d_model < 2:
            raise DataError("bad codec dimensions")

    @property
    def variant(self) -> str:
        return {(True, True): "original", (False, True): "variant1",
                (True, False): "variant2", (False, False): "variant3"}[
                    (self.use_atom_embedder, self.use_edge_embedder)]

    def for_variant(self, name: str) -> "CodecConfig":
        flags = {"original": (True, True), "variant1": (False, True),
                 "variant2": (True, False), "variant3": (False, False)}
        if name not in flags:
            raise DataError(f"unknown variant {name!r}")
        atom, edge = flags[name]
        return replace(self, use_atom_embedder=atom, use_edge_embedder=edge)

    @property
    def encoder_channels(self) -> int:
        return self.C + int(self.use_atom_embedder) + int(self.use_edge_embedder) + self.L

    @property
    def decoder_channels(self) -> int:
        return self.C + int(self.use_atom_embedder) + int(self.use_edge_embedder)


@dataclass
class EncoderOutputs:
    """p_prime = positions + p_mask, both (B,1,N,3) graph tensors."""

    p_prime: ad.Tensor
    p_mask: ad.Tensor


def expand_watermark(m: Watermark, batch: int, n_atoms: int) -> np.ndarray:
    """Replicate one payload to (B, L, N, 3): every (b, n, coord) cell of
    channel l carries bit l."""
    return expand_watermark_bits(np.tile(m.bits[None, :], (batch, 1)), n_atoms)


def expand_watermark_bits(bits: np.ndarray, n_atoms: int) -> np.ndarray:
    """Per-molecule payload rows (B, L) -> (B, L, N, 3)."""
    b, length = bits.shape
    return np.broadcast_to(bits[:, :, None, None].astype(np.float64),
                           (b, length, n_atoms, 3)).copy()


def aggregate_distance(edges: EdgeSet, positions: np.ndarray, mode: str = "MEAN") -> np.ndarray:
    """Per-atom aggregate of distances to every listed neighbor, (N, 1)."""
    if mode not in ("SUM", "MEAN"):
        raise DataError(f"aggregation must be SUM or MEAN, got {mode!r}")
    p = np.asarray(positions, dtype=np.float64)
    d = np.sqrt(geometry.squared_distances(p))
    rows = np.take_along_axis(d, edges.edges, axis=1)
    agg = rows.sum(axis=1) if mode == "SUM" else rows.mean(axis=1)
    return agg[:, None]


def _aggregate_distance_graph(p4: ad.Tensor, mask: np.ndarray, sizes: np.ndarray,
                              mode: str) -> ad.Tensor:
    """Differentiable batched neighbor-distance aggregation, (B,1,N,1)."""
    b, _, n, _ = p4.shape
    dt = p4.dtype.type
    p = ad.reshape(p4, (b, n, 3))
    sq = ad.tsum(ad.mul(p, p), axis=2, keepdims=True)                 # (B,N,1)
    gram = ad.matmul(p, ad.transpose(p, (0, 2, 1)))
    d2 = ad.relu(ad.sub(ad.add(sq, ad.transpose(sq, (0, 2, 1))), gram * 2.0))
    pair = (mask[:, :, None] * mask[:, None, :]).astype(dt)
    pair *= 1.0 - np.eye(n, dtype=dt)[None]
    d = ad.mul(ad.sqrt(d2), ad.Tensor(pair))
    agg = ad.tsum(d, axis=2)                                          # (B,N)
    if mode == "MEAN":
        denom = np.maximum(np.asarray(sizes, dtype=np.float64) - 1.0, 1.0).astype(dt)
        agg = ad.div(agg, ad.Tensor(denom[:, None]))
    agg = ad.mul(agg, ad.Tensor(mask.astype(dt)))
    return ad.reshape(agg, (b, 1, n, 1))


class _PositionModule:
    """Two same-padding 3x3 convolutions (1 -> C -> C) with a rectifier between."""

    def __init__(self, store: ParamStore, prefix: str, channels: int, rng):
        self.conv1 = Conv3x3(store, prefix + "conv1.", 1, channels, rng)
        self.conv2 = Conv3x3(store, prefix + "conv2.", channels, channels, rng)

    def __call__(self, p4: ad.Tensor, mask4: ad.Tensor) -> ad.Tensor:
        h = ad.relu(self.conv1(p4))
        return ad.mul(self.conv2(h), mask4)


class _AtomEmbedder:
    """Species one-hot and positional-encoded charge -> per-atom 3-vector."""

    def __init__(self, store: ParamStore, prefix: str, species: int, d_model: int, rng):
        self.lin_type = Linear(store, prefix + "type.", species, d_model, rng)
        self.lin_out = Linear(store, prefix + "out.", 2 * d_model, 3, rng)

    def __call__(self, t4: ad.Tensor, c4: ad.Tensor, pe4: ad.Tensor,
                 mask4: ad.Tensor) -> ad.Tensor:
        charge = ad.mul(c4, pe4)                                      # PE o charge broadcast
        types = ad.relu(self.lin_type(t4))
        f = self.lin_out(ad.concat([types, charge], axis=3))
        return ad.mul(f, mask4)


class _EdgeEmbedder:
    """Neighbor-distance aggregate (+ atom features when present) -> 3-vector."""

    def __init__(self, store: ParamStore, prefix: str, d_model: int, rng,
                 with_atom_features: bool):
        in_agg = (3 if with_atom_features else 0) + 1
        self.with_atom_features = with_atom_features
        self.lin_agg = Linear(store, prefix + "agg.", in_agg, 3, rng)
        self.lin_hidden = Linear(store, prefix + "hidden.", 3 + d_model, d_model, rng)
        self.norm = LayerNorm(store, prefix + "norm.", d_model)
        self.lin_out = Linear(store, prefix + "out.", d_model, 3, rng)

    def __call__(self, f_a: ad.Tensor | None, a_d: ad.Tensor, pe4: ad.Tensor,
                 mask4: ad.Tensor) -> ad.Tensor:
        parts = ([f_a, a_d] if self.with_atom_features else [a_d])
        fa_prime = self.lin_agg(ad.concat(parts, axis=3))
        b, _, n, _ = fa_prime.shape
        pe_b = ad.Tensor(np.broadcast_to(pe4.data, (b, 1, n, pe4.shape[3])).copy())
        h = ad.relu(self.norm(self.lin_hidden(ad.concat([fa_prime, pe_b], axis=3))))
        return ad.mul(self.lin_out(h), mask4)


class Encoder:
    def __init__(self, store: ParamStore, cfg: CodecConfig, species: int, rng,
                 prefix: str = "encoder."):
        self.cfg = cfg
        self.pos = _PositionModule(store, prefix + "pos.", cfg.C, rng)
        self.atom = (_AtomEmbedder(store, prefix + "atom.", species, cfg.d_model, rng)
                     if cfg.use_atom_embedder else None)
        self.edge = (_EdgeEmbedder(store, prefix + "edge.", cfg.d_model, rng,
                                   cfg.use_atom_embedder)
                     if cfg.use_edge_embedder else None)
        ch = cfg.encoder_channels
        self.cross = [CrossBlock(store, f"{prefix}cross{i}.", ch + i * cfg.growth,
                                 cfg.growth, rng) for i in range(3)]
        self.attn = SelfAttention(store, prefix + "attn.", ch + 3 * cfg.growth, 3, rng)
        self.out_conv = Conv3x3(store, prefix + "out.", ch + 3 * cfg.growth, 1, rng)

    def __call__(self, p4: ad.Tensor, t4: ad.Tensor, c4: ad.Tensor, mask: np.ndarray,
                 sizes: np.ndarray, bits: np.ndarray) -> EncoderOutputs:
        if bits.shape[1] != self.cfg.L:
            raise DataError(f"payload has {bits.shape[1]} bits, codec expects {self.cfg.L}")
        dt = p4.dtype.type
        b, _, n, _ = p4.shape
        mask4 = ad.Tensor(mask.astype(dt)[:, None, :, None])
        pe4 = ad.Tensor(sinusoidal_pe(n, self.cfg.d_model).astype(dt)[None, None])
        feats = [self.pos(p4, mask4)]
        f_a = self.atom(t4, c4, pe4, mask4) if self.atom else None
        if f_a is not None:
            feats.append(f_a)
        if self.edge:
            a_d = _aggregate_distance_graph(p4, mask, sizes, self.cfg.aggregation)
            feats.append(self.edge(f_a, a_d, pe4, mask4))
        m_e = expand_watermark_bits(bits, n).astype(dt) * mask.astype(dt)[:, None, :, None]
        feats.append(ad.Tensor(m_e))
        z = ad.concat(feats, axis=1)
        for block in self.cross:
            z = block(z, mask4)
        gate = self.attn(z, mask)
        p_mask = ad.mul(self.out_conv(ad.mul(z, gate)), mask4)
        return EncoderOutputs(ad.add(p4, p_mask), p_mask)


class Decoder:
    def __init__(self, store: ParamStore, cfg: CodecConfig, species: int, rng,
                 prefix: str = "decoder."):
        self.cfg = cfg
        self.pos = _PositionModule(store, prefix + "pos.", cfg.C, rng)
        self.atom = (_AtomEmbedder(store, prefix + "atom.", species, cfg.d_model, rng)
                     if cfg.use_atom_embedder else None)
        self.edge = (_EdgeEmbedder(store, prefix + "edge.", cfg.d_model, rng,
                                   cfg.use_atom_embedder)
                     if cfg.use_edge_embedder else None)
        ch = cfg.decoder_channels
        self.cross = [CrossBlock(store, f"{prefix}cross{i}.", ch + i * cfg.growth,
                                 cfg.growth, rng) for i in range(3)]
        self.out_conv = Conv3x3(store, prefix + "out.", ch + 3 * cfg.growth, cfg.L, rng)

    def __call__(self, p_hat4: ad.Tensor, t4: ad.Tensor, c4: ad.Tensor, mask: np.ndarray,
                 sizes: np.ndarray) -> ad.Tensor:
        dt = p_hat4.dtype.type
        b, _, n, _ = p_hat4.shape
        mask4 = ad.Tensor(mask.astype(dt)[:, None, :, None])
        pe4 = ad.Tensor(sinusoidal_pe(n, self.cfg.d_model).astype(dt)[None, None])
        feats = [self.pos(p_hat4, mask4)]
        f_a = self.atom(t4, c4, pe4, mask4) if self.atom else None
        if f_a is not None:
            feats.append(f_a)
        if self.edge:
            a_d = _aggregate_distance_graph(p_hat4, mask, sizes, self.cfg.aggregation)
            feats.append(self.edge(f_a, a_d, pe4, mask4))
        z = ad.concat(feats, axis=1)
        for block in self.cross:
            z = block(z, mask4)
        logits = ad.mul(self.out_conv(z), mask4)
        pooled = adaptive_avg_pool(logits, mask, sizes)               # (B, L, 1, 1)
        return ad.sigmoid(ad.reshape(pooled, (b, self.cfg.L)))


def hard_bits(continuous: np.ndarray) -> np.ndarray:
    """Elementwise rounding of sigmoid outputs at the 0.5 midpoint."""
    return (np.asarray(continuous) >= 0.5).astype(np.int64)


def recover_coordinates_graph(p_prime: ad.Tensor, sizes: np.ndarray,
                              transforms: list[RigidTransform] | None = None) -> ad.Tensor:
    """Differentiable distance-matrix -> low-rank recovery -> canonical pose.

    Runs per molecule on the unpadded rows in float64 (the geometry side of
    the pipeline stays double precision), then re-pads and restacks. Optional
    rigid transforms are applied to each molecule's coordinates first; they
    change nothing in exact arithmetic, which is the point.
    """
    b, _, n, _ = p_prime.shape
    out_dt = p_prime.dtype
    recovered = []
    for idx in range(b):
        nb = int(sizes[idx])
        rows = ad.cast(p_prime[idx, 0, :nb, :], np.float64)
        if transforms is not None and transforms[idx] is not None:
            t = transforms[idx]
            rows = ad.add(ad.matmul(rows, ad.Tensor(t.A)), ad.Tensor(t.T))
        sq = ad.tsum(ad.mul(rows, rows), axis=1, keepdims=True)
        d2 = ad.relu(ad.sub(ad.add(sq, ad.transpose(sq, (1, 0))),
                            ad.matmul(rows, ad.transpose(rows, (1, 0))) * 2.0))
        j = geometry.centering_matrix(nb)
        gram = ad.matmul(ad.Tensor(j), ad.matmul(d2, ad.Tensor(j))) * (-0.5)
        evals, evecs = ad.eigh_sym(gram)
        k = min(3, nb)
        cols = [nb - 1 - i for i in range(k)]                          # descending eigenvalues
        lam = ad.relu(evals[cols])
        p_hat = ad.mul(evecs[:, cols], ad.sqrt(lam))
        signs = geometry.canonical_signs(p_hat.data)
        p_hat = ad.mul(p_hat, ad.Tensor(signs[None, :]))
        p_hat = ad.pad(p_hat, ((0, n - nb), (0, 3 - k)))
        recovered.append(ad.cast(p_hat, out_dt))
    return ad.reshape(ad.stack(recovered, axis=0), (b, 1, n, 3))


class WatermarkCodec:
    """Encoder + decoder pair over one parameter store."""

    def __init__(self, cfg: CodecConfig, species: int, seed: int | None = None,
                 dtype=np.float32, store: ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.species = species
        self.store = store if store is not None else ParamStore(dtype)
        if rng is None:
            rng = np.random.default_rng([0 if seed is None else seed, 0])
        self.encoder = Encoder(self.store, cfg, species, rng)
        self.decoder = Decoder(self.store, cfg, species, rng)

    def batch_inputs(self, batch: MoleculeBatch):
        dt = self.store.dtype
        p4 = ad.Tensor(batch.positions.astype(dt))
        t4 = ad.Tensor(batch.atom_types.astype(dt))
        c4 = ad.Tensor(batch.charges.astype(dt))
        return p4, t4, c4, batch.mask, batch.sizes

    def embed(self, mol: Molecule, m: Watermark) -> Molecule:
        """Watermarked copy: perturbed positions, node features untouched."""
        if m.length != self.cfg.L:
            raise DataError(f"payload length {m.length} != codec capacity {self.cfg.L}")
        batch = batch_molecules([mol], 1)[0]
        p4, t4, c4, mask, sizes = self.batch_inputs(batch)
        out = self.encoder(p4, t4, c4, mask, sizes, m.bits[None, :])
        shift = out.p_mask.data[0, 0, : mol.n_atoms].astype(np.float64)
        return mol.with_positions(mol.positions + shift)

    def extract(self, mol: Molecule) -> Watermark:
        """Recover the payload from (a possibly rigidly transformed) molecule."""
        p_hat = geometry.invariant_coordinates(mol.positions)
        batch = batch_molecules([mol], 1)[0]
        _, t4, c4, mask, sizes = self.batch_inputs(batch)
        p_hat4 = ad.Tensor(p_hat.astype(self.store.dtype)[None, None])
        cont = self.decoder(p_hat4, t4, c4, mask, sizes)
        return Watermark(hard_bits(cont.data[0]))
