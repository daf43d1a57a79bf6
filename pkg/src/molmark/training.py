"""Joint optimization of the watermark encoder and decoder.

The total objective is lambda_E * L_E + lambda_D * L_D with dynamically
re-balanced weights: lambda_E ramps up on a fixed epoch schedule while
lambda_D decays with the previous epoch's bit accuracy, so early training
buys extraction accuracy and later training buys structural fidelity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .codec import (CodecConfig, Watermark, WatermarkCodec, hard_bits,
                    recover_coordinates_graph)
from .errors import DataError, NumericError
from .layers import ParamStore
from .molecule import Molecule, batch_molecules
from .transforms import random_transform

CHECKPOINT_MAGIC = b"MWM1"
CHECKPOINT_VERSION = 1

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
DEFAULT_LR = 1e-3


@dataclass
class ScheduleParams:
    """Weights of the dynamic balance: lambda_E = rho + beta * floor(t/f),
    lambda_D = delta * (1 - bit accuracy)."""

    rho: float = 0.01
    beta: float = 0.25
    delta: float = 100.0
    f: int = 50

    def __post_init__(self):
        if self.rho <= 0 or self.beta <= 0 or self.delta <= 0:
            raise DataError("schedule constants must be strictly positive")
        if self.f < 1:
            raise DataError(f"schedule interval must be >= 1, got {self.f}")


def schedule(t: int, gamma: float, s: ScheduleParams) -> tuple[float, float]:
    """Loss weights at epoch t given the previous epoch's bit accuracy."""
    if t < 0 or not (0.0 <= gamma <= 1.0):
        raise DataError(f"bad schedule inputs t={t}, gamma={gamma}")
    return s.rho + s.beta * (t // s.f), s.delta * (1.0 - gamma)


def _as_tensor(x) -> ad.Tensor:
    return x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))


def loss_encoder(p, p_prime, mask=None) -> ad.Tensor:
    """Largest squared coordinate shift plus the per-atom mean squared
    displacement, over unmasked atoms only."""
    p, p_prime = _as_tensor(p), _as_tensor(p_prime)
    diff = ad.sub(p, p_prime)
    if mask is not None:
        mask = np.asarray(mask)
        m4 = ad.Tensor(mask.astype(p.dtype.type)[:, None, :, None])
        diff = ad.mul(diff, m4)
        n_atoms = float(mask.sum())
    else:
        n_atoms = float(np.prod(p.shape[:-1]))
    sq = ad.mul(diff, diff)
    max_term = ad.max_all(sq)
    mean_term = ad.tsum(sq) * (1.0 / n_atoms)
    return ad.add(max_term, mean_term)


def loss_decoder(m, m_cont) -> ad.Tensor:
    """Mean squared error between payload bits and the continuous decoder
    output (the rounded bits carry no gradient, so the loss never sees them)."""
    m_cont = m_cont if isinstance(m_cont, ad.Tensor) else _as_tensor(m_cont)
    target = np.asarray(m, dtype=np.float64).astype(m_cont.dtype.type)
    if target.shape != m_cont.shape:
        raise DataError(f"payload shape {target.shape} != decoder output {m_cont.shape}")
    diff = ad.sub(m_cont, ad.Tensor(target))
    return ad.tsum(ad.mul(diff, diff)) * (1.0 / target.size)


class Adam:
    """Adam with the optimizer's published defaults (lr 1e-3, betas .9/.999)."""

    def __init__(self, store: ParamStore, lr: float = DEFAULT_LR,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.store, self.lr, self.beta1, self.beta2, self.eps = store, lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, param in self.store.items():
            g = grads[name].astype(param.data.dtype, copy=False)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            param.data = param.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Checkpoint:
    """Versioned snapshot: config, named tensors, epoch counter, seed."""

    version: int
    config: dict
    tensors: dict[str, np.ndarray]
    epoch: int
    rng_seed: int


def save_checkpoint(ck: Checkpoint, path: str):
    entries, payload, offset = [], [], 0
    for name, arr in ck.tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": ck.version, "config": ck.config, "epoch": ck.epoch,
                           "rng_seed": ck.rng_seed, "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        fh.write(b"".join(payload))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic bytes)")
    mlen = int.from_bytes(blob[4:12], "little")
    try:
        manifest = json.loads(blob[12: 12 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint manifest: {exc}") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    payload = blob[12 + mlen:]
    tensors = {}
    for ent in manifest["tensors"]:
        lo, hi = ent["offset"], ent["offset"] + ent["nbytes"]
        if hi > len(payload):
            raise DataError(f"{path}: truncated payload for tensor {ent['name']!r}")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(ent["dtype"]))
        tensors[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return Checkpoint(manifest["version"], manifest["config"], tensors,
                      manifest["epoch"], manifest["rng_seed"])


@dataclass
class EpochMetrics:
    epoch: int
    L_E: float
    L_D: float
    gamma: float
    lambda_E: float
    lambda_D: float
    bit_acc: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class Trainer:
    """Owns the codec parameters and the optimization loop.

    All randomness derives from per-epoch generators seeded by
    (seed, 1, epoch), so a resumed run continues the exact random stream of
    an uninterrupted one.
    """

    def __init__(self, cfg: CodecConfig, sched: ScheduleParams, vocabulary: tuple,
                 seed: int = 0, batch_size: int = 64, lr: float = DEFAULT_LR):
        self.cfg, self.sched = cfg, sched
        self.vocabulary = tuple(vocabulary)
        self.seed, self.batch_size, self.lr = int(seed), int(batch_size), float(lr)
        self.codec = WatermarkCodec(cfg, species=len(self.vocabulary),
                                    rng=np.random.default_rng([self.seed, 0]))
        self.opt = Adam(self.codec.store, lr=lr)
        self.epoch = 0
        self.gamma = 0.0

    # -- single optimization step ---------------------------------------
    def train_step(self, batch, lambda_e: float, lambda_d: float,
                   rng: np.random.Generator) -> dict:
        codec = self.codec
        p4, t4, c4, mask, sizes = codec.batch_inputs(batch)
        b = batch.batch_size
        bits = rng.integers(0, 2, size=(b, self.cfg.L))
        transforms = [random_transform(rng) for _ in range(b)]
        out = codec.encoder(p4, t4, c4, mask, sizes, bits)
        p_hat4 = recover_coordinates_graph(out.p_prime, sizes, transforms)
        m_cont = codec.decoder(p_hat4, t4, c4, mask, sizes)
        l_e = loss_encoder(p4, out.p_prime, mask)
        l_d = loss_decoder(bits, m_cont)
        total = ad.add(l_e * lambda_e, l_d * lambda_d)
        le_val, ld_val = l_e.item(), l_d.item()
        if not np.isfinite(total.item()):
            raise NumericError(
                f"non-finite loss at epoch {self.epoch}: L_E={le_val}, L_D={ld_val}, "
                f"lambda_E={lambda_e}, lambda_D={lambda_d}")
        codec.store.zero_grads()
        total.backward()
        self.opt.step(codec.store.gradients())
        acc = float((hard_bits(m_cont.data) == bits).mean())
        return {"L_E": le_val, "L_D": ld_val, "acc": acc, "n": b}

    def train_epoch(self, molecules: list[Molecule]) -> EpochMetrics:
        rng = np.random.default_rng([self.seed, 1, self.epoch])
        lambda_e, lambda_d = schedule(self.epoch, self.gamma, self.sched)
        order = rng.permutation(len(molecules))
        shuffled = [molecules[i] for i in order]
        totals = {"L_E": 0.0, "L_D": 0.0, "acc": 0.0, "n": 0}
        for batch in batch_molecules(shuffled, self.batch_size):
            step = self.train_step(batch, lambda_e, lambda_d, rng)
            for key in ("L_E", "L_D", "acc"):
                totals[key] += step[key] * step["n"]
            totals["n"] += step["n"]
        n = totals["n"]
        metrics = EpochMetrics(self.epoch, totals["L_E"] / n, totals["L_D"] / n,
                               self.gamma, lambda_e, lambda_d, totals["acc"] / n)
        self.gamma = totals["acc"] / n
        self.epoch += 1
        return metrics

    def train(self, molecules: list[Molecule], epochs: int,
              checkpoint_path: str | None = None, checkpoint_every: int = 25,
              metrics_path: str | None = None) -> list[EpochMetrics]:
        if not molecules:
            raise DataError("empty training corpus")
        records = []
        log = open(metrics_path, "a") if metrics_path else None
        try:
            for _ in range(epochs):
                rec = self.train_epoch(molecules)
                records.append(rec)
                if log:
                    log.write(rec.to_json() + "\n")
                    log.flush()
                if checkpoint_path and self.epoch % checkpoint_every == 0:
                    save_checkpoint(self.checkpoint(), checkpoint_path)
        finally:
            if log:
                log.close()
        if checkpoint_path:
            save_checkpoint(self.checkpoint(), checkpoint_path)
        return records

    # -- persistence ------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        config = {
            "codec": asdict(self.cfg),
            "schedule": asdict(self.sched),
            "vocabulary": list(self.vocabulary),
            "batch_size": self.batch_size,
            "lr": self.lr,
            "gamma": self.gamma,
            "adam_t": self.opt.t,
        }
        tensors = {f"param.{k}": v for k, v in self.codec.store.state().items()}
        tensors.update({f"adam.m.{k}": v.copy() for k, v in self.opt.m.items()})
        tensors.update({f"adam.v.{k}": v.copy() for k, v in self.opt.v.items()})
        return Checkpoint(CHECKPOINT_VERSION, config, tensors, self.epoch, self.seed)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "Trainer":
        cfg = CodecConfig(**ck.config["codec"])
        sched = ScheduleParams(**ck.config["schedule"])
        trainer = cls(cfg, sched, tuple(ck.config["vocabulary"]), seed=ck.rng_seed,
                      batch_size=ck.config["batch_size"], lr=ck.config["lr"])
        trainer.codec.store.load_state(
            {k[len("param."):]: v for k, v in ck.tensors.items() if k.startswith("param.")})
        trainer.opt.m = {k[len("adam.m."):]: v.astype(trainer.codec.store.dtype, copy=True)
                         for k, v in ck.tensors.items() if k.startswith("adam.m.")}
        trainer.opt.v = {k[len("adam.v."):]: v.astype(trainer.codec.store.dtype, copy=True)
                         for k, v in ck.tensors.items() if k.startswith("adam.v.")}
        trainer.opt.t = int(ck.config["adam_t"])
        trainer.epoch = ck.epoch
        trainer.gamma = float(ck.config["gamma"])
        return trainer


def codec_from_checkpoint(ck: Checkpoint) -> tuple[WatermarkCodec, tuple]:
    """Inference-only reconstruction (parameters, no optimizer state)."""
    cfg = CodecConfig(**ck.config["codec"])
    vocabulary = tuple(ck.config["vocabulary"])
    codec = WatermarkCodec(cfg, species=len(vocabulary),
                           rng=np.random.default_rng([ck.rng_seed, 0]))
    codec.store.load_state(
        {k[len("param."):]: v for k, v in ck.tensors.items() if k.startswith("param.")})
    return codec, vocabulary


def evaluate_bit_accuracy(codec: WatermarkCodec, molecules: list[Molecule],
                          seed: int = 0, transform: bool = True) -> float:
    """Mean hard-bit accuracy of embed -> (random rigid motion) -> extract."""
    rng = np.random.default_rng([seed, 2])
    correct, total = 0, 0
    with ad.no_grad():
        for mol in molecules:
            payload = rng.integers(0, 2, size=codec.cfg.L)
            marked = codec.embed(mol, Watermark(payload))
            if transform:
                t = random_transform(rng)
                marked = marked.with_positions(marked.positions @ t.A + t.T)
            got = codec.extract(marked)
            correct += int((got.bits == payload).sum())
            total += codec.cfg.L
    return correct / total


def mean_displacement(codec: WatermarkCodec, molecules: list[Molecule],
                      seed: int = 0) -> float:
    """Mean per-atom Euclidean shift introduced by embedding."""
    rng = np.random.default_rng([seed, 3])
    shifts = []
    with ad.no_grad():
        for mol in molecules:
            marked = codec.embed(mol, Watermark(rng.integers(0, 2, size=codec.cfg.L)))
            shifts.append(np.linalg.norm(marked.positions - mol.positions, axis=1).mean())
    return float(np.mean(shifts))
