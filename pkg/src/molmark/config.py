"""Run configuration: a flat `key = value` text format that round-trips, so
every run can snapshot the exact configuration it executed."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .codec import CodecConfig
from .errors import DataError
from .training import DEFAULT_LR, ScheduleParams
from .transforms import SweepSpec, default_sweeps


@dataclass
class RunConfig:
    corpus: str = ""
    out: str = "runs/out"
    seed: int = 0
    epochs: int = 100
    batch_size: int = 64
    lr: float = DEFAULT_LR
    vocabulary: str = "qm9"
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(L=4))
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    sweeps: list[SweepSpec] = field(default_factory=list)

    def resolved_sweeps(self) -> list[SweepSpec]:
        return self.sweeps if self.sweeps else default_sweeps()


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(v: str) -> bool:
    if v.lower() not in _BOOL:
        raise DataError(f"expected a boolean, got {v!r}")
    return _BOOL[v.lower()]


def parse_run_config(text: str) -> RunConfig:
    cfg = RunConfig()
    codec_kw = {}
    sched_kw = {}
    sweeps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "corpus":
                cfg.corpus = value
            elif key == "out":
                cfg.out = value
            elif key == "seed":
                cfg.seed = int(value)
            elif key == "epochs":
                cfg.epochs = int(value)
            elif key == "batch_size":
                cfg.batch_size = int(value)
            elif key == "lr":
                cfg.lr = float(value)
            elif key == "vocabulary":
                cfg.vocabulary = value
            elif key in ("capacity", "codec.L"):
                codec_kw["L"] = int(value)
            elif key == "codec.C":
                codec_kw["C"] = int(value)
            elif key == "codec.d_model":
                codec_kw["d_model"] = int(value)
            elif key == "codec.aggregation":
                codec_kw["aggregation"] = value.upper()
            elif key == "codec.use_atom_embedder":
                codec_kw["use_atom_embedder"] = _parse_bool(value)
            elif key == "codec.use_edge_embedder":
                codec_kw["use_edge_embedder"] = _parse_bool(value)
            elif key == "codec.growth":
                codec_kw["growth"] = int(value)
            elif key == "schedule.rho":
                sched_kw["rho"] = float(value)
            elif key == "schedule.beta":
                sched_kw["beta"] = float(value)
            elif key == "schedule.delta":
                sched_kw["delta"] = float(value)
            elif key == "schedule.f":
                sched_kw["f"] = int(value)
            elif key == "sweep":
                sweeps.append(_parse_sweep(value))
            else:
                raise DataError(f"config line {lineno}: unknown key {key!r}")
        except ValueError:
            raise DataError(f"config line {lineno}: bad value {value!r} for {key!r}") from None
    base = asdict(cfg.codec)
    base.update(codec_kw)
    cfg.codec = CodecConfig(**base)
    sbase = asdict(cfg.schedule)
    sbase.update(sched_kw)
    cfg.schedule = ScheduleParams(**sbase)
    cfg.sweeps = sweeps
    return cfg


def _parse_sweep(value: str) -> SweepSpec:
    """'rotation X 0 360 10' | 'translation Y -1.8 1.8 0.1' | 'reflection Z'."""
    parts = value.split()
    if parts[0] == "reflection" and len(parts) == 2:
        return SweepSpec("reflection", parts[1])
    if len(parts) != 5:
        raise DataError(f"sweep needs 'kind axis start stop step', got {value!r}")
    return SweepSpec.from_fragment(
        {"kind": parts[0], "axis": parts[1], "start": parts[2], "stop": parts[3], "step": parts[4]})


def run_config_text(cfg: RunConfig) -> str:
    lines = [
        f"corpus = {cfg.corpus}",
        f"out = {cfg.out}",
        f"seed = {cfg.seed}",
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        f"lr = {cfg.lr}",
        f"vocabulary = {cfg.vocabulary}",
        f"codec.L = {cfg.codec.L}",
        f"codec.C = {cfg.codec.C}",
        f"codec.d_model = {cfg.codec.d_model}",
        f"codec.aggregation = {cfg.codec.aggregation}",
        f"codec.use_atom_embedder = {str(cfg.codec.use_atom_embedder).lower()}",
        f"codec.use_edge_embedder = {str(cfg.codec.use_edge_embedder).lower()}",
        f"codec.growth = {cfg.codec.growth}",
        f"schedule.rho = {cfg.schedule.rho}",
        f"schedule.beta = {cfg.schedule.beta}",
        f"schedule.delta = {cfg.schedule.delta}",
        f"schedule.f = {cfg.schedule.f}",
    ]
    for spec in cfg.sweeps:
        frag = spec.to_fragment()
        if spec.kind == "reflection":
            lines.append(f"sweep = reflection {spec.axis}")
        else:
            lines.append(f"sweep = {frag['kind']} {frag['axis']} {frag['start']} "
                         f"{frag['stop']} {frag['step']}")
    return "\n".join(lines) + "\n"
