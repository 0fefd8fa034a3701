"""Forecasting models: Attention-ODE, MLP-ODE, and the LSTM baseline.

Each model maps a kinematic condition sequence plus a true initial force to
a predicted force trajectory of the same length. ODE variants encode the
conditions into per-step latent controls and integrate a learned vector
field from F0; the LSTM baseline sees F0 concatenated onto every input row.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import (LSTMStack, LinearLayer, MLPBlock, MultiHeadSelfAttention,
                     ParamRegistry, collect_params, count_params)
from .odeint import TimeGrid, integrate

ENCODERS = ("attention", "mlp", "lstm-baseline")
SOLVERS = ("euler", "rk4")


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "attention"
    n_in: int = 4
    f_out: int = 2
    d_model: int = 64
    heads: int = 4
    latent: int = 64
    kernel_hidden: tuple[int, ...] = (64, 64, 64)
    solver: str = "euler"
    dt: float = 0.02
    time_input: bool = False
    positional_encoding: bool = False
    causal_attention: bool = False
    lstm_hidden: int = 64
    lstm_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.n_in <= 0 or self.f_out <= 0 or self.latent <= 0 or self.d_model <= 0:
            raise ValueError("model dims must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if any(w <= 0 for w in self.kernel_hidden):
            raise ValueError("kernel widths must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "kernel_hidden", tuple(self.kernel_hidden))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernel_hidden"] = list(self.kernel_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["kernel_hidden"] = tuple(d.get("kernel_hidden", (64, 64, 64)))
        return cls(**d)


def _sinusoidal_encoding(n: int, d_model: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d_model)
    enc = np.zeros((n, d_model))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


class ForecastModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        # input standardization and per-axis force scale; identity until
        # fit_normalizer is called, persisted with the checkpoint
        self.x_mean = np.zeros(config.n_in)
        self.x_std = np.ones(config.n_in)
        self.f_scale = np.ones(config.f_out)
        rng = np.random.default_rng(config.seed)
        components: list[tuple[str, object]] = []
        if config.encoder == "attention":
            self.embed = LinearLayer(config.n_in, config.d_model, rng)
            self.attn = MultiHeadSelfAttention(config.d_model, config.heads, rng)
            self.enc_head = MLPBlock([config.d_model, config.d_model, config.latent],
                                     "tanh", rng)
            components += [("embed", self.embed), ("attn", self.attn),
                           ("enc_head", self.enc_head)]
        elif config.encoder == "mlp":
            self.enc_mlp = MLPBlock([config.n_in, config.d_model, config.d_model,
                                     config.latent], "tanh", rng)
            components.append(("enc_mlp", self.enc_mlp))
        if config.encoder == "lstm-baseline":
            self.lstm = LSTMStack(config.n_in + config.f_out, config.lstm_hidden, rng,
                                  num_layers=config.lstm_layers)
            self.proj = LinearLayer(config.lstm_hidden, config.f_out, rng)
            components += [("lstm", self.lstm), ("proj", self.proj)]
        else:
            kin = config.f_out + config.latent + (1 if config.time_input else 0)
            self.kernel_mlp = MLPBlock([kin, *config.kernel_hidden, config.f_out],
                                       "tanh", rng)
            # zero final layer: a fresh model integrates the zero field, so
            # its prediction starts at exactly F0
            self.kernel_mlp.layers[-1].weight.data[:] = 0.0
            self.kernel_mlp.layers[-1].bias.data[:] = 0.0
            components.append(("kernel", self.kernel_mlp))
        self.params: ParamRegistry = collect_params(*components)

    # ---- normalization --------------------------------------------------

    def fit_normalizer(self, dataset) -> None:
        """Set input standardization and force scale from a training split."""
        x, forces, _ = dataset.stack()
        flat_x = x.reshape(-1, x.shape[-1])
        self.x_mean = flat_x.mean(axis=0)
        self.x_std = np.maximum(flat_x.std(axis=0), 1e-8)
        self.f_scale = np.maximum(forces.reshape(-1, forces.shape[-1]).std(axis=0), 1e-8)

    def _norm_x(self, x: Tensor) -> Tensor:
        if np.all(self.x_mean == 0.0) and np.all(self.x_std == 1.0):
            return x
        centered = ad.sub(x, ad.expand(Tensor(self.x_mean), x.shape))
        return ad.mul(centered, ad.expand(Tensor(1.0 / self.x_std), x.shape))

    # ---- inference ------------------------------------------------------

    def encode_conditions(self, x: Tensor) -> Tensor:
        cfg = self.config
        if cfg.encoder == "lstm-baseline":
            raise ValueError("lstm-baseline has no condition encoder")
        if x.shape[-1] != cfg.n_in:
            raise ShapeError(f"condition dim {x.shape[-1]} != configured n_in {cfg.n_in}")
        x = self._norm_x(x)
        if cfg.encoder == "mlp":
            return self.enc_mlp(x)
        emb = self.embed(x)
        if cfg.positional_encoding:
            pe = _sinusoidal_encoding(x.shape[-2], cfg.d_model)
            emb = ad.add(emb, ad.expand(Tensor(pe), emb.shape))
        ctx = ad.add(emb, self.attn(emb, causal=cfg.causal_attention))
        return self.enc_head(ctx)

    def kernel(self, state: Tensor, control: Tensor, t: float) -> Tensor:
        parts = [state, control]
        if self.config.time_input:
            parts.append(Tensor(np.full(state.shape[:-1] + (1,), t)))
        return self.kernel_mlp(ad.concat(parts, axis=-1))

    def predict_forces(self, x: Tensor, f0: Tensor, grid: TimeGrid | None = None) -> Tensor:
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(x)
        f0 = f0 if isinstance(f0, Tensor) else Tensor(f0)
        if cfg.encoder == "lstm-baseline":
            return self.predict_forces_lstm(x, f0)
        n = x.shape[-2]
        if grid is None:
            grid = TimeGrid(0.0, cfg.dt, n)
        if grid.steps != n:
            raise ShapeError(f"grid steps {grid.steps} != condition length {n}")
        if f0.shape[-1] != cfg.f_out:
            raise ShapeError(f"F0 dim {f0.shape[-1]} != configured f_out {cfg.f_out}")
        controls = self.encode_conditions(x)
        identity_scale = bool(np.all(self.f_scale == 1.0))
        if not identity_scale:  # integrate in per-axis normalized force space
            f0 = ad.mul(f0, ad.expand(Tensor(1.0 / self.f_scale), f0.shape))
        traj = integrate(cfg.solver, f0, self.kernel, grid, controls)
        if not identity_scale:
            traj = ad.mul(traj, ad.expand(Tensor(self.f_scale), traj.shape))
        return traj

    def predict_forces_lstm(self, x: Tensor, f0: Tensor) -> Tensor:
        cfg = self.config
        if x.shape[-1] != cfg.n_in:
            raise ShapeError(f"condition dim {x.shape[-1]} != configured n_in {cfg.n_in}")
        if f0.shape[-1] != cfg.f_out:
            raise ShapeError(f"F0 dim {f0.shape[-1]} != configured f_out {cfg.f_out}")
        identity_scale = bool(np.all(self.f_scale == 1.0))
        x = self._norm_x(x)
        if not identity_scale:
            f0 = ad.mul(f0, ad.expand(Tensor(1.0 / self.f_scale), f0.shape))
        f0e = ad.expand(ad.reshape(f0, f0.shape[:-1] + (1, cfg.f_out)),
                        x.shape[:-1] + (cfg.f_out,))
        out = self.proj(self.lstm(ad.concat([x, f0e], axis=-1)))
        if not identity_scale:
            out = ad.mul(out, ad.expand(Tensor(self.f_scale), out.shape))
        return out

    def num_params(self) -> int:
        return count_params(self.params)


def build_model(config: ModelConfig) -> ForecastModel:
    return ForecastModel(config)


def encode_conditions(model: ForecastModel, x: Tensor) -> Tensor:
    return model.encode_conditions(x)


def predict_forces(model: ForecastModel, x: Tensor, f0: Tensor,
                   grid: TimeGrid | None = None) -> Tensor:
    return model.predict_forces(x, f0, grid)


def predict_forces_lstm(model: ForecastModel, x: Tensor, f0: Tensor) -> Tensor:
    return model.predict_forces_lstm(x, f0)


# ---- checkpoint persistence ---------------------------------------------
#
# Layout: 8-byte magic, u32 version, u64 header length + JSON config,
# then per tensor: u32 name length, name, u32 ndim, u64 dims, f64 LE data;
# trailing u32 CRC32 of everything before it.

CHECKPOINT_MAGIC = b"HYDROFC\x01"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""


def checkpoint_save(model: ForecastModel, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    header = json.dumps({
        "config": model.config.to_dict(),
        "normalizer": {"x_mean": model.x_mean.tolist(),
                       "x_std": model.x_std.tolist(),
                       "f_scale": model.f_scale.tolist()},
    }, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(header)))
    chunks.append(header)
    for name, tensor in model.params.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def checkpoint_load(path) -> ForecastModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError("file too short to be a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch (corrupt checkpoint)")
    r = _Reader(body)
    if r.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes (not a checkpoint file)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.read(hlen).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, TypeError, KeyError) as e:
        raise CheckpointError(f"invalid config header: {e}") from None
    model = build_model(config)
    norm = header.get("normalizer")
    if norm:
        model.x_mean = np.asarray(norm["x_mean"], dtype=np.float64)
        model.x_std = np.asarray(norm["x_std"], dtype=np.float64)
        model.f_scale = np.asarray(norm["f_scale"], dtype=np.float64)
    loaded: set[str] = set()
    while r.pos < len(body):
        (nlen,) = r.unpack("<I")
        name = r.read(nlen).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        data = np.frombuffer(r.read(8 * int(np.prod(shape, dtype=np.int64))),
                             dtype="<f8").reshape(shape)
        if name not in model.params:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        if model.params[name].shape != tuple(shape):
            raise CheckpointError(f"tensor {name!r} shape {tuple(shape)} != "
                                  f"expected {model.params[name].shape}")
        model.params[name].data = np.array(data, dtype=np.float64)
        loaded.add(name)
    missing = set(model.params.names()) - loaded
    if missing:
        raise CheckpointError(f"missing tensors in checkpoint: {sorted(missing)}")
    return model
