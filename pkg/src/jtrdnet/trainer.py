"""End-to-end training of the transmitter codebooks and the receiver network."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import (
    ChannelModel,
    ChannelRealization,
    NoiseSpec,
    SystemConfig,
    backpropagate,
    block_to_complex,
    calibrate_noise,
    received_to_vector,
    sample_channels,
    sample_noise,
)
from .errors import CorruptFile, DimensionMismatch, NonFiniteLoss, VersionMismatch
from .numerics import make_rng
from .receiver import (
    AdamState,
    DenseLayer,
    ReceiverNetwork,
    adam_step,
    bce_loss,
    build_receiver,
    hard_decision,
    rx_backward,
    rx_forward,
)
from .transmitter import (
    CodebookSet,
    InitScheme,
    index_to_bits,
    init_codebooks,
    tx_backward,
    tx_forward,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# stream ids under the run seed
STREAM_INIT_TX = 1
STREAM_INIT_RX = 2
STREAM_TRAIN = 3
STREAM_CALIBRATE = 4


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    eta_init: float = 1e-3
    eta_low: float = 1e-5
    train_snr_db: float = 12.0
    max_iterations: int = 50_000
    convergence_window: int = 2_000
    convergence_tol: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = (256, 128, 64)
    init: str = "symmetrical"
    zeta: float | None = None
    log_every: int = 100
    channel_per_sample: bool = True
    stop_on_convergence: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eta_low > self.eta_init:
            raise ValueError("eta_low must not exceed eta_init")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_window < 1 or self.log_every < 1:
            raise ValueError("convergence_window and log_every must be >= 1")

    @property
    def init_scheme(self) -> InitScheme:
        return InitScheme(self.init, self.zeta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def lr_schedule(eta_init: float, iteration: int, eta_low: float) -> float:
    """``max(eta_init / iteration**(1/4), eta_low)``."""
    if iteration < 1:
        raise ValueError("iteration counts from 1")
    return max(eta_init / iteration ** 0.25, eta_low)


def grad_through_channel(ch: ChannelRealization | np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    """Map the received-vector gradient back onto the transmit block.

    Accepts one realization with ``grad_y`` (2NT,) and returns (2T, M), or a
    stack of channels (B, M, N) with ``grad_y`` (B, 2NT) and returns
    (B, 2T, M).  Column ``m`` is the gradient for user ``m``'s codeword.
    """
    H = ch.H if isinstance(ch, ChannelRealization) else np.asarray(ch)
    grad_y = np.asarray(grad_y, dtype=float)
    N = H.shape[-1]
    if grad_y.shape[-1] % (2 * N):
        raise DimensionMismatch(f"gradient length {grad_y.shape[-1]} not a multiple of 2N={2 * N}")
    T = grad_y.shape[-1] // (2 * N)
    if H.ndim == 2:
        return backpropagate(grad_y[None], H[None], T)[0]
    return backpropagate(grad_y, H, T)


class JtrdModel:
    """Trainable state: codebooks, receiver, optimizer moments, iteration."""

    def __init__(self, cfg: SystemConfig, codebooks: CodebookSet, receiver: ReceiverNetwork,
                 tx_state: AdamState | None = None, rx_state: AdamState | None = None,
                 iteration: int = 0):
        if receiver.input_dim != cfg.input_dim or receiver.output_dim != cfg.output_dim:
            raise DimensionMismatch("receiver dimensions do not match the system config")
        self.cfg = cfg
        self.codebooks = codebooks
        self.receiver = receiver
        self.tx_state = tx_state or AdamState.zeros_like([codebooks.W])
        self.rx_state = rx_state or AdamState.zeros_like(receiver.params())
        self.iteration = iteration

    @classmethod
    def initialize(cls, cfg: SystemConfig, tcfg: TrainConfig) -> "JtrdModel":
        cb = init_codebooks(cfg, tcfg.init_scheme, make_rng(tcfg.seed, STREAM_INIT_TX))
        rx = build_receiver(cfg.input_dim, cfg.output_dim, tcfg.hidden,
                            make_rng(tcfg.seed, STREAM_INIT_RX))
        return cls(cfg, cb, rx)

    def detect(self, y: np.ndarray) -> np.ndarray:
        """Bit decisions (B, J*M) from received vectors alone."""
        s_hat, _ = rx_forward(self.receiver, y)
        return hard_decision(s_hat)


@dataclass
class StepResult:
    loss: float
    bit_errors: np.ndarray  # per user, this batch
    bits_per_user: int


def _draw_batch(model: JtrdModel, tcfg: TrainConfig, channel: ChannelModel, noise: NoiseSpec,
                rng: np.random.Generator):
    cfg = model.cfg
    B = tcfg.batch_size
    idx = rng.integers(0, cfg.L, size=(B, cfg.M))
    n_ch = B if tcfg.channel_per_sample else 1
    H = sample_channels(channel, cfg, rng, n_ch)
    if n_ch == 1:
        H = np.broadcast_to(H, (B, cfg.M, cfg.N))
    V = sample_noise(noise, rng, B, cfg.T, cfg.N)
    return idx, H, V


def forward_backward(model: JtrdModel, idx: np.ndarray, H: np.ndarray, V: np.ndarray):
    """Loss, gradients and soft outputs for one batch with fixed channel/noise."""
    cfg = model.cfg
    s_all = index_to_bits(idx, cfg.J).reshape(idx.shape[0], -1)
    X, Z = tx_forward(model.codebooks, idx)
    y = received_to_vector(block_to_complex(X) @ H + V)
    s_hat, cache = rx_forward(model.receiver, y)
    loss = bce_loss(s_hat, s_all)
    rx_grads, gy = rx_backward(model.receiver, cache, s_all)
    gX = grad_through_channel(H, gy)
    gW = tx_backward(model.codebooks, idx, Z, gX)
    return loss, gW, rx_grads, s_hat, s_all


def train_step(model: JtrdModel, tcfg: TrainConfig, channel: ChannelModel, noise: NoiseSpec,
               rng: np.random.Generator, lr: float | None = None) -> StepResult:
    """One mini-batch update of every parameter; returns the batch loss."""
    idx, H, V = _draw_batch(model, tcfg, channel, noise, rng)
    loss, gW, rx_grads, s_hat, s_all = forward_backward(model, idx, H, V)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss} at iteration {model.iteration + 1}")
    model.iteration += 1
    if lr is None:
        lr = lr_schedule(tcfg.eta_init, model.iteration, tcfg.eta_low)
    adam_step([model.codebooks.W], [gW], model.tx_state, lr)
    adam_step(model.receiver.params(), rx_grads, model.rx_state, lr)
    wrong = hard_decision(s_hat) != s_all
    per_user = wrong.reshape(wrong.shape[0], model.cfg.M, model.cfg.J).sum(axis=(0, 2))
    return StepResult(loss, per_user, wrong.shape[0] * model.cfg.J)


@dataclass
class TrainLog:
    M: int
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    rows: list[tuple] = field(default_factory=list)  # (iteration, loss, lr, ber per user...)
    converged_at: int | None = None

    def user_ber_curves(self) -> tuple[np.ndarray, np.ndarray]:
        """Iterations (R,) and per-user BER (R, M) at the logging cadence."""
        if not self.rows:
            return np.zeros(0, dtype=int), np.zeros((0, self.M))
        arr = np.array([r[3:] for r in self.rows], dtype=float)
        return np.array([r[0] for r in self.rows]), arr

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr"] + [f"ber_user_{m + 1}" for m in range(self.M)])
        for row in self.rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def train_until_converged(model: JtrdModel, tcfg: TrainConfig, channel: ChannelModel,
                          noise: NoiseSpec | None = None) -> TrainLog:
    """Train until the windowed loss settles or ``max_iterations`` is reached."""
    cfg = model.cfg
    if noise is None:
        noise = calibrate_noise(cfg, tcfg.train_snr_db, model.codebooks, channel,
                                make_rng(tcfg.seed, STREAM_CALIBRATE))
    rng = make_rng(tcfg.seed, STREAM_TRAIN, model.iteration)
    tlog = TrainLog(cfg.M)
    errs = np.zeros(cfg.M, dtype=np.int64)
    bits = 0
    window_loss = 0.0
    window_n = 0
    W = tcfg.convergence_window
    # running sums make the sliding-window test O(1) per step
    csum = [0.0]
    for _ in range(tcfg.max_iterations):
        res = train_step(model, tcfg, channel, noise, rng)
        tlog.losses.append(res.loss)
        tlog.lrs.append(lr_schedule(tcfg.eta_init, model.iteration, tcfg.eta_low))
        csum.append(csum[-1] + res.loss)
        errs += res.bit_errors
        bits += res.bits_per_user
        window_loss += res.loss
        window_n += 1
        if model.iteration % tcfg.log_every == 0:
            tlog.rows.append((model.iteration, window_loss / window_n, tlog.lrs[-1],
                              *(errs / bits)))
            errs[:] = 0
            bits = 0
            window_loss = 0.0
            window_n = 0
        n = len(tlog.losses)
        if tlog.converged_at is None and n >= 2 * W:
            recent = (csum[n] - csum[n - W]) / W
            previous = (csum[n - W] - csum[n - 2 * W]) / W
            if abs(recent - previous) < tcfg.convergence_tol * abs(previous):
                tlog.converged_at = model.iteration
                log.info("converged at iteration %d (loss %.4g)", model.iteration, recent)
                if tcfg.stop_on_convergence:
                    break
    if window_n:
        tlog.rows.append((model.iteration, window_loss / window_n, tlog.lrs[-1], *(errs / bits)))
    return tlog


def _adam_to_dict(s: AdamState) -> dict:
    return {"t": s.t, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
            "m": [a.tolist() for a in s.m], "v": [a.tolist() for a in s.v]}


def _adam_from_dict(d: dict) -> AdamState:
    return AdamState([np.array(a, dtype=float) for a in d["m"]],
                     [np.array(a, dtype=float) for a in d["v"]],
                     t=int(d["t"]), beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])


def checkpoint_dict(model: JtrdModel, tcfg: TrainConfig,
                    channel: ChannelModel | None = None) -> dict:
    d = {
        "version": CHECKPOINT_VERSION,
        "system_config": model.cfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "codebooks": {"W": model.codebooks.W.tolist(), "alphaP": model.codebooks.alphaP.tolist()},
        "receiver_layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                             "activation": l.activation} for l in model.receiver.layers],
        "adam_state": {"tx": _adam_to_dict(model.tx_state), "rx": _adam_to_dict(model.rx_state)},
        "iteration": model.iteration,
    }
    if channel is not None:
        d["channel"] = channel.to_dict()
    return d


def save_checkpoint(path, model: JtrdModel, tcfg: TrainConfig,
                    channel: ChannelModel | None = None) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(checkpoint_dict(model, tcfg, channel)))


def load_checkpoint(path) -> tuple[JtrdModel, TrainConfig, ChannelModel | None]:
    try:
        d = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise CorruptFile(f"{path}: top level is not an object")
    if d.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {d.get('version')!r}")
    try:
        cfg = SystemConfig.from_dict(d["system_config"])
        tcfg = TrainConfig.from_dict(d["train_config"])
        cb = CodebookSet(np.array(d["codebooks"]["W"], dtype=float), d["codebooks"]["alphaP"])
        layers = [DenseLayer(np.array(l["weights"], dtype=float), np.array(l["bias"], dtype=float),
                             l["activation"]) for l in d["receiver_layers"]]
        model = JtrdModel(cfg, cb, ReceiverNetwork(layers),
                          _adam_from_dict(d["adam_state"]["tx"]),
                          _adam_from_dict(d["adam_state"]["rx"]), int(d["iteration"]))
        channel = ChannelModel.from_dict(d["channel"]) if "channel" in d else None
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return model, tcfg, channel
