"""Experiment orchestration: BER evaluation, SNR sweeps and the training studies.

Every Monte-Carlo chunk draws from its own derived stream
``make_rng(seed, STREAM_EVAL, scheme, snr_index, chunk)``, and chunks are
reduced in order, stopping at the first chunk where the error target is
met.  Results therefore do not depend on how many worker threads ran.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (
    ChannelModel,
    NoiseSpec,
    SystemConfig,
    block_to_complex,
    calibrate_noise,
    closed_form_sigma2,
    received_to_vector,
    sample_channels,
    sample_noise,
)
from .detectors import (
    JointAlphabet,
    PilotScheme,
    glrt_detect_batch,
    mlsd_detect,
    mmse_channel_estimate,
    mmse_equalize_detect,
    modulation_for_bits,
)
from .errors import ConfigError
from .numerics import make_rng
from .trainer import (
    STREAM_CALIBRATE,
    JtrdModel,
    TrainConfig,
    TrainLog,
    train_until_converged,
)
from .transmitter import index_to_bits, tx_forward

JTRD = "JTRD"
GLRT = "GLRT"
MMSECE_MMSE = "MMSECE_MMSE"
MMSECE_MLSD = "MMSECE_MLSD"
RANDOM = "RANDOM"
BASELINES = (GLRT, MMSECE_MMSE, MMSECE_MLSD)
SCHEME_IDS = {JTRD: 0, GLRT: 1, MMSECE_MMSE: 2, MMSECE_MLSD: 3, RANDOM: 4}

STREAM_EVAL = 5
Z95 = 1.959963984540054
CSV_HEADER = ["scheme", "snr_db", "user", "bits", "errors", "ber", "ci"]


@dataclass
class ExperimentConfig:
    system: SystemConfig
    channel: ChannelModel = field(default_factory=ChannelModel)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_snrs_db: list = field(default_factory=lambda: [12.0])
    min_bit_errors: int = 1000
    max_trials: int = 200_000
    baselines: list = field(default_factory=lambda: [MMSECE_MLSD])
    output_dir: str = "out"
    chunk: int = 1000
    init_seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    T_values: list = field(default_factory=lambda: [5, 6, 8])

    def __post_init__(self):
        if not self.eval_snrs_db:
            raise ConfigError("eval_snrs_db must not be empty")
        if self.min_bit_errors < 100:
            raise ConfigError("min_bit_errors must be at least 100")
        if self.max_trials < 1 or self.chunk < 1:
            raise ConfigError("max_trials and chunk must be positive")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "channel": self.channel.to_dict(),
            "train": self.train.to_dict(),
            "eval_snrs_db": [float(s) for s in self.eval_snrs_db],
            "min_bit_errors": self.min_bit_errors,
            "max_trials": self.max_trials,
            "baselines": list(self.baselines),
            "output_dir": self.output_dir,
            "chunk": self.chunk,
            "init_seeds": list(self.init_seeds),
            "T_values": list(self.T_values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict) or "system" not in d:
            raise ConfigError("experiment config needs a 'system' section")
        try:
            kw = {k: v for k, v in d.items() if k not in ("system", "channel", "train")}
            return cls(system=SystemConfig.from_dict(d["system"]),
                       channel=ChannelModel.from_dict(d.get("channel", {})),
                       train=TrainConfig.from_dict(d.get("train", {})), **kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(d)


@dataclass
class BerRow:
    scheme: str
    snr_db: float
    user: str  # "1".."M" or "all"
    bits: int
    errors: int
    budget_exhausted: bool = False

    @property
    def ber(self) -> float:
        return self.errors / self.bits

    @property
    def ci(self) -> float:
        """95% half-width from the normal approximation."""
        p = self.ber
        return Z95 * math.sqrt(p * (1.0 - p) / self.bits)

    def interval(self) -> tuple[float, float]:
        return self.ber - self.ci, self.ber + self.ci


@dataclass
class BerReport:
    rows: list[BerRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def row(self, scheme: str, snr_db: float, user="all") -> BerRow:
        for r in self.rows:
            if r.scheme == scheme and r.snr_db == float(snr_db) and r.user == str(user):
                return r
        raise KeyError((scheme, snr_db, user))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.scheme, repr(float(r.snr_db)), r.user, r.bits, r.errors,
                        repr(r.ber), repr(r.ci)])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{"scheme": r.scheme, "snr_db": r.snr_db, "user": r.user, "bits": r.bits,
                 "errors": r.errors, "ber": r.ber, "ci": r.ci,
                 "budget_exhausted": r.budget_exhausted} for r in self.rows]
        return json.dumps({"rows": rows, "metadata": self.metadata}, indent=2)


# ---------------------------------------------------------------------------
# Per-scheme chunk simulators.  Each returns per-user bit errors (M,) and the
# number of bits tested per user for ``n`` blocks.


def _jtrd_chunk(model: JtrdModel, channel: ChannelModel, noise: NoiseSpec, n: int,
                rng: np.random.Generator):
    cfg = model.cfg
    idx = rng.integers(0, cfg.L, size=(n, cfg.M))
    X, _ = tx_forward(model.codebooks, idx)
    H = sample_channels(channel, cfg, rng, n)
    Y = block_to_complex(X) @ H + sample_noise(noise, rng, n, cfg.T, cfg.N)
    # the detector only ever sees the received vector
    decided = model.detect(received_to_vector(Y))
    sent = index_to_bits(idx, cfg.J).reshape(n, -1)
    return _user_errors(decided != sent, cfg.M), n * cfg.J


def _glrt_chunk(model: JtrdModel, alphabet: JointAlphabet, channel: ChannelModel,
                noise: NoiseSpec, n: int, rng: np.random.Generator):
    cfg = model.cfg
    idx = rng.integers(0, cfg.L, size=(n, cfg.M))
    X, _ = tx_forward(model.codebooks, idx)
    H = sample_channels(channel, cfg, rng, n)
    Y = block_to_complex(X) @ H + sample_noise(noise, rng, n, cfg.T, cfg.N)
    decided = alphabet.bits(glrt_detect_batch(Y, alphabet, noise))
    sent = index_to_bits(idx, cfg.J).reshape(n, -1)
    return _user_errors(decided != sent, cfg.M), n * cfg.J


def _pilot_chunk(cfg: SystemConfig, scheme: str, channel: ChannelModel, noise: NoiseSpec,
                 n: int, rng: np.random.Generator):
    pilots = PilotScheme(cfg.M, modulation_for_bits(cfg.J), cfg.P)
    k = pilots.bits_per_user
    labels = rng.integers(0, 2 ** k, size=(n, cfg.M))
    X = pilots.transmit_block(labels)
    H = sample_channels(channel, cfg, rng, n)
    Y = X @ H + sample_noise(noise, rng, n, pilots.T, cfg.N)
    H_hat = mmse_channel_estimate(Y[:, :cfg.M], pilots, noise, _channel_prior(cfg, channel))
    y_data = Y[:, cfg.M]
    if scheme == MMSECE_MLSD:
        decided = mlsd_detect(y_data, H_hat, pilots.modulation, pilots.data_amplitude)
    else:
        decided = mmse_equalize_detect(y_data, H_hat, noise, pilots.modulation,
                                       pilots.data_amplitude)
    sent = index_to_bits(labels, k).reshape(n, -1)
    return _user_errors(decided != sent, cfg.M), n * k


def _random_chunk(cfg: SystemConfig, n: int, rng: np.random.Generator):
    sent = rng.integers(0, 2, size=(n, cfg.M * cfg.J))
    guess = rng.integers(0, 2, size=(n, cfg.M * cfg.J))
    return _user_errors(sent != guess, cfg.M), n * cfg.J


def _channel_prior(cfg: SystemConfig, channel: ChannelModel) -> float:
    # every entry of H has variance 1/M under both channel models
    return 1.0 / cfg.M


def _user_errors(wrong: np.ndarray, M: int) -> np.ndarray:
    return wrong.reshape(wrong.shape[0], M, -1).sum(axis=(0, 2)).astype(np.int64)


def evaluation_noise(model: JtrdModel | None, cfg: SystemConfig, channel: ChannelModel,
                     snr_db: float, seed: int = 0) -> NoiseSpec:
    """Noise shared by every scheme at one SNR.

    With a trained model the variance is calibrated on its codebooks; the
    pilot scheme carries the same per-user energy ``alpha_m P`` so it sees
    the same calibration.
    """
    if model is None:
        return NoiseSpec(closed_form_sigma2(cfg, snr_db))
    return calibrate_noise(cfg, snr_db, model.codebooks, channel,
                           make_rng(seed, STREAM_CALIBRATE, 1))


def _check_pilot_compatible(cfg: SystemConfig) -> None:
    if cfg.T != cfg.M + 1:
        raise ConfigError(f"pilot baselines need T = M + 1, got T={cfg.T}, M={cfg.M}")
    modulation_for_bits(cfg.J)


def evaluate_ber(scheme: str, cfg: ExperimentConfig, snr_db: float,
                 model: JtrdModel | None = None, noise: NoiseSpec | None = None,
                 seed: int | None = None, snr_index: int = 0, threads: int = 1) -> list[BerRow]:
    """Monte-Carlo BER of one scheme at one SNR.

    Runs chunks of ``cfg.chunk`` blocks, each with fresh channels and noise,
    until the aggregate error count reaches ``cfg.min_bit_errors`` or
    ``cfg.max_trials`` blocks have been sent.  Returns one row per user plus
    an aggregate row (user ``"all"``); rows are flagged ``budget_exhausted``
    when the error target was not met.
    """
    system = cfg.system
    if seed is None:
        seed = cfg.train.seed
    if scheme in (JTRD, GLRT) and model is None:
        raise ConfigError(f"{scheme} evaluation needs a trained model")
    if scheme in (MMSECE_MMSE, MMSECE_MLSD):
        _check_pilot_compatible(system)
    if scheme not in SCHEME_IDS:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if noise is None:
        noise = evaluation_noise(model, system, cfg.channel, snr_db, seed)

    if scheme == JTRD:
        def run(n, rng):
            return _jtrd_chunk(model, cfg.channel, noise, n, rng)
        chunk = cfg.chunk
    elif scheme == GLRT:
        alphabet = JointAlphabet.from_codebooks(model.codebooks)
        # the residual tensor is (chunk, K, M, N); keep it near 1e7 entries
        chunk = max(1, min(cfg.chunk, 10_000_000 // (alphabet.K * system.M * system.N)))

        def run(n, rng):
            return _glrt_chunk(model, alphabet, cfg.channel, noise, n, rng)
    elif scheme == RANDOM:
        def run(n, rng):
            return _random_chunk(system, n, rng)
        chunk = cfg.chunk
    else:
        def run(n, rng):
            return _pilot_chunk(system, scheme, cfg.channel, noise, n, rng)
        chunk = cfg.chunk

    sid = SCHEME_IDS[scheme]
    errors = np.zeros(system.M, dtype=np.int64)
    bits = 0
    blocks = 0
    c = 0
    done = False
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while not done and blocks < cfg.max_trials:
            wave = []
            start = blocks
            for _ in range(max(1, threads)):
                if start >= cfg.max_trials:
                    break
                n = min(chunk, cfg.max_trials - start)
                wave.append((c, n))
                c += 1
                start += n
            jobs = [(n, make_rng(seed, STREAM_EVAL, sid, snr_index, ci)) for ci, n in wave]
            if pool is None:
                results = [run(n, r) for n, r in jobs]
            else:
                results = list(pool.map(lambda a: run(*a), jobs))
            for (ci, n), (e, b) in zip(wave, results):
                errors += e
                bits += b
                blocks += n
                if errors.sum() >= cfg.min_bit_errors:
                    done = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    exhausted = not done
    snr = float(snr_db)
    rows = [BerRow(scheme, snr, str(m + 1), bits, int(errors[m]), exhausted)
            for m in range(system.M)]
    rows.append(BerRow(scheme, snr, "all", bits * system.M, int(errors.sum()), exhausted))
    return rows


def train_model(cfg: ExperimentConfig, system: SystemConfig | None = None,
                channel: ChannelModel | None = None,
                train: TrainConfig | None = None) -> tuple[JtrdModel, TrainLog]:
    system = system or cfg.system
    channel = channel or cfg.channel
    train = train or cfg.train
    model = JtrdModel.initialize(system, train)
    tlog = train_until_converged(model, train, channel)
    return model, tlog


def sweep(cfg: ExperimentConfig, model: JtrdModel | None = None, schemes=None,
          threads: int = 1) -> BerReport:
    """Evaluate every scheme at every SNR with shared noise calibration.

    ``schemes`` defaults to JTRD (when a model is given) followed by the
    configured baselines.
    """
    t0 = time.perf_counter()
    if schemes is None:
        schemes = ([JTRD] if model is not None else []) + list(cfg.baselines)
    report = BerReport()
    for si, snr in enumerate(cfg.eval_snrs_db):
        noise = evaluation_noise(model, cfg.system, cfg.channel, snr, cfg.train.seed)
        for scheme in schemes:
            report.rows += evaluate_ber(scheme, cfg, snr, model, noise, snr_index=si,
                                        threads=threads)
    report.metadata = {
        "seed": cfg.train.seed,
        "config_hash": cfg.config_hash(),
        "wall_clock_s": time.perf_counter() - t0,
        "schemes": list(schemes),
        "block_energy": cfg.system.block_energy,
    }
    return report


def write_report(report: BerReport, out_dir, figure: str | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ber.csv").write_text(report.to_csv())
    (out / "ber.json").write_text(report.to_json())
    if figure:
        plot = out / "plot_data"
        plot.mkdir(exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "snr_db", "ber", "ci"])
        for r in report.rows:
            if r.user == "all":
                w.writerow([r.scheme, repr(r.snr_db), repr(r.ber), repr(r.ci)])
        (plot / f"{figure}.csv").write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Training studies


@dataclass
class InitRun:
    scheme: str
    seed: int
    log: TrainLog
    user_ber: np.ndarray  # evaluated per-user BER at the end of training

    @property
    def imbalance(self) -> float:
        lo, hi = float(self.user_ber.min()), float(self.user_ber.max())
        if hi == 0.0:
            return 1.0
        return hi / lo if lo > 0 else math.inf


def final_user_ber(model: JtrdModel, cfg: ExperimentConfig, snr_db: float | None = None,
                   seed: int | None = None) -> np.ndarray:
    snr = cfg.train.train_snr_db if snr_db is None else snr_db
    rows = evaluate_ber(JTRD, cfg, snr, model, seed=seed)
    return np.array([r.ber for r in rows[:-1]])


def init_comparison(cfg: ExperimentConfig, seeds=None,
                    schemes=("xavier", "symmetrical")) -> dict[str, list[InitRun]]:
    """Paired training runs that differ only in the codebook initialization."""
    seeds = list(cfg.init_seeds if seeds is None else seeds)
    if len(seeds) < 3:
        raise ConfigError("init_comparison needs at least three seeds")
    out: dict[str, list[InitRun]] = {}
    for scheme in schemes:
        runs = []
        for seed in seeds:
            train = TrainConfig.from_dict({**cfg.train.to_dict(), "init": scheme, "seed": seed})
            model, tlog = train_model(cfg, train=train)
            runs.append(InitRun(scheme, seed, tlog, final_user_ber(model, cfg, seed=seed)))
        out[scheme] = runs
    return out


def init_comparison_csv(runs: dict[str, list[InitRun]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    M = next(iter(runs.values()))[0].log.M
    w.writerow(["init", "seed", "iteration"] + [f"ber_user_{m + 1}" for m in range(M)])
    for scheme, rs in runs.items():
        for r in rs:
            its, curves = r.log.user_ber_curves()
            for i, row in zip(its, curves):
                w.writerow([scheme, r.seed, int(i)] + [repr(float(v)) for v in row])
    return buf.getvalue()


@dataclass
class BlockLengthRow:
    T: int
    block_energy: float
    result: BerRow


def block_length_study(cfg: ExperimentConfig, T_values=None,
                       snr_db: float | None = None) -> list[BlockLengthRow]:
    """Train one model per block length and evaluate it at a fixed SNR."""
    T_values = list(cfg.T_values if T_values is None else T_values)
    snr = cfg.train.train_snr_db if snr_db is None else snr_db
    rows = []
    for T in T_values:
        system = SystemConfig(M=cfg.system.M, N=cfg.system.N, T=int(T), J=cfg.system.J,
                              P=cfg.system.P)
        if not math.isclose(float(np.sum(system.alphaP)), T * system.P):
            raise ConfigError("energy budget does not scale with T")
        sub = ExperimentConfig.from_dict({**cfg.to_dict(), "system": system.to_dict()})
        model, _ = train_model(sub)
        result = evaluate_ber(JTRD, sub, snr, model)[-1]
        rows.append(BlockLengthRow(int(T), system.block_energy, result))
    return rows


def block_length_csv(rows: list[BlockLengthRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "block_energy", "bits", "errors", "ber", "ci"])
    for r in rows:
        w.writerow([r.T, repr(r.block_energy), r.result.bits, r.result.errors,
                    repr(r.result.ber), repr(r.result.ci)])
    return buf.getvalue()


def convergence_study(cfg: ExperimentConfig, channels: dict[str, ChannelModel],
                      seeds) -> dict[str, list[int]]:
    """Iterations until the loss-plateau test fires, per channel model and seed.

    Runs that never converge count as ``max_iterations``.
    """
    out = {}
    for name, channel in channels.items():
        counts = []
        for seed in seeds:
            train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": seed,
                                           "stop_on_convergence": True})
            _, tlog = train_model(cfg, channel=channel, train=train)
            counts.append(tlog.converged_at if tlog.converged_at is not None
                          else train.max_iterations)
        out[name] = counts
    return out


def convergence_csv(counts: dict[str, list[int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "seed_index", "iterations"])
    for name, cs in counts.items():
        for i, c in enumerate(cs):
            w.writerow([name, i, c])
    return buf.getvalue()
