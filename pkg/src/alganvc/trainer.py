"""Bidirectional training loop, checkpointing, and feature conversion.

Each epoch draws one normalized frame batch per speaker and runs two
phases.  The generator phase pushes both mapped batches through the
opposing discriminators, adds the cycle and identity L1 terms, and steps
both generators.  The discriminator phase recomputes the fakes under
no_grad (detached, and reflecting the just-updated generators) and steps
both discriminators.  Epoch-mean losses feed the learning-rate scheduler,
whose output applies from the next epoch on.

Everything is deterministic under the config seed: model init draws from
one seeded stream, and every (epoch, batch) pair gets its own child
generator, so resuming from a checkpoint replays the identical stream.

Checkpoints are a versioned little-endian binary (magic "ALGC") holding
all four networks, their Adam moments, the scheduler state, and the full
resolved config as JSON; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import blrs as blrs_mod
from . import features as feats
from .blrs import BlrsState, blrs_step
from .losses import (
    LossReport,
    LossWeights,
    TargetLabels,
    adversarial_loss_d,
    adversarial_loss_g,
    full_loss,
    total_adversarial,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    desk_discriminator_config,
    desk_generator_config,
)
from .tensor import Adam, Tensor, backward, no_grad, zero_grads

log = logging.getLogger("alganvc")

CHECKPOINT_MAGIC = b"ALGC"
CHECKPOINT_VERSION = 1
LOSS_CSV_HEADER = "epoch,adv_G_xy,adv_G_yx,adv_D_x,adv_D_y,rec,id,full,eta_g,eta_d"
NETWORK_KEYS = ("g_xy", "g_yx", "d_x", "d_y")
DIRECTIONS = ("x2y", "y2x")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 200
    frames_per_batch: int = 128
    batches_per_epoch: int = 1
    eta_g: float = blrs_mod.DEFAULT_ETA_G
    eta_d: float = blrs_mod.DEFAULT_ETA_D
    alpha: float = 0.5
    beta: float = 0.5
    w_rec: float = 1.0
    w_id: float = 1.0
    lambda_scale: float = blrs_mod.DEFAULT_LAMBDA
    c1: float = blrs_mod.DEFAULT_C1
    c2: float = blrs_mod.DEFAULT_C2
    lr_floor: float = blrs_mod.DEFAULT_FLOOR
    lr_ceiling: float = blrs_mod.DEFAULT_CEILING
    blrs_clamp: bool = True
    precision: str = "64"
    update_generators_first: bool = True
    checkpoint_interval: int = 0
    generator: GeneratorConfig = field(default_factory=desk_generator_config)
    discriminator: DiscriminatorConfig = field(default_factory=desk_discriminator_config)

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.discriminator, dict):
            self.discriminator = DiscriminatorConfig(**self.discriminator)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.frames_per_batch < 1 or self.batches_per_epoch < 1:
            raise ValueError("batch sizes must be positive")
        if min(self.eta_g, self.eta_d, self.c1, self.c2) <= 0:
            raise ValueError("rates and scheduler constants must be positive")
        if self.precision not in ("32", "64"):
            raise ValueError("precision must be '32' or '64'")
        if self.generator.mcep_dim != self.discriminator.mcep_dim:
            raise ValueError("generator and discriminator disagree on mcep_dim")
        # raises on an invalid alpha/beta/weight combination
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta,
                           w_rec=self.w_rec, w_id=self.w_id)

    def dtype(self):
        return np.float64 if self.precision == "64" else np.float32

    def blrs_initial(self) -> BlrsState:
        return BlrsState(
            eta_g=self.eta_g, eta_d=self.eta_d, lambda_scale=self.lambda_scale,
            c1=self.c1, c2=self.c2, floor=self.lr_floor, ceiling=self.lr_ceiling,
            clamp=self.blrs_clamp,
        )

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


@dataclass
class ModelSet:
    g_xy: Generator
    g_yx: Generator
    d_x: Discriminator
    d_y: Discriminator

    def by_key(self, key: str):
        return getattr(self, key)


def build_models(cfg: TrainConfig) -> ModelSet:
    """All four networks from one seeded stream, in fixed order."""
    rng = np.random.default_rng([cfg.seed, 0, 0])
    dtype = cfg.dtype()
    return ModelSet(
        g_xy=Generator(cfg.generator, rng, dtype),
        g_yx=Generator(cfg.generator, rng, dtype),
        d_x=Discriminator(cfg.discriminator, rng, dtype),
        d_y=Discriminator(cfg.discriminator, rng, dtype),
    )


@dataclass
class Checkpoint:
    epoch: int
    config_json: str
    config_hash: bytes
    params: dict
    adam: dict
    blrs: BlrsState
    version: int = CHECKPOINT_VERSION


def _snapshot(models: ModelSet, optimizers: dict, state: BlrsState,
              epoch: int, cfg: TrainConfig) -> Checkpoint:
    params = {}
    adam = {}
    for key in NETWORK_KEYS:
        params[key] = [p.data.copy() for p in models.by_key(key).params()]
        st = optimizers[key].state
        adam[key] = {
            "m": [m.copy() for m in st.m],
            "v": [v.copy() for v in st.v],
            "step_count": st.step_count,
            "beta1": st.beta1,
            "beta2": st.beta2,
            "eps": st.eps,
        }
    return Checkpoint(
        epoch=epoch,
        config_json=cfg.to_json(),
        config_hash=cfg.config_hash(),
        params=params,
        adam=adam,
        blrs=state,
    )


_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _pack_array(a: np.ndarray) -> bytes:
    code = _DTYPE_CODES[a.dtype]
    head = struct.pack("<BB", code, a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    return head + dims + np.ascontiguousarray(a).tobytes()


def _unpack_array(r) -> np.ndarray:
    code, ndim = r.unpack("<BB")
    shape = r.unpack(f"<{ndim}I") if ndim else ()
    dtype = _CODE_DTYPES[code]
    n = 1
    for s in shape:
        n *= s
    raw = r.take(n * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_checkpoint(ckpt: Checkpoint, path) -> int:
    parts = [struct.pack("<4sHI", CHECKPOINT_MAGIC, ckpt.version, ckpt.epoch)]
    parts.append(ckpt.config_hash)
    cfg_blob = ckpt.config_json.encode()
    parts.append(struct.pack("<I", len(cfg_blob)))
    parts.append(cfg_blob)
    b = ckpt.blrs
    has_prev = b.prev_g_loss is not None
    parts.append(struct.pack(
        "<7dBI B2d",
        b.eta_g, b.eta_d, b.lambda_scale, b.c1, b.c2, b.floor, b.ceiling,
        int(b.clamp), b.epoch,
        int(has_prev),
        b.prev_g_loss if has_prev else 0.0,
        b.prev_d_loss if has_prev else 0.0,
    ))
    for key in NETWORK_KEYS:
        arrays = ckpt.params[key]
        parts.append(struct.pack("<I", len(arrays)))
        for a in arrays:
            parts.append(_pack_array(a))
        st = ckpt.adam[key]
        parts.append(struct.pack(
            "<Q3dI", st["step_count"], st["beta1"], st["beta2"], st["eps"], len(st["m"])
        ))
        for a in st["m"]:
            parts.append(_pack_array(a))
        for a in st["v"]:
            parts.append(_pack_array(a))
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = feats._Reader(blob, path)
    magic, version, epoch = r.unpack("<4sHI")
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config_hash = r.take(32)
    (cfg_len,) = r.unpack("<I")
    config_json = r.take(cfg_len).decode()
    (eta_g, eta_d, lam, c1, c2, floor, ceiling, clamp, b_epoch,
     has_prev, prev_g, prev_d) = r.unpack("<7dBI B2d")
    blrs_state = BlrsState(
        eta_g=eta_g, eta_d=eta_d, lambda_scale=lam, c1=c1, c2=c2,
        floor=floor, ceiling=ceiling, clamp=bool(clamp), epoch=b_epoch,
        prev_g_loss=prev_g if has_prev else None,
        prev_d_loss=prev_d if has_prev else None,
    )
    params = {}
    adam = {}
    for key in NETWORK_KEYS:
        (n_arrays,) = r.unpack("<I")
        params[key] = [_unpack_array(r) for _ in range(n_arrays)]
        step_count, beta1, beta2, eps, n_m = r.unpack("<Q3dI")
        m = [_unpack_array(r) for _ in range(n_m)]
        v = [_unpack_array(r) for _ in range(n_m)]
        adam[key] = {"m": m, "v": v, "step_count": step_count,
                     "beta1": beta1, "beta2": beta2, "eps": eps}
    if r.off != len(blob):
        raise ValueError(f"trailing bytes in checkpoint: {path}")
    return Checkpoint(
        epoch=epoch, config_json=config_json, config_hash=config_hash,
        params=params, adam=adam, blrs=blrs_state, version=version,
    )


def _restore(models: ModelSet, optimizers: dict, ckpt: Checkpoint) -> None:
    for key in NETWORK_KEYS:
        tensors = models.by_key(key).params()
        arrays = ckpt.params[key]
        if len(tensors) != len(arrays):
            raise ValueError(f"checkpoint parameter count mismatch for {key}")
        for t, a in zip(tensors, arrays):
            if t.data.shape != a.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {key}: {a.shape} vs {t.data.shape}"
                )
            t.data = a.copy()
        st = optimizers[key].state
        saved = ckpt.adam[key]
        st.m = [a.copy() for a in saved["m"]]
        st.v = [a.copy() for a in saved["v"]]
        st.step_count = saved["step_count"]
        st.beta1, st.beta2, st.eps = saved["beta1"], saved["beta2"], saved["eps"]


def models_from_checkpoint(ckpt: Checkpoint) -> tuple:
    """Rebuild (cfg, models) from the config embedded in a checkpoint."""
    cfg = TrainConfig.from_json(ckpt.config_json)
    models = build_models(cfg)
    optimizers = {key: Adam(models.by_key(key).params()) for key in NETWORK_KEYS}
    _restore(models, optimizers, ckpt)
    return cfg, models


def write_loss_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        for rep in reports:
            writer.writerow([
                rep.epoch,
                repr(rep.adv_g_xy), repr(rep.adv_g_yx),
                repr(rep.adv_d_x), repr(rep.adv_d_y),
                repr(rep.rec_total), repr(rep.id_total), repr(rep.full),
                repr(rep.eta_g), repr(rep.eta_d),
            ])


def read_loss_csv(path) -> list:
    reports = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            reports.append(LossReport(
                epoch=int(row["epoch"]),
                adv_g_xy=float(row["adv_G_xy"]), adv_g_yx=float(row["adv_G_yx"]),
                adv_d_x=float(row["adv_D_x"]), adv_d_y=float(row["adv_D_y"]),
                rec_total=float(row["rec"]), id_total=float(row["id"]),
                full=float(row["full"]),
                eta_g=float(row["eta_g"]), eta_d=float(row["eta_d"]),
            ))
    return reports


def train(cfg: TrainConfig, corpus_x: feats.FeatureArchive,
          corpus_y: feats.FeatureArchive, out_dir=None,
          resume: Checkpoint = None) -> tuple:
    """Run the loop; returns (final Checkpoint, list of LossReport).

    With `resume`, training continues from the checkpoint's epoch using the
    same per-epoch seed stream, so an interrupted run and an uninterrupted
    one are equivalent.
    """
    for name, corpus in (("x", corpus_x), ("y", corpus_y)):
        if corpus.mcep_dim != cfg.generator.mcep_dim:
            raise ValueError(
                f"corpus {name} has mcep_dim {corpus.mcep_dim}, "
                f"model expects {cfg.generator.mcep_dim}"
            )
    stats_x = feats.speaker_stats(corpus_x)
    stats_y = feats.speaker_stats(corpus_y)

    models = build_models(cfg)
    optimizers = {key: Adam(models.by_key(key).params()) for key in NETWORK_KEYS}
    state = cfg.blrs_initial()
    start_epoch = 1
    if resume is not None:
        if resume.config_hash != cfg.config_hash():
            log.warning("resuming from a checkpoint with a different config hash")
        _restore(models, optimizers, resume)
        state = resume.blrs
        start_epoch = resume.epoch + 1

    labels = TargetLabels()
    weights = cfg.loss_weights()
    dtype = cfg.dtype()
    gen_params = models.g_xy.params() + models.g_yx.params()
    disc_params = models.d_x.params() + models.d_y.params()
    all_params = gen_params + disc_params

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        feats.save_stats(stats_x, out_dir / "x.stats.json")
        feats.save_stats(stats_y, out_dir / "y.stats.json")

    reports = []
    for epoch in range(start_epoch, cfg.epochs + 1):
        sums = np.zeros(7)  # adv_g_xy, adv_g_yx, adv_d_x, adv_d_y, rec, id, g_obj
        for b in range(cfg.batches_per_epoch):
            rng = np.random.default_rng([cfg.seed, epoch, b])
            x_np = feats.sample_frames(corpus_x, cfg.frames_per_batch, rng)
            y_np = feats.sample_frames(corpus_y, cfg.frames_per_batch, rng)
            x = Tensor(feats.mcep_normalize(x_np, stats_x).astype(dtype))
            y = Tensor(feats.mcep_normalize(y_np, stats_y).astype(dtype))

            def generator_phase():
                fake_y = models.g_xy.forward(x)
                fake_x = models.g_yx.forward(y)
                adv_g_xy = adversarial_loss_g(models.d_y, y, fake_y, labels, weights)
                adv_g_yx = adversarial_loss_g(models.d_x, x, fake_x, labels, weights)
                rec = (models.g_yx.forward(fake_y) - x).abs().mean() \
                    + (models.g_xy.forward(fake_x) - y).abs().mean()
                idl = (models.g_yx.forward(x) - x).abs().mean() \
                    + (models.g_xy.forward(y) - y).abs().mean()
                g_obj = adv_g_xy + adv_g_yx + weights.w_rec * rec + weights.w_id * idl
                backward(g_obj)
                optimizers["g_xy"].step(state.eta_g)
                optimizers["g_yx"].step(state.eta_g)
                zero_grads(all_params)
                return (adv_g_xy.item(), adv_g_yx.item(), rec.item(),
                        idl.item(), g_obj.item())

            def discriminator_phase():
                with no_grad():
                    fake_y = models.g_xy.forward(x)
                    fake_x = models.g_yx.forward(y)
                adv_d_y = adversarial_loss_d(models.d_y, y, fake_y, labels, weights)
                adv_d_x = adversarial_loss_d(models.d_x, x, fake_x, labels, weights)
                d_obj = adv_d_y + adv_d_x
                backward(d_obj)
                optimizers["d_x"].step(state.eta_d)
                optimizers["d_y"].step(state.eta_d)
                zero_grads(all_params)
                return adv_d_x.item(), adv_d_y.item()

            if cfg.update_generators_first:
                g_vals = generator_phase()
                d_vals = discriminator_phase()
            else:
                d_vals = discriminator_phase()
                g_vals = generator_phase()

            adv_g_xy, adv_g_yx, rec, idl, g_obj = g_vals
            adv_d_x, adv_d_y = d_vals
            batch_vals = np.array([adv_g_xy, adv_g_yx, adv_d_x, adv_d_y, rec, idl, g_obj])
            if not np.all(np.isfinite(batch_vals)):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b} "
                    f"(batch seed [{cfg.seed}, {epoch}, {b}]): {batch_vals}"
                )
            sums += batch_vals

        means = sums / cfg.batches_per_epoch
        adv_g_xy, adv_g_yx, adv_d_x, adv_d_y, rec, idl, g_obj = (
            float(v) for v in means)
        adv_total = total_adversarial(adv_g_xy, adv_d_y, adv_g_yx, adv_d_x)
        report = LossReport(
            epoch=epoch,
            adv_g_xy=adv_g_xy, adv_g_yx=adv_g_yx,
            adv_d_x=adv_d_x, adv_d_y=adv_d_y,
            rec_total=rec, id_total=idl,
            full=full_loss(adv_total, rec, idl, weights),
            eta_g=state.eta_g, eta_d=state.eta_d,
        )
        reports.append(report)
        log.debug("epoch %d full=%.6f eta_g=%.3e eta_d=%.3e",
                  epoch, report.full, state.eta_g, state.eta_d)
        # scheduler sees the generator objective and the summed D losses
        state = blrs_step(state, g_obj, adv_d_x + adv_d_y)

        if (out_dir is not None and cfg.checkpoint_interval > 0
                and epoch % cfg.checkpoint_interval == 0 and epoch < cfg.epochs):
            ckpt = _snapshot(models, optimizers, state, epoch, cfg)
            save_checkpoint(ckpt, out_dir / f"checkpoint-{epoch:06d}.algc")

    final = _snapshot(models, optimizers, state, cfg.epochs, cfg)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "checkpoint.algc")
        write_loss_csv(reports, out_dir / "losses.csv")
    return final, reports


# -- conversion ------------------------------------------------------------


def convert_archive(gen, archive: feats.FeatureArchive,
                    src_stats: feats.SpeakerStats, tgt_stats: feats.SpeakerStats,
                    window: int = 128) -> feats.FeatureArchive:
    """Run one generator over every utterance of an archive.

    MCEPs are z-scored with source statistics, mapped tile by tile
    (non-overlapping windows, zero-padded tail, truncated back), and
    rescaled with target statistics.  F0 moves through the log-domain
    transport; aperiodicities pass through.
    """
    if archive.mcep_dim != gen.mcep_dim:
        raise ValueError(
            f"archive mcep_dim {archive.mcep_dim} does not match model "
            f"{gen.mcep_dim}"
        )
    if window % gen.width_divisor != 0:
        raise ValueError(
            f"window {window} not divisible by the generator's width divisor "
            f"{gen.width_divisor}"
        )
    out_utts = []
    for utt in archive.utterances:
        t = utt.frames
        z = feats.mcep_normalize(utt.mcep, src_stats)
        padded = -(-t // window) * window
        zp = np.pad(z, ((0, 0), (0, padded - t)))
        tiles = []
        with no_grad():
            for s in range(0, padded, window):
                tile = Tensor(zp[:, s:s + window])
                tiles.append(gen.forward(tile).data)
        mapped = np.concatenate(tiles, axis=1)[:, :t]
        out_utts.append(feats.Utterance(
            mcep=feats.mcep_denormalize(mapped, tgt_stats),
            f0=feats.logf0_convert(utt.f0, src_stats, tgt_stats),
            ap=feats.ap_passthrough(utt.ap),
        ))
    return feats.FeatureArchive(mcep_dim=archive.mcep_dim, utterances=out_utts)


def convert(ckpt: Checkpoint, archive: feats.FeatureArchive, direction: str,
            src_stats: feats.SpeakerStats, tgt_stats: feats.SpeakerStats,
            window: int = 128) -> feats.FeatureArchive:
    """Checkpoint-level conversion in direction 'x2y' or 'y2x'."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    _, models = models_from_checkpoint(ckpt)
    gen = models.g_xy if direction == "x2y" else models.g_yx
    return convert_archive(gen, archive, src_stats, tgt_stats, window)
