"""AdamW, the warmup + cosine schedule, and the end-to-end training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensorops as T
from .data import LabeledDataset, Splits
from .encoding import EmbeddingSet, ProjectionParams, project
from .fusion import cross_modal_similarity, info_nce, level_sims, LevelSims
from .hier import HierOutputs, run_head
from .objective import LossWeights, ce_variant, hier_losses, one_hot_targets, total_loss
from .taxonomy import Taxonomy
from .tensorops import Tensor

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("no_cross", "no_hier_units", "video_only", "text_only", "ce_loss")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr_finetune: float = 1e-3
    lr_new: float = 1e-2
    weight_decay: float = 0.2
    warmup_epochs: int = 5
    lambda1: float = 1.0
    lambda2: float = 1.0
    seed: int = 0
    init_sigma: float = 0.01
    clip_grad_norm: float = 0.0  # 0 disables clipping
    # ablations
    no_cross: bool = False
    no_hier_units: bool = False
    video_only: bool = False
    text_only: bool = False
    ce_loss: bool = False
    # variants
    nce_direction: str = "symmetric"
    kl_direction: str = "pred_target"
    target_mode: str = "softmax"
    c2_softmax: str = "flat2"
    strict_mask: bool = False
    learnable_temperature: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_finetune <= 0 or self.lr_new <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.warmup_epochs <= max(self.epochs, 0):
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.video_only and self.text_only:
            raise ValueError("video_only and text_only are mutually exclusive")
        LossWeights(self.lambda1, self.lambda2)
        if self.nce_direction not in ("row", "column", "symmetric"):
            raise ValueError(f"unknown nce_direction {self.nce_direction!r}")
        if self.kl_direction not in ("pred_target", "target_pred"):
            raise ValueError(f"unknown kl_direction {self.kl_direction!r}")
        if self.target_mode not in ("softmax", "onehot"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.c2_softmax not in ("flat2", "last"):
            raise ValueError(f"unknown c2_softmax {self.c2_softmax!r}")

    @property
    def modality(self) -> str:
        return "video" if self.video_only else "text" if self.text_only else "both"

    @property
    def uses_cross(self) -> bool:
        return not self.no_cross and self.modality == "both"

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class TrainState:
    params: ProjectionParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: ProjectionParams) -> "TrainState":
        arrays = param_arrays(params)
        return cls(params, {k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def param_arrays(p: ProjectionParams) -> dict[str, np.ndarray]:
    return {"P_V": p.P_V, "P_T": p.P_T, "log_temperature": np.array(p.log_temperature)}


def adamw_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    decay_keys=("P_V", "P_T"),
) -> TrainState:
    """One AdamW update returning a new state; ``lr`` is a float or a per-key dict.

    Weight decay is decoupled: ``param *= 1 - lr * weight_decay`` before the
    bias-corrected adaptive step. Keys absent from ``grads`` are left alone.
    """
    arrays = param_arrays(state.params)
    step = state.step + 1
    new = {k: a.copy() for k, a in arrays.items()}
    m = dict(state.m)
    v = dict(state.v)
    bc1 = 1 - beta1 ** step
    bc2 = 1 - beta2 ** step
    for key, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != arrays[key].shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, expected {arrays[key].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {key}")
        rate = lr[key] if isinstance(lr, dict) else lr
        m[key] = beta1 * state.m[key] + (1 - beta1) * g
        v[key] = beta2 * state.v[key] + (1 - beta2) * g * g
        if key in decay_keys:
            new[key] = new[key] * (1 - rate * weight_decay)
        new[key] = new[key] - rate * (m[key] / bc1) / (np.sqrt(v[key] / bc2) + eps)
    p = state.params
    params = ProjectionParams(new["P_V"], new["P_T"], float(new["log_temperature"]),
                              p.train_projections, p.train_temperature)
    return TrainState(params, m, v, step)


def lr_at(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup to ``peak`` then half-cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    span = total_steps - warmup_steps
    if span <= 0:
        return peak
    progress = (step - warmup_steps) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# forward pass


class Forward(NamedTuple):
    loss: Tensor | float
    l_cross: Tensor | float
    l1: Tensor
    l2: Tensor
    head: HierOutputs
    sims: LevelSims


def _scaled(sims: LevelSims, inv_temp: Tensor) -> LevelSims:
    return LevelSims(*(T.mul(s, inv_temp) for s in sims))


def forward(
    raw: EmbeddingSet,
    labels: np.ndarray,
    cfg: TrainConfig,
    pv: Tensor,
    pt: Tensor,
    log_temp: Tensor | None = None,
) -> Forward:
    emb = project(raw, pv, pt)
    sims = level_sims(emb.hv, emb.ha, emb.hc1, emb.hc2, cfg.modality)
    s_va = cross_modal_similarity(emb.hv, emb.ha) if cfg.uses_cross else None
    if log_temp is not None and (log_temp.requires_grad or log_temp.item() != 0.0):
        inv_temp = T.exp(T.scale(log_temp, -1.0))
        sims = _scaled(sims, inv_temp)
        if s_va is not None:
            s_va = T.mul(s_va, inv_temp)
    query = emb.ha if cfg.modality == "text" else emb.hv
    head = run_head(sims, emb.hc1, emb.hc2, query, not cfg.no_hier_units, cfg.c2_softmax)
    targets = one_hot_targets(labels, raw.n_items)
    # without the units the loss sees the unfiltered C2 scores
    c2_for_loss = head.S_hat_C2 if cfg.no_hier_units else head.S_hat_C2_filtered
    if cfg.ce_loss:
        l1, l2 = ce_variant(head.S_hat_C1, c2_for_loss, targets)
    else:
        l1, l2 = hier_losses(
            head.S_hat_C1, c2_for_loss, targets, cfg.kl_direction, cfg.target_mode,
            cfg.c2_softmax, head.mask if cfg.strict_mask else None,
        )
    l_cross = info_nce(s_va, cfg.nce_direction) if s_va is not None else 0.0
    loss = total_loss(l_cross, l1, l2, cfg.weights)
    return Forward(loss, l_cross, l1, l2, head, sims)


def run_forward(raw: EmbeddingSet, labels, cfg: TrainConfig, params: ProjectionParams) -> Forward:
    """Forward pass with constant parameters (no tape)."""
    return forward(raw, labels, cfg, Tensor(params.P_V), Tensor(params.P_T), Tensor(params.log_temperature))


def loss_and_grads(raw, labels, cfg: TrainConfig, params: ProjectionParams):
    train_proj = params.train_projections
    train_temp = params.train_temperature and cfg.learnable_temperature
    with T.Tape() as tape:
        pv = Tensor(params.P_V, requires_grad=train_proj)
        pt = Tensor(params.P_T, requires_grad=train_proj)
        lt = Tensor(params.log_temperature, requires_grad=train_temp)
        out = forward(raw, labels, cfg, pv, pt, lt)
        loss = out.loss
        if not isinstance(loss, Tensor) or not loss.requires_grad:
            value = float(loss.item() if isinstance(loss, Tensor) else loss)
            grads = {"P_V": np.zeros_like(params.P_V), "P_T": np.zeros_like(params.P_T)}
            return value, grads
        srcs = []
        if train_proj:
            srcs += [("P_V", pv), ("P_T", pt)]
        if train_temp:
            srcs.append(("log_temperature", lt))
        gs = tape.gradient(loss, [t for _, t in srcs])
    return loss.item(), {k: g for (k, _), g in zip(srcs, gs)}


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    config: dict
    seed: int
    initial_train_loss: float | None
    final_train_loss: float | None
    step_losses: list[float]
    epochs: list[dict]
    final: dict
    group_rates: dict
    params: ProjectionParams
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def loss_curve(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "initial_train_loss": self.initial_train_loss,
            "final_train_loss": self.final_train_loss,
            "loss_curve": self.loss_curve,
            "step_losses": self.step_losses,
            "epochs": self.epochs,
            "final": self.final,
            "group_rates": self.group_rates,
            "log_temperature": self.params.log_temperature,
            "wall_time": self.wall_time,
            "notes": self.notes,
        }


def _batches(n: int, size: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + size, n)) for s in range(0, n, size)]


def dataset_loss(raw: EmbeddingSet, labels, cfg: TrainConfig, params: ProjectionParams) -> float:
    """Mean batch loss over fixed, unshuffled batches."""
    vals = []
    for b in _batches(raw.n, cfg.batch_size):
        loss = run_forward(raw.subset(b), labels[b], cfg, params).loss
        vals.append(loss.item() if isinstance(loss, Tensor) else float(loss))
    return float(np.mean(vals))


def train(ds: LabeledDataset, splits: Splits, taxonomy: Taxonomy, cfg: TrainConfig) -> TrainReport:
    from .evaluation import evaluate  # local import: evaluation depends on this module

    t0 = time.perf_counter()
    if ds.taxonomy.n_items != taxonomy.n_items:
        raise ValueError("dataset and taxonomy disagree on item count")
    params = ProjectionParams.init(
        ds.embeddings.dim, cfg.seed, cfg.init_sigma,
        train_temperature=cfg.learnable_temperature,
    )
    rng = np.random.default_rng(cfg.seed)
    train_idx = np.asarray(splits.train, dtype=np.int64)
    raw_train = ds.embeddings.subset(train_idx) if len(train_idx) else None
    lab_train = ds.labels[train_idx]
    rates = {"P_V": cfg.lr_finetune, "P_T": cfg.lr_finetune, "log_temperature": cfg.lr_new}
    group_rates = {"finetune": {"params": ["P_V", "P_T"], "peak": cfg.lr_finetune, "applied": []},
                   "new": {"params": ["log_temperature"] if cfg.learnable_temperature else [],
                           "peak": cfg.lr_new, "applied": []}}
    epochs_log: list[dict] = []
    step_losses: list[float] = []
    notes: list[str] = []
    state = TrainState.fresh(params)
    initial = final = None

    if raw_train is None or cfg.epochs == 0:
        notes.append("no training samples or zero epochs: evaluation only")
    else:
        initial = dataset_loss(raw_train, lab_train, cfg, params)
        steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
        total = cfg.epochs * steps_per_epoch
        warmup = cfg.warmup_epochs * steps_per_epoch
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_idx))
            losses = []
            for b_no, b in enumerate(_batches(len(order), cfg.batch_size)):
                sel = order[b]
                scale = lr_at(state.step + 1, total, warmup, 1.0)
                lr = {k: r * scale for k, r in rates.items()}
                try:
                    value, grads = loss_and_grads(
                        raw_train.subset(sel), lab_train[sel], cfg, state.params
                    )
                    if not math.isfinite(value):
                        raise T.NonFiniteError("loss is not finite")
                except (T.NonFiniteError, FloatingPointError) as exc:
                    raise TrainingDiverged(f"diverged at epoch {epoch} batch {b_no}: {exc}") from None
                if cfg.clip_grad_norm > 0:
                    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                    if norm > cfg.clip_grad_norm:
                        grads = {k: g * (cfg.clip_grad_norm / norm) for k, g in grads.items()}
                state = adamw_step(state, grads, lr, cfg.weight_decay)
                losses.append(value)
                step_losses.append(value)
            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "lr_finetune": lr["P_V"],
                "lr_new": lr["log_temperature"],
            }
            group_rates["finetune"]["applied"].append(lr["P_V"])
            if cfg.learnable_temperature:
                group_rates["new"]["applied"].append(lr["log_temperature"])
            if len(splits.val):
                entry["val"] = evaluate(state.params, ds, splits.val, taxonomy, cfg).summary()
            epochs_log.append(entry)
            log.info("epoch %d loss %.6f", epoch, entry["train_loss"])
        final = dataset_loss(raw_train, lab_train, cfg, state.params)

    final_metrics = {}
    for name in ("val", "test"):
        idx = getattr(splits, name)
        if len(idx):
            final_metrics[name] = evaluate(state.params, ds, idx, taxonomy, cfg).summary()
    return TrainReport(
        config=asdict(cfg), seed=cfg.seed, initial_train_loss=initial, final_train_loss=final,
        step_losses=step_losses, epochs=epochs_log, final=final_metrics, group_rates=group_rates,
        params=state.params, wall_time=time.perf_counter() - t0, notes=notes,
    )

