"""Two-phase training orchestration: alternating dual-optimizer loops.

Each iteration takes one batch and runs the main-loss step (forward, backward,
clip, Adam A); when the orthogonality loss is enabled, a fresh forward on the
same batch feeds the ortho step (backward, clip, Adam B over the target
slot's weights only). The two optimizers never share moment buffers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    LANGUAGE,
    PHASE_FULL,
    PHASE_LANG,
    PHASE_TASK,
    PHASE_TASK_ONLY,
    PHASES,
    TASK,
    AdapterStack,
    set_trainable,
)
from .autodiff import Tensor, add, mul
from .encoder import Encoder
from .errors import ConfigError, NumericError
from .objectives import (
    MaskingPolicy,
    apply_masking,
    mlm_loss,
    ortho_loss,
    seq_cls_loss,
    tagging_loss,
)
from .optim import Adam, clip_grad_norm
from .synthlang import CLS, PAD, SEP, TaskDataset

IGNORE = -1


@dataclass
class PhaseConfig:
    """One training phase: main loss, optional ortho loss, budgets, seeds."""

    phase: str
    main_loss: str  # mlm | seq_cls | tagging
    ortho: bool = False
    main_lr: float = 1e-3
    ortho_lr: float = 1e-4
    steps: int = 200
    batch_size: int = 16
    clip_norm: float = 1.0
    alternation_k: int = 1
    seed: int = 0
    joint_lambda: float | None = None
    ortho_exclude_residual: bool = False
    ortho_include_padding: bool = False
    tagging_sum_reduction: bool = False

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.main_loss not in ("mlm", "seq_cls", "tagging"):
            raise ConfigError(f"unknown main loss {self.main_loss!r}")
        if self.phase == PHASE_FULL and (self.ortho or self.joint_lambda):
            raise ConfigError("full fine-tuning runs without the orthogonality loss")
        if self.alternation_k < 1:
            raise ConfigError("alternation granularity must be >= 1")

    def ortho_slot(self) -> str:
        return LANGUAGE if self.phase == PHASE_LANG else TASK


@dataclass
class TrainStats:
    """Metrics log plus in-memory bookkeeping the invariants check."""

    log_lines: list[str] = field(default_factory=list)
    batch_hashes: list[tuple[int, str, str | None]] = field(default_factory=list)
    main_losses: list[float] = field(default_factory=list)
    ortho_totals: list[float] = field(default_factory=list)
    skipped_sequences: int = 0

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.log_lines:
                fh.write(line + "\n")


def _batch_hash(ids: np.ndarray, mask: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ids, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(mask, dtype=np.int64).tobytes())
    return h.hexdigest()


def pad_sequences(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences into [B, T] ids + 0/1 mask."""
    t = max(len(s) for s in seqs)
    ids = np.full((len(seqs), t), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), t), dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1
    return ids, mask


def make_mlm_batch(corpus: list[np.ndarray], picks: np.ndarray,
                   policy: MaskingPolicy, rng: np.random.Generator):
    """[CLS]-prefixed corpus sentences, corrupted for MLM."""
    seqs = [np.concatenate(([CLS], corpus[int(i)])) for i in picks]
    ids, mask = pad_sequences(seqs)
    corrupted, labels, skipped = apply_masking(ids, mask, policy, rng)
    return corrupted, mask, labels, skipped


def make_seq_batch(examples: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """[CLS] sent1 [SEP] sent2 inputs with whole-sequence labels."""
    seqs = [np.concatenate(([CLS], a, [SEP], b)) for a, b, _ in examples]
    ids, mask = pad_sequences(seqs)
    labels = np.array([label for _, _, label in examples], dtype=np.int64)
    return ids, mask, labels


def make_tag_batch(examples: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """[CLS]-prefixed sentences with per-token tags; CLS and padding ignored."""
    seqs = [np.concatenate(([CLS], sent)) for sent, _ in examples]
    ids, mask = pad_sequences(seqs)
    labels = np.full_like(ids, IGNORE)
    for i, (_, tags) in enumerate(examples):
        labels[i, 1 : 1 + len(tags)] = tags
    return ids, mask, labels


class _BatchSource:
    """Seeded per-step batch sampler over a corpus or task dataset."""

    def __init__(self, cfg: PhaseConfig, vocab_size: int,
                 corpus: list[np.ndarray] | None = None,
                 dataset: TaskDataset | None = None):
        self.cfg = cfg
        self.corpus = corpus
        self.dataset = dataset
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.mask_rng = np.random.default_rng([cfg.seed, 2])
        if cfg.main_loss == "mlm":
            self.policy = MaskingPolicy(vocab=vocab_size)

    def next(self):
        cfg = self.cfg
        if cfg.main_loss == "mlm":
            picks = self.rng.integers(len(self.corpus), size=cfg.batch_size)
            ids, mask, labels, skipped = make_mlm_batch(
                self.corpus, picks, self.policy, self.mask_rng)
            return ids, mask, labels, skipped
        picks = self.rng.integers(len(self.dataset.examples), size=cfg.batch_size)
        examples = [self.dataset.examples[int(i)] for i in picks]
        if cfg.main_loss == "seq_cls":
            ids, mask, labels = make_seq_batch(examples)
        else:
            ids, mask, labels = make_tag_batch(examples)
        return ids, mask, labels, 0


def _main_loss(cfg: PhaseConfig, encoder: Encoder, states, labels) -> Tensor:
    if cfg.main_loss == "mlm":
        return mlm_loss(encoder.mlm_logits(states), labels)
    if cfg.main_loss == "seq_cls":
        return seq_cls_loss(encoder.cls_logits(states), labels)
    return tagging_loss(encoder.tag_logits(states), labels,
                        sum_reduction=cfg.tagging_sum_reduction)


def run_phase(
    encoder: Encoder,
    stack: AdapterStack | None,
    cfg: PhaseConfig,
    corpus: list[np.ndarray] | None = None,
    dataset: TaskDataset | None = None,
    log_path=None,
) -> TrainStats:
    """Run one training phase over its step budget and return the stats.

    The caller provides either a corpus (mlm) or a task dataset. Freezing
    follows the phase id; the ortho optimizer is scoped to the target slot's
    adapter weights and owns separate Adam state.
    """
    if cfg.main_loss == "mlm" and corpus is None:
        raise ConfigError("mlm training needs a corpus")
    if cfg.main_loss != "mlm" and dataset is None:
        raise ConfigError(f"{cfg.main_loss} training needs a task dataset")
    if cfg.ortho or cfg.joint_lambda:
        slot = cfg.ortho_slot()
        if stack is None or stack.slot(slot) is None:
            raise ConfigError(f"ortho loss requires an occupied {slot} slot")

    set_trainable(encoder.params, cfg.phase)
    # scope the optimizer to the parameters this phase's loss can reach;
    # heads of other tasks stay frozen-in-place even under full fine-tuning
    dead_heads = {"mlm": ("head.cls.", "head.tag."),
                  "seq_cls": ("head.mlm.", "head.tag."),
                  "tagging": ("head.mlm.", "head.cls.")}[cfg.main_loss]
    for name in encoder.params.names():
        if name.startswith(dead_heads):
            encoder.params[name].requires_grad = False
    trainable = encoder.params.trainable_names()
    if not trainable:
        raise ConfigError(f"phase {cfg.phase} has nothing to train")
    opt_main = Adam(encoder.params, names=trainable, lr=cfg.main_lr)
    opt_ortho = None
    if cfg.ortho and not cfg.joint_lambda:
        prefix = "adapter.lang." if cfg.ortho_slot() == LANGUAGE else "adapter.task."
        slot_names = [n for n in trainable if n.startswith(prefix)]
        opt_ortho = Adam(encoder.params, names=slot_names, lr=cfg.ortho_lr)

    source = _BatchSource(cfg, encoder.config.vocab, corpus=corpus, dataset=dataset)
    drop_rng = np.random.default_rng([cfg.seed, 3])
    stats = TrainStats()
    training = encoder.config.dropout > 0.0

    for step in range(cfg.steps):
        ids, mask, labels, skipped = source.next()
        stats.skipped_sequences += skipped
        main_hash = _batch_hash(ids, mask)

        states, acts = encoder.encode(ids, mask, stack=stack,
                                      training=training, rng=drop_rng)
        loss = _main_loss(cfg, encoder, states, labels)
        if cfg.joint_lambda:
            report = ortho_loss(acts, cfg.ortho_slot(), mask,
                                exclude_residual=cfg.ortho_exclude_residual,
                                include_padding=cfg.ortho_include_padding)
            loss = add(loss, mul(report.loss, cfg.joint_lambda))
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite {cfg.main_loss} loss {value} at step {step}")
        loss.backward()
        norm = clip_grad_norm(encoder.params, trainable, cfg.clip_norm)
        opt_main.step()
        stats.main_losses.append(value)
        stats.log_lines.append(
            f"{step}\t{cfg.phase}\t{cfg.main_loss}\t{value!r}\t-\t{norm!r}")

        ortho_hash = None
        if opt_ortho is not None and (step + 1) % cfg.alternation_k == 0:
            # fresh forward: the main step just moved the weights
            ortho_hash = _batch_hash(ids, mask)
            _, acts = encoder.encode(ids, mask, stack=stack,
                                     training=training, rng=drop_rng)
            report = ortho_loss(acts, cfg.ortho_slot(), mask,
                                exclude_residual=cfg.ortho_exclude_residual,
                                include_padding=cfg.ortho_include_padding)
            total = report.total
            if not math.isfinite(total):
                raise NumericError(f"non-finite ortho loss {total} at step {step}")
            report.loss.backward()
            ortho_norm = clip_grad_norm(encoder.params, opt_ortho.names, cfg.clip_norm)
            opt_ortho.step()
            stats.ortho_totals.append(total)
            cos2 = ",".join(repr(v) for v in report.per_layer)
            stats.log_lines.append(
                f"{step}\t{cfg.phase}\tort\t{total!r}\t{cos2}\t{ortho_norm!r}")
        stats.batch_hashes.append((step, main_hash, ortho_hash))

    if log_path is not None:
        stats.write(log_path)
    return stats


def train_language_adapter(encoder: Encoder, stack: AdapterStack,
                           corpus: list[np.ndarray], cfg: PhaseConfig,
                           log_path=None) -> TrainStats:
    """Phase 1: MLM over one language's corpus, language slot trainable."""
    if cfg.phase != PHASE_LANG or cfg.main_loss != "mlm":
        raise ConfigError("language adapter training is an mlm phase")
    if stack.lang is None:
        raise ConfigError("language adapter training needs a language slot")
    return run_phase(encoder, stack, cfg, corpus=corpus, log_path=log_path)


def train_task_adapter(encoder: Encoder, stack: AdapterStack,
                       dataset: TaskDataset, cfg: PhaseConfig,
                       log_path=None) -> TrainStats:
    """Phase 2: task loss on source data; language slot (if any) frozen."""
    if cfg.phase not in (PHASE_TASK, PHASE_TASK_ONLY):
        raise ConfigError("task adapter training needs a task phase id")
    if stack.task is None:
        raise ConfigError("task adapter training needs a task slot")
    if cfg.phase == PHASE_TASK and stack.lang is None:
        raise ConfigError("stacked task training expects a loaded language slot")
    return run_phase(encoder, stack, cfg, dataset=dataset, log_path=log_path)


def train_full_finetune(encoder: Encoder, dataset: TaskDataset, cfg: PhaseConfig,
                        log_path=None) -> TrainStats:
    """Single-optimizer fine-tuning of every parameter, no adapters."""
    if cfg.phase != PHASE_FULL:
        raise ConfigError("full fine-tuning uses the full_finetune phase id")
    return run_phase(encoder, None, cfg, dataset=dataset, log_path=log_path)


def pretrain_backbone(encoder: Encoder, corpus: list[np.ndarray], cfg: PhaseConfig,
                      log_path=None) -> TrainStats:
    """Short MLM run over the union corpus; stands in for large-scale pretraining."""
    if cfg.phase != PHASE_FULL or cfg.main_loss != "mlm":
        raise ConfigError("backbone pretraining is a full-phase mlm run")
    return run_phase(encoder, None, cfg, corpus=corpus, log_path=log_path)


def model_selection(candidates: list[tuple[str, float]]) -> str:
    """Pick the config hash with the best source-language dev metric.

    Ties break toward the lexicographically lowest hash, which keeps the
    choice deterministic.
    """
    if not candidates:
        raise ConfigError("model selection over an empty candidate set")
    return min(candidates, key=lambda item: (-item[1], item[0]))[0]


def write_run_manifest(path, entries: dict) -> None:
    """Plain-text key=value run manifest, written before step 0."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_run_manifest(path) -> dict:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def config_hash(*parts) -> str:
    """Deterministic digest of config reprs, used for manifests and ties."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
    return h.hexdigest()[:16]
