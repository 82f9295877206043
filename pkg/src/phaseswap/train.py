"""Pretraining, fine-tuning and the four model variants."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .dataset import (
    SPLITS,
    TRAIN,
    VALIDATION,
    extract_windows,
    group_pool,
    make_splits,
    ps_epoch,
    rebalance,
    sample_rp_pairs,
    undersample_majority,
)
from .errors import ConfigError, InsufficientDataError
from .evaluation import evaluate, predict_proba
from .nn import Adam, Classifier, FcnEncoder, RpHead, SoftmaxHead, Tensor, no_grad, save_checkpoint
from .nn.functional import cross_entropy, one_hot
from .signals import channel_mask_array

log = logging.getLogger(__name__)


class ModelVariant(str, enum.Enum):
    PHASE_SWAP = "PhaseSwap"
    SUPERVISED = "Supervised"
    RANDOM = "Random"
    PS_FROZEN = "PSFrozen"

    @property
    def pretrained(self) -> bool:
        return self in (ModelVariant.PHASE_SWAP, ModelVariant.PS_FROZEN)

    @property
    def frozen(self) -> bool:
        return self in (ModelVariant.RANDOM, ModelVariant.PS_FROZEN)


@dataclass
class TrainConfig:
    variant: str = "PhaseSwap"
    task: str = "ps"  # pretext task: ps | rp
    w_self: float = 5.0  # seconds
    w_sup: float = 30.0  # seconds
    sample_rate: float = 102.4
    lr: float = 1e-3  # pretraining and the Supervised baseline
    finetune_lr: float = 1e-4  # PhaseSwap fine-tuning
    frozen_lr: float = 1e-3  # head-only training for Random / PSFrozen
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    pretrain_epochs: int = 5
    finetune_epochs: int = 10
    batch_size: int = 128
    finetune_batch_size: int | None = None  # defaults to batch_size
    eval_batch_size: int = 64
    r_train: float = 0.2
    seed: int = 0
    masking_keep: int | None = None
    tau_pos: float | None = None  # seconds; default 12 * w_self
    tau_neg: float | None = None
    pretext_stride: float | None = None  # seconds; default w_self
    undersample: bool = False
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        if isinstance(self.betas, list):
            self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        try:
            ModelVariant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}") from None
        if self.task not in ("ps", "rp"):
            raise ConfigError(f"task must be 'ps' or 'rp', got {self.task!r}")
        if not self.lr > 0 or not self.finetune_lr > 0 or not self.frozen_lr > 0:
            raise ConfigError("learning rates must be positive")
        if self.pretrain_epochs < 1 or self.finetune_epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2 or (self.finetune_batch_size is not None and self.finetune_batch_size < 2):
            raise ConfigError("batch sizes must be >= 2")
        if not 0 < self.r_train <= 1:
            raise ConfigError(f"r_train must be in (0, 1], got {self.r_train}")
        if self.masking_keep is not None and self.masking_keep < 1:
            raise ConfigError("masking_keep must be >= 1")
        for name in ("w_self", "w_sup"):
            samples = self.samples(getattr(self, name))
            if samples < 128:
                raise ConfigError(f"{name} gives {samples} samples; the encoder needs at least 128")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant(self.variant)

    def samples(self, seconds: float) -> int:
        return int(round(seconds * self.sample_rate))

    @property
    def self_window(self) -> int:
        return self.samples(self.w_self)

    @property
    def sup_window(self) -> int:
        return self.samples(self.w_sup)

    @property
    def tau_pos_samples(self) -> int:
        return self.samples(self.tau_pos if self.tau_pos is not None else 12 * self.w_self)

    @property
    def tau_neg_samples(self) -> int:
        return self.samples(self.tau_neg if self.tau_neg is not None else 12 * self.w_self)

    @property
    def sup_batch_size(self) -> int:
        return self.finetune_batch_size or self.batch_size


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent, named random stream derived from the top-level seed."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng([seed, tag])


def _batches(indices: np.ndarray, batch_size: int):
    """Chunk ``indices``; a trailing singleton joins the previous batch (batch norm needs 2)."""
    chunks = [indices[i:i + batch_size] for i in range(0, len(indices), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


# -- data ----------------------------------------------------------------------

@dataclass
class DataBundle:
    """Windows of every split for both window sizes."""

    split: object  # SplitSpec
    pretext: dict  # split -> [Window] at W_Self
    supervised: dict  # split -> labelled [Window] at W_Sup
    n_channels: int
    n_classes: int


def prepare_data(recordings, segments: dict, config: TrainConfig, split=None) -> DataBundle:
    """Window the (already preprocessed) recordings and assign splits.

    ``segments`` maps ``(subject, session)`` to label segments.
    """
    if not recordings:
        raise InsufficientDataError("no recordings")
    if split is None:
        sessions: dict = {}
        for r in recordings:
            sessions.setdefault(r.subject_id, []).append(r.session_id)
        split = make_splits(list(sessions), sessions, config.r_train, stream(config.seed, "splits"))
    lengths = {(r.subject_id, r.session_id): r.n_samples for r in recordings}
    stride = config.samples(config.pretext_stride) if config.pretext_stride else config.self_window

    pre, sup = [], []
    for r in recordings:
        segs = segments.get((r.subject_id, r.session_id), [])
        pre += extract_windows(r, config.self_window, stride, segs)
        sup += [w for w in extract_windows(r, config.sup_window, config.sup_window, segs) if w.label is not None]
    pretext = split.partition(pre, lengths)
    supervised = split.partition(sup, lengths)
    labels = [w.label for w in sup]
    n_classes = int(max(labels)) + 1 if labels else 0

    if config.undersample:
        rng = stream(config.seed, "undersample")
        supervised[TRAIN] = undersample_majority(supervised[TRAIN], rng)
        labelled = [w for w in pretext[TRAIN] if w.label is not None]
        pretext[TRAIN] = undersample_majority(labelled, rng)
    return DataBundle(split, pretext, supervised, recordings[0].n_channels, n_classes)


# -- pretraining ---------------------------------------------------------------

@dataclass
class PretrainResult:
    encoder_state: dict
    history: list  # one dict per epoch
    val_accuracy: float
    initial_loss: float
    model: object = None


def _ps_accuracy(model, pool, config, rng, batch_size) -> float:
    correct = total = 0
    for batch in ps_epoch(pool, batch_size, rng, config.masking_keep):
        probs = predict_proba(model, batch.inputs, config.eval_batch_size)
        correct += int(np.sum(probs.argmax(axis=1) == batch.labels))
        total += len(batch.labels)
    return correct / total


def _rp_pairs(windows, config, rng) -> list:
    pairs = []
    for _, group in sorted(_by_group(windows).items()):
        try:
            pairs += sample_rp_pairs(group, config.tau_pos_samples, config.tau_neg_samples,
                                     len(group), rng)
        except InsufficientDataError:
            log.debug("recording too short for relative positioning; skipped")
    if not pairs:
        raise InsufficientDataError("no recording can produce relative-positioning pairs")
    return pairs


def _by_group(windows) -> dict:
    out: dict = {}
    for w in windows:
        out.setdefault(w.group, []).append(w)
    return out


def _rp_inputs(pairs, idx, config, rng):
    x1 = np.stack([pairs[i].x_t.data for i in idx])
    x2 = np.stack([pairs[i].x_t2.data for i in idx])
    if config.masking_keep is not None:
        x1 = np.stack([channel_mask_array(x, config.masking_keep, rng) for x in x1])
        x2 = np.stack([channel_mask_array(x, config.masking_keep, rng) for x in x2])
    labels = np.array([1 if pairs[i].label == 1 else 0 for i in idx])
    return x1, x2, labels


class RpModel:
    """Encoder shared by both windows of a pair plus the absolute-difference head."""

    def __init__(self, encoder, head):
        self.encoder = encoder
        self.head = head

    @property
    def training(self):
        return self.encoder.training

    def train(self, mode=True):
        self.encoder.train(mode)
        self.head.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters()

    def __call__(self, x1, x2):
        n = len(x1)
        h = self.encoder(np.concatenate([x1, x2]))
        return self.head(h[:n], h[n:])


def _rp_accuracy(model, pairs, config, rng) -> float:
    model.eval()
    correct = 0
    try:
        with no_grad():
            for idx in _batches(np.arange(len(pairs)), config.eval_batch_size):
                x1, x2, labels = _rp_inputs(pairs, idx, config, rng)
                correct += int(np.sum(model(x1, x2).data.argmax(axis=1) == labels))
    finally:
        model.train()
    return correct / len(pairs)


def pretrain(config: TrainConfig, train_windows, val_windows, n_channels: int,
             checkpoint_dir=None) -> PretrainResult:
    """Train ``C_Self o E`` on the pretext task and report pretext validation accuracy."""
    if not train_windows:
        raise InsufficientDataError("no pretext training windows")
    init_rng = stream(config.seed, "init-pretrain")
    rng = stream(config.seed, "pretrain")
    encoder = FcnEncoder(n_channels, init_rng)
    features = encoder.out_channels * encoder.output_length(config.self_window)
    if config.task == "ps":
        model = Classifier(encoder, SoftmaxHead(features, 2, init_rng))
    else:
        model = RpModel(encoder, RpHead(features, init_rng))
    opt = Adam(model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps)

    pool = group_pool(train_windows)
    val_pool = group_pool(val_windows) if val_windows else None
    history, initial_loss = [], None
    for epoch in range(1, config.pretrain_epochs + 1):
        model.train()
        losses = []
        if config.task == "ps":
            for batch in ps_epoch(pool, config.batch_size, rng, config.masking_keep):
                probs = model(batch.inputs)
                loss = cross_entropy(probs, one_hot(batch.labels, 2))
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
                if initial_loss is None:
                    initial_loss = losses[0]
        else:
            pairs = _rp_pairs(train_windows, config, rng)
            for idx in _batches(rng.permutation(len(pairs)), config.batch_size):
                x1, x2, labels = _rp_inputs(pairs, idx, config, rng)
                loss = cross_entropy(model(x1, x2), one_hot(labels, 2))
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
                if initial_loss is None:
                    initial_loss = losses[0]

        val_acc = float("nan")
        if val_pool:
            # the same validation pairs every epoch
            val_rng = stream(config.seed, "pretext-validation")
            if config.task == "ps":
                val_acc = _ps_accuracy(model, val_pool, config, val_rng, config.batch_size)
            else:
                val_acc = _rp_accuracy(model, _rp_pairs(val_windows, config, val_rng), config, val_rng)
        record = {"stage": "pretrain", "epoch": epoch, "loss": float(np.mean(losses)),
                  "pretext_val_accuracy": val_acc}
        history.append(record)
        log.info("pretrain epoch %d loss %.4f pretext val acc %.3f", epoch, record["loss"], val_acc)
        if checkpoint_dir is not None and config.checkpoint_every_epoch:
            save_checkpoint(os.path.join(checkpoint_dir, f"pretrain_epoch{epoch:02d}.npz"),
                            _state(model), opt.state_dict(), {"stage": "pretrain", "epoch": epoch})

    return PretrainResult(encoder.state_dict(), history, history[-1]["pretext_val_accuracy"],
                          float(initial_loss), model)


def _state(model) -> dict:
    state = {f"encoder.{k}": v for k, v in model.encoder.state_dict().items()}
    state.update({f"head.{k}": v for k, v in model.head.state_dict().items()})
    return state


# -- fine-tuning ---------------------------------------------------------------

@dataclass
class FinetuneResult:
    model: Classifier
    history: list
    initial_encoder_state: dict
    encoder_trained: bool


def finetune(config: TrainConfig, encoder_state, train_windows, n_channels: int, n_classes: int,
             variant: ModelVariant | str | None = None, val_windows=None,
             checkpoint_dir=None) -> FinetuneResult:
    """Supervised training of ``C_Sup o E`` for one of the four variants.

    ``PhaseSwap`` and ``PSFrozen`` start the encoder from ``encoder_state``;
    ``Supervised`` and ``Random`` start from a fresh random encoder.
    ``Random`` and ``PSFrozen`` keep the encoder fixed, in eval mode, and
    only train the head.
    """
    variant = ModelVariant(variant or config.variant)
    labelled = [w for w in train_windows if w.label is not None]
    if not labelled:
        raise InsufficientDataError("no labelled training windows")
    if variant.pretrained and encoder_state is None:
        raise ConfigError(f"variant {variant.value} needs a pretrained encoder checkpoint")

    init_rng = stream(config.seed, "init-finetune")
    rng = stream(config.seed, "finetune")
    encoder = FcnEncoder(n_channels, init_rng)
    if variant.pretrained:
        encoder.load_state_dict(encoder_state)
    head = SoftmaxHead(encoder.out_channels * encoder.output_length(config.sup_window), n_classes, init_rng)
    model = Classifier(encoder, head)
    initial = encoder.state_dict()

    inputs = np.stack([w.data for w in labelled])
    labels = np.array([w.label for w in labelled], dtype=np.int64)
    targets = one_hot(labels, n_classes)

    if variant.frozen:
        encoder.eval()
        with no_grad():
            feats = np.concatenate([
                encoder(inputs[i:i + config.eval_batch_size]).data
                for i in range(0, len(inputs), config.eval_batch_size)
            ])
        params, lr = head.parameters(), config.frozen_lr
    else:
        params = model.parameters()
        lr = config.finetune_lr if variant is ModelVariant.PHASE_SWAP else config.lr
    opt = Adam(params, lr=lr, betas=config.betas, eps=config.eps)

    history = []
    for epoch in range(1, config.finetune_epochs + 1):
        schedule = rebalance(labels, rng, n_classes=None)
        losses = []
        for idx in _batches(schedule, config.sup_batch_size):
            if variant.frozen:
                probs = head(Tensor(feats[idx]))
            else:
                model.train()
                probs = model(inputs[idx])
            loss = cross_entropy(probs, targets[idx])
            opt.zero_grad()
            loss.backward()
            if variant.frozen:
                assert all(p.grad is None for p in encoder.parameters()), "gradient reached a frozen encoder"
            opt.step()
            losses.append(loss.item())
        record = {"stage": "finetune", "epoch": epoch, "loss": float(np.mean(losses))}
        if val_windows:
            record["validation_balanced_accuracy"] = evaluate(model, val_windows, config.eval_batch_size).balanced_accuracy
        history.append(record)
        log.info("finetune %s epoch %d loss %.4f", variant.value, epoch, record["loss"])
        if checkpoint_dir is not None and config.checkpoint_every_epoch:
            save_checkpoint(os.path.join(checkpoint_dir, f"finetune_epoch{epoch:02d}.npz"),
                            _state(model), opt.state_dict(),
                            {"stage": "finetune", "epoch": epoch, "variant": variant.value})
    model.eval()
    return FinetuneResult(model, history, initial, not variant.frozen)


# -- full runs -----------------------------------------------------------------

@dataclass
class RunResult:
    config: TrainConfig
    metrics: dict  # split -> Metrics (splits with no windows are absent)
    pretrain: PretrainResult | None
    finetune: FinetuneResult
    split: object
    history: list = field(default_factory=list)

    def balanced_accuracies(self) -> dict:
        return {name: m.balanced_accuracy for name, m in self.metrics.items()}


def run_experiment(config: TrainConfig, recordings, segments: dict, run_dir=None,
                   encoder_state=None, pretrain_result=None) -> RunResult:
    """Pretrain (when the variant needs it), fine-tune, and evaluate every split.

    A precomputed ``pretrain_result`` may be passed to share one pretraining
    between variants. With ``run_dir``, the config, split manifest,
    checkpoints and a JSON-lines metrics log are written there.
    """
    variant = config.model_variant
    ckpt_dir = None
    if run_dir is not None:
        ckpt_dir = os.path.join(run_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

    data = prepare_data(recordings, segments, config)
    if run_dir is not None:
        data.split.save(os.path.join(run_dir, "split.json"))

    pre = pretrain_result
    if variant.pretrained and encoder_state is None:
        if pre is None:
            pre = pretrain(config, data.pretext[TRAIN], data.pretext[VALIDATION], data.n_channels,
                           os.path.join(run_dir, "pretrain") if run_dir else None)
        encoder_state = pre.encoder_state
    if run_dir is not None and variant.pretrained:
        os.makedirs(os.path.join(run_dir, "pretrain"), exist_ok=True)
        save_checkpoint(os.path.join(run_dir, "pretrain", "encoder.npz"), encoder_state, None,
                        {"stage": "pretrain", "final": True})

    ft = finetune(config, encoder_state, data.supervised[TRAIN], data.n_channels, data.n_classes,
                  variant, data.supervised[VALIDATION], ckpt_dir)

    metrics = {}
    for name in SPLITS:
        if data.supervised[name]:
            metrics[name] = evaluate(ft.model, data.supervised[name], config.eval_batch_size)

    history = (pre.history if (pre is not None and variant.pretrained) else []) + ft.history
    final = {"stage": "final", "epoch": config.finetune_epochs}
    records = list(history)
    for name, m in metrics.items():
        records.append({**final, "split": name, "balanced_accuracy": m.balanced_accuracy, "n": m.n})
    if run_dir is not None:
        with open(os.path.join(run_dir, "metrics.jsonl"), "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(os.path.join(run_dir, "report.json"), "w") as fh:
            json.dump({
                "variant": variant.value, "r_train": config.r_train, "w_self": config.w_self,
                "seed": config.seed,
                "pretext_val_accuracy": pre.val_accuracy if (pre is not None and variant.pretrained) else None,
                "splits": {n: m.to_dict() for n, m in metrics.items()},
            }, fh, indent=2, sort_keys=True)
        with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
            json.dump({
                "config_hash": config.hash(), "seed": config.seed, "code_version": __version__,
                "split_manifest": "split.json", "config": "config.json", "metrics": "metrics.jsonl",
                "report": "report.json", "checkpoints": "checkpoints",
                "pretrain": "pretrain" if variant.pretrained else None,
            }, fh, indent=2, sort_keys=True)
    return RunResult(config, metrics, pre if variant.pretrained else None, ft, data.split, records)
