"""Two-phase hierarchical decoder.

Phase 1 trains one task bundle per phonological category: the covariance
image feeds the spatial CNN, its flattened lower triangle feeds the temporal
CNN, their penultimate features are fused, min-max scaled, compressed by the
autoencoder, and the bottleneck code is classified by a boosted-tree head.

Phase 2 stacks the six bottleneck codes of a trial into a (6, B) matrix
(fixed category order) and trains the same bundle shape on it for the 11-way
token decision. Phase-1 models are frozen before any phase-2 feature is
produced, so no label information leaks across phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import boosting
from .autograd import DTYPE
from .boosting import GbtModel, GbtParams
from .covariance import EegTrial, channel_cross_covariance, lower_triangular_flatten, \
    standardize_channels
from .exceptions import ShapeError, ValidationError
from .labels import PHON_ORDER, TOKEN_INDEX, TOKEN_ORDER, PhonCategory, TokenLabel, \
    derive_phonological_labels
from .networks import DeepAutoencoder, MinMaxScaler, SpatialCnn, TemporalCnn, \
    TrainConfig, extract_penultimate, fuse, train_autoencoder, train_supervised

_REFERENCE_FUSED_WIDTH = 2915  # 1024 CNN + 1891 temporal features at full scale


@dataclass
class CnnSettings:
    epochs: int = 50
    learning_rate: float = 1e-3
    conv_channels: tuple[int, int] = (32, 64)
    kernel: int = 3
    feature_width: int = 1024
    dense_widths: tuple[int, int] = (64, 128)
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5


@dataclass
class TcnnSettings:
    epochs: int = 50
    learning_rate: float = 2e-3
    kernel: int = 5
    layers: int = 6
    hidden_channels: int = 16
    dropout_mid: float = 0.25
    dropout_late: float = 0.5


@dataclass
class DaeSettings:
    epochs: int = 200
    learning_rate: float = 1e-3
    hidden_widths: tuple[int, int] | None = None  # None: scale with input width
    bottleneck: int = 256
    dropout: float = 0.25


@dataclass
class PipelineConfig:
    cnn: CnnSettings = field(default_factory=CnnSettings)
    tcnn: TcnnSettings = field(default_factory=TcnnSettings)
    dae: DaeSettings = field(default_factory=DaeSettings)
    gbt: GbtParams = field(default_factory=GbtParams)
    batch_size: int = 32
    covariance_lag: int = 0
    seed: int = 0
    categories: tuple[PhonCategory, ...] = PHON_ORDER
    phase2_layout: str = "image"  # or "channels"

    def __post_init__(self):
        if self.phase2_layout not in ("image", "channels"):
            raise ValidationError(
                f"phase2_layout must be 'image' or 'channels', got {self.phase2_layout!r}"
            )
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    @classmethod
    def desk_scale(cls, bottleneck: int = 16, epochs: int = 5, rounds: int = 100,
                   seed: int = 0) -> "PipelineConfig":
        """Shrunken widths for fast CPU runs on small synthetic corpora."""
        return cls(
            cnn=CnnSettings(epochs=epochs, feature_width=64),
            tcnn=TcnnSettings(epochs=epochs, hidden_channels=8),
            dae=DaeSettings(epochs=epochs, bottleneck=bottleneck),
            gbt=GbtParams(rounds=rounds, seed=seed),
            batch_size=32,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "cnn": {
                "epochs": self.cnn.epochs, "learning_rate": self.cnn.learning_rate,
                "conv_channels": list(self.cnn.conv_channels), "kernel": self.cnn.kernel,
                "feature_width": self.cnn.feature_width,
                "dense_widths": list(self.cnn.dense_widths),
                "dropout_conv": self.cnn.dropout_conv, "dropout_dense": self.cnn.dropout_dense,
            },
            "tcnn": {
                "epochs": self.tcnn.epochs, "learning_rate": self.tcnn.learning_rate,
                "kernel": self.tcnn.kernel, "layers": self.tcnn.layers,
                "hidden_channels": self.tcnn.hidden_channels,
                "dropout_mid": self.tcnn.dropout_mid, "dropout_late": self.tcnn.dropout_late,
            },
            "dae": {
                "epochs": self.dae.epochs, "learning_rate": self.dae.learning_rate,
                "hidden_widths": list(self.dae.hidden_widths) if self.dae.hidden_widths else None,
                "bottleneck": self.dae.bottleneck, "dropout": self.dae.dropout,
            },
            "gbt": self.gbt.to_dict(),
            "batch_size": self.batch_size,
            "covariance_lag": self.covariance_lag,
            "seed": self.seed,
            "categories": [c.value for c in self.categories],
            "phase2_layout": self.phase2_layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        def sub(key, klass, tuples=()):
            kwargs = dict(d.get(key, {}))
            for name in tuples:
                if kwargs.get(name) is not None:
                    kwargs[name] = tuple(kwargs[name])
            return klass(**{k: v for k, v in kwargs.items()
                            if k in klass.__dataclass_fields__})

        return cls(
            cnn=sub("cnn", CnnSettings, ("conv_channels", "dense_widths")),
            tcnn=sub("tcnn", TcnnSettings),
            dae=sub("dae", DaeSettings, ("hidden_widths",)),
            gbt=GbtParams.from_dict(d.get("gbt", {})),
            batch_size=d.get("batch_size", 32),
            covariance_lag=d.get("covariance_lag", 0),
            seed=d.get("seed", 0),
            categories=tuple(PhonCategory(c) for c in d.get(
                "categories", [c.value for c in PHON_ORDER])),
            phase2_layout=d.get("phase2_layout", "image"),
        )


@dataclass
class TaskModel:
    """Everything one classification task needs at inference time."""
    cnn: SpatialCnn
    tcnn: TemporalCnn
    dae: DeepAutoencoder
    scaler: MinMaxScaler
    gbt: GbtModel

    @property
    def bottleneck(self) -> int:
        return self.dae.bottleneck


@dataclass
class PipelineModel:
    categories: tuple[PhonCategory, ...]
    tasks: dict[PhonCategory, TaskModel]
    phase2: TaskModel
    config: PipelineConfig
    channels: int
    lag: int

    @property
    def bottleneck(self) -> int:
        return self.phase2.dae.bottleneck if not self.tasks else \
            next(iter(self.tasks.values())).bottleneck


def trial_features(trials, lag: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Covariance images (N, C, C, 1) and flattened triangles (N, L, 1)."""
    imgs, flats = [], []
    for trial in trials:
        cov = channel_cross_covariance(standardize_channels(trial), lag)
        imgs.append(cov.values)
        flats.append(lower_triangular_flatten(cov))
    imgs_a = np.stack(imgs).astype(DTYPE)[..., None]
    flats_a = np.stack(flats).astype(DTYPE)[..., None]
    return imgs_a, flats_a


def _dae_hidden(input_width: int, bottleneck: int,
                override: tuple[int, int] | None) -> tuple[int, int]:
    if override is not None:
        return override
    if input_width >= 1024:
        return (1024, 512)
    # keep the reference hidden/input proportions on narrow inputs
    w1 = max(2 * bottleneck, round(input_width * 1024 / _REFERENCE_FUSED_WIDTH))
    w2 = max(bottleneck, round(input_width * 512 / _REFERENCE_FUSED_WIDTH))
    return (max(w1, w2), w2)


def _seed_key(config_seed: int, task_key: int, component: int) -> int:
    ss = np.random.SeedSequence(entropy=config_seed, spawn_key=(task_key, component))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _train_task(imgs: np.ndarray, flats: np.ndarray, y: np.ndarray,
                n_classes: int, config: PipelineConfig, task_key: int) -> TaskModel:
    n = imgs.shape[0]
    onehot = np.eye(n_classes, dtype=DTYPE)[y]
    cnn = SpatialCnn(
        imgs.shape[1:3], n_classes=n_classes,
        conv_channels=config.cnn.conv_channels, kernel=config.cnn.kernel,
        feature_width=config.cnn.feature_width, dense_widths=config.cnn.dense_widths,
        dropout_conv=config.cnn.dropout_conv, dropout_dense=config.cnn.dropout_dense,
        in_channels=imgs.shape[3], seed=_seed_key(config.seed, task_key, 1),
    )
    train_supervised(cnn, imgs, onehot, TrainConfig(
        epochs=config.cnn.epochs, learning_rate=config.cnn.learning_rate,
        batch_size=config.batch_size, seed=_seed_key(config.seed, task_key, 2)))
    tcnn = TemporalCnn(
        flats.shape[1], n_classes=n_classes, kernel=config.tcnn.kernel,
        n_layers=config.tcnn.layers, hidden_channels=config.tcnn.hidden_channels,
        dropout_mid=config.tcnn.dropout_mid, dropout_late=config.tcnn.dropout_late,
        in_channels=flats.shape[2], seed=_seed_key(config.seed, task_key, 3),
    )
    train_supervised(tcnn, flats, onehot, TrainConfig(
        epochs=config.tcnn.epochs, learning_rate=config.tcnn.learning_rate,
        batch_size=config.batch_size, seed=_seed_key(config.seed, task_key, 4)))
    fused = fuse(extract_penultimate(cnn, imgs), extract_penultimate(tcnn, flats))
    scaler = MinMaxScaler().fit(fused)
    scaled = scaler.transform(fused)
    dae = DeepAutoencoder(
        fused.shape[1],
        hidden=_dae_hidden(fused.shape[1], config.dae.bottleneck, config.dae.hidden_widths),
        bottleneck=config.dae.bottleneck, dropout=config.dae.dropout,
        seed=_seed_key(config.seed, task_key, 5),
    )
    train_autoencoder(dae, scaled, TrainConfig(
        epochs=config.dae.epochs, learning_rate=config.dae.learning_rate,
        batch_size=config.batch_size, seed=_seed_key(config.seed, task_key, 6)))
    codes = dae.encode(scaled)
    gbt = boosting.fit(codes, y, replace(
        config.gbt, seed=_seed_key(config.seed, task_key, 7) % (2 ** 32)))
    return TaskModel(cnn=cnn, tcnn=tcnn, dae=dae, scaler=scaler, gbt=gbt)


def task_codes(task: TaskModel, imgs: np.ndarray, flats: np.ndarray) -> np.ndarray:
    fused = fuse(extract_penultimate(task.cnn, imgs),
                 extract_penultimate(task.tcnn, flats))
    return task.dae.encode(task.scaler.transform(fused))


def task_probabilities(task: TaskModel, imgs: np.ndarray, flats: np.ndarray) -> np.ndarray:
    return task.gbt.predict_proba(task_codes(task, imgs, flats))


def _phase1_targets(trials, categories) -> np.ndarray:
    rows = []
    for trial in trials:
        bits = derive_phonological_labels(trial.token)
        rows.append([bits[PHON_ORDER.index(c)] for c in categories])
    return np.asarray(rows, dtype=np.int64)


def train_phase1(train_trials, config: PipelineConfig, dev_trials=None):
    """Train one TaskModel per configured category.

    Returns (tasks, dev_accuracy) where dev_accuracy maps each category to
    the boosted head's accuracy on `dev_trials` (on the training trials when
    no dev set is supplied).
    """
    if not train_trials:
        raise ValidationError("empty training set")
    targets = _phase1_targets(train_trials, config.categories)
    for j, cat in enumerate(config.categories):
        present = np.unique(targets[:, j])
        if len(present) < 2:
            raise ValidationError(
                f"task {cat.value}: only class {int(present[0])} present in training data"
            )
    imgs, flats = trial_features(train_trials, config.covariance_lag)
    eval_trials = dev_trials if dev_trials else train_trials
    eval_imgs, eval_flats = (imgs, flats) if eval_trials is train_trials else \
        trial_features(eval_trials, config.covariance_lag)
    eval_targets = _phase1_targets(eval_trials, config.categories)
    tasks: dict[PhonCategory, TaskModel] = {}
    dev_accuracy: dict[PhonCategory, float] = {}
    for j, cat in enumerate(config.categories):
        task = _train_task(imgs, flats, targets[:, j], 2, config, task_key=j)
        tasks[cat] = task
        pred = task_probabilities(task, eval_imgs, eval_flats).argmax(axis=1)
        dev_accuracy[cat] = float((pred == eval_targets[:, j]).mean())
    return tasks, dev_accuracy


def stack_latents(trial: EegTrial, tasks: dict[PhonCategory, TaskModel],
                  categories: tuple[PhonCategory, ...] = PHON_ORDER,
                  lag: int = 0) -> np.ndarray:
    """Bottleneck codes of one trial stacked in fixed category order."""
    imgs, flats = trial_features([trial], lag)
    return stack_latents_batch(imgs, flats, tasks, categories)[0]


def stack_latents_batch(imgs: np.ndarray, flats: np.ndarray,
                        tasks: dict[PhonCategory, TaskModel],
                        categories: tuple[PhonCategory, ...]) -> np.ndarray:
    widths = {cat: tasks[cat].bottleneck for cat in categories}
    if len(set(widths.values())) > 1:
        raise ValidationError(f"bottleneck widths differ across tasks: {widths}")
    rows = [task_codes(tasks[cat], imgs, flats) for cat in categories]
    return np.stack(rows, axis=1)  # (N, n_tasks, B)


def _phase2_views(stacks: np.ndarray, layout: str) -> tuple[np.ndarray, np.ndarray]:
    n, rows, b = stacks.shape
    if layout == "image":
        imgs = stacks[..., None].astype(DTYPE)  # (N, rows, B, 1)
        flats = stacks.reshape(n, rows * b, 1).astype(DTYPE)
    else:  # "channels": code width as time, categories as channels
        imgs = stacks.transpose(0, 2, 1)[:, None, :, :].astype(DTYPE)  # (N, 1, B, rows)
        flats = stacks.transpose(0, 2, 1).astype(DTYPE)  # (N, B, rows)
    return imgs, flats


def train_phase2(stacks: np.ndarray, token_indices: np.ndarray,
                 config: PipelineConfig) -> TaskModel:
    """Train the 11-way bundle on stacked phase-1 codes (N, n_tasks, B)."""
    stacks = np.asarray(stacks)
    if stacks.ndim != 3 or stacks.shape[0] == 0:
        raise ValidationError(f"expected nonempty (N, tasks, B) stacks, got {stacks.shape}")
    y = np.asarray(token_indices, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValidationError("phase 2 needs at least two distinct tokens")
    imgs, flats = _phase2_views(stacks, config.phase2_layout)
    return _train_task(imgs, flats, y, len(TOKEN_ORDER), config, task_key=100)


def train_pipeline(train_trials, config: PipelineConfig, dev_trials=None):
    """Full two-phase training. Returns (model, summary)."""
    channels = train_trials[0].channels
    for trial in train_trials:
        if trial.channels != channels:
            raise ValidationError("all trials must share the channel count")
    tasks, phase1_dev = train_phase1(train_trials, config, dev_trials)
    imgs, flats = trial_features(train_trials, config.covariance_lag)
    stacks = stack_latents_batch(imgs, flats, tasks, config.categories)
    y = np.asarray([TOKEN_INDEX[t.token] for t in train_trials], dtype=np.int64)
    phase2 = train_phase2(stacks, y, config)
    model = PipelineModel(
        categories=config.categories, tasks=tasks, phase2=phase2,
        config=config, channels=channels, lag=config.covariance_lag,
    )
    summary = {"phase1_dev_accuracy": {c.value: a for c, a in phase1_dev.items()}}
    if dev_trials:
        pred, _, _ = predict_tokens(model, dev_trials)
        truth = np.asarray([TOKEN_INDEX[t.token] for t in dev_trials])
        summary["phase2_dev_accuracy"] = float((pred == truth).mean())
    return model, summary


def predict_tokens(model: PipelineModel, trials):
    """Batched inference: (token indices, 11-way distributions, per-task
    positive-class probabilities)."""
    for trial in trials:
        if trial.channels != model.channels:
            raise ValidationError(
                f"trial has {trial.channels} channels; model was trained with {model.channels}"
            )
    imgs, flats = trial_features(trials, model.lag)
    phon = np.column_stack([
        task_probabilities(model.tasks[cat], imgs, flats)[:, 1]
        for cat in model.categories
    ])
    stacks = stack_latents_batch(imgs, flats, model.tasks, model.categories)
    p2_imgs, p2_flats = _phase2_views(stacks, model.config.phase2_layout)
    dist = task_probabilities(model.phase2, p2_imgs, p2_flats)
    return dist.argmax(axis=1), dist, phon


def predict_token(trial: EegTrial, model: PipelineModel):
    """Single-trial inference: (TokenLabel, 11-way distribution, six
    phonological probabilities in category order)."""
    idx, dist, phon = predict_tokens(model, [trial])
    return TOKEN_ORDER[int(idx[0])], dist[0], phon[0]
