"""Three-stage training: source pretraining, alternating adversarial
adaptation, and optional self-distillation, plus evaluation.

Adaptation alternates two updates per iteration. First the discriminator
learns to assign features to (domain, class) channels, supervised by
domain encodings recomputed from the current classifier and treated as
constants. Then, with the discriminator frozen, the extractor and
classifier take a task-loss step plus a weighted confusion step that pulls
target features toward the source channels of their own class.

Every stream of randomness (data, inits, batch order per stage and domain)
is derived from the single configured seed, so full runs are reproducible
bitwise.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Adam, SgdMomentum, Tensor, poly_lr, softmax_t, zero_grads
from .datagen import SOURCE, TARGET, Dataset, ShiftSpec, gen_gaussian_domains, load_csv_dataset
from .encodings import batch_encodings
from .errors import ConfigError, DataError, DegenerateBatchError
from .losses import class_adv_loss, class_disc_loss, distill_loss, task_loss
from .analysis import ccd_for_model
from .nets import ModelBundle, build_bundle, classify, discriminate, feature_extract, save_checkpoint

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1

# Seed-stream tags: every consumer of randomness gets its own derived stream.
STREAM_DATA = 0
STREAM_PRETRAIN = 1
STREAM_ADAPT = 2
STREAM_DISTILL = 3
STREAM_STUDENT = 4
STREAM_CCD = 5


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, dtype=np.uint64)[0])


@dataclass
class TrainConfig:
    """One flat document holding every knob of the pipeline."""

    num_classes: int = 4
    input_dim: int = 2
    feature_dim: int = 16
    extractor_hidden: list[int] = field(default_factory=lambda: [64, 64])
    disc_hidden: list[int] = field(default_factory=lambda: [64, 32])
    leaky_slope: float = 0.2

    pretrain_iters: int = 2000
    adapt_iters: int = 4000
    distill_iters: int = 0
    batch_size: int = 64
    source_batch: int = 32
    target_batch: int = 32

    lambda_adv: float = 0.001
    strategy: str = "soft"                   # binary | hard | soft
    hard_threshold: float = 0.9
    temperature: float = 1.8
    clip: float = 0.9
    source_ground_truth_encodings: bool = False
    distill_confidence_filter: float | None = None

    sgd_lr: float = 2.5e-4
    sgd_momentum: float = 0.9
    sgd_weight_decay: float = 1e-4
    poly_power: float = 0.9
    adam_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99

    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    log_every: int = 100
    checkpoint_every: int = 0        # 0 = final checkpoint only

    gen_n_per_class: int = 500
    gen_radius: float = 2.0
    gen_sigma: float = 0.35
    gen_rotation_deg: float = 30.0
    gen_translation: list[float] = field(default_factory=lambda: [0.5, 0.5])
    gen_scale: list[float] | None = None
    data_csv: str | None = None

    ccd_cap: int | None = 2000
    ccd_domain: str = "both"

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        """Strict parse: unknown keys are an error, listed by name."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        problems = []
        if self.num_classes < 1:
            problems.append("num_classes must be >= 1")
        if self.lambda_adv < 0:
            problems.append("lambda_adv must be >= 0")
        if min(self.pretrain_iters, self.adapt_iters, self.distill_iters) < 0:
            problems.append("iteration counts must be >= 0")
        if self.source_batch + self.target_batch != self.batch_size:
            problems.append("source_batch + target_batch must equal batch_size")
        if min(self.source_batch, self.target_batch) < 1:
            problems.append("per-domain batches must be >= 1")
        if self.strategy not in ("binary", "hard", "soft"):
            problems.append(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.hard_threshold <= 1.0:
            problems.append("hard_threshold must be in (0, 1]")
        if self.temperature <= 0:
            problems.append("temperature must be positive")
        if not 0.0 < self.clip <= 1.0:
            problems.append("clip must be in (0, 1]")
        if self.ccd_domain not in ("both", "source", "target"):
            problems.append(f"unknown ccd_domain {self.ccd_domain!r}")
        if not self.seeds:
            problems.append("seeds must be non-empty")
        if problems:
            raise ConfigError("; ".join(problems))

    def shift_spec(self) -> ShiftSpec:
        return ShiftSpec(
            rotation=np.deg2rad(self.gen_rotation_deg),
            translation=np.asarray(self.gen_translation, dtype=np.float64),
            scale=None if self.gen_scale is None else np.asarray(self.gen_scale),
        )

    def disc_classes(self) -> int:
        return 1 if self.strategy == "binary" else self.num_classes


def dataset_from_config(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    """Load the configured CSV or generate the synthetic benchmark pair."""
    if cfg.data_csv is not None:
        data = load_csv_dataset(cfg.data_csv)
        source, target = data.domain_split()
        if len(source) == 0 or len(target) == 0:
            raise DataError(f"{cfg.data_csv} must contain both domains")
        return source, target
    return gen_gaussian_domains(
        cfg.num_classes, cfg.input_dim, cfg.gen_n_per_class, cfg.gen_radius,
        cfg.gen_sigma, cfg.shift_spec(), derive_seed(cfg.seed, STREAM_DATA))


def build_from_config(cfg: TrainConfig, seed: int | None = None) -> ModelBundle:
    return build_bundle(
        cfg.input_dim, cfg.num_classes, cfg.seed if seed is None else seed,
        extractor_hidden=tuple(cfg.extractor_hidden), feature_dim=cfg.feature_dim,
        disc_hidden=tuple(cfg.disc_hidden), slope=cfg.leaky_slope,
        disc_classes=cfg.disc_classes())


class BatchSampler:
    """Seeded epoch shuffles yielding fixed-size index batches."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise DataError("cannot sample batches from an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._queue = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while len(self._queue) < self.batch_size:
            self._queue = np.concatenate([self._queue, self.rng.permutation(self.n)])
        batch, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return batch


@contextmanager
def frozen(params):
    """Temporarily exclude parameters from graph construction."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def _json_safe(values):
    """NaN entries (skipped steps, absent classes) become JSON null."""
    return [None if isinstance(v, float) and np.isnan(v) else v for v in values]


@dataclass
class StageTrace:
    stage: str
    losses: dict[str, list[float]]
    lrs: dict[str, list[float]]
    skipped_disc_steps: int = 0
    skipped_gen_steps: int = 0

    @property
    def skipped_iterations(self) -> int:
        return max(self.skipped_disc_steps, self.skipped_gen_steps)

    def to_dict(self) -> dict:
        return {"stage": self.stage,
                "losses": {k: _json_safe(v) for k, v in self.losses.items()},
                "lrs": self.lrs,
                "skipped_disc_steps": self.skipped_disc_steps,
                "skipped_gen_steps": self.skipped_gen_steps}


def _require_labeled(dataset: Dataset, what: str):
    if len(dataset) == 0:
        raise DataError(f"{what} dataset is empty")
    if (dataset.y < 0).any():
        raise DataError(f"{what} dataset must be fully labeled")


def _cadence(cfg: TrainConfig, stage: str, it: int, bundle: ModelBundle,
             checkpoint_dir, **losses):
    done = it + 1
    if cfg.log_every > 0 and done % cfg.log_every == 0:
        shown = " ".join(f"{k}={v:.4f}" for k, v in losses.items()
                         if not np.isnan(v))
        logger.info("%s iter %d: %s", stage, done, shown)
    if checkpoint_dir is not None and cfg.checkpoint_every > 0 \
            and done % cfg.checkpoint_every == 0:
        path = Path(checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(bundle, path / f"{stage}_iter{done}.json")


def _class_probs(bundle: ModelBundle, x: Tensor) -> Tensor:
    return softmax_t(classify(bundle.classifier, feature_extract(bundle.extractor, x)), 1.0)


def pretrain_source(cfg: TrainConfig, source: Dataset,
                    checkpoint_dir=None) -> tuple[ModelBundle, StageTrace]:
    """Train extractor and classifier on labeled source data only."""
    _require_labeled(source, "source")
    bundle = build_from_config(cfg)
    params = bundle.task_params()
    opt = SgdMomentum(params, cfg.sgd_momentum, cfg.sgd_weight_decay)
    sampler = BatchSampler(len(source), cfg.source_batch,
                           derive_rng(cfg.seed, STREAM_PRETRAIN, SOURCE))
    trace = StageTrace("pretrain", {"task": []}, {"gen": []})
    for it in range(cfg.pretrain_iters):
        lr = poly_lr(it, cfg.pretrain_iters, cfg.sgd_lr, cfg.poly_power)
        idx = sampler.next()
        loss = task_loss(_class_probs(bundle, Tensor(source.x[idx])), source.y[idx])
        zero_grads(params)
        loss.value.backward()
        opt.step(lr)
        trace.losses["task"].append(loss.item())
        trace.lrs["gen"].append(lr)
        _cadence(cfg, "pretrain", it, bundle, checkpoint_dir, task=loss.item())
    return bundle, trace


def _batch_encodings_for(cfg: TrainConfig, logits: np.ndarray, domain: int,
                         true_labels: np.ndarray | None = None):
    return batch_encodings(
        logits, domain, cfg.strategy, hard_threshold=cfg.hard_threshold,
        temperature=cfg.temperature, clip=cfg.clip, true_labels=true_labels)


def adapt(cfg: TrainConfig, bundle: ModelBundle, source: Dataset,
          target: Dataset, checkpoint_dir=None) -> StageTrace:
    """Alternate discriminator and task-network updates; target labels unused.

    Encodings are rebuilt each iteration from the current classifier and
    detached. A batch whose valid encodings vanish on one side skips the
    affected update and is counted, rather than aborting the run.
    """
    _require_labeled(source, "source")
    if len(target) == 0:
        raise DataError("target dataset is empty")
    task_params = bundle.task_params()
    disc_params = bundle.discriminator.params()
    opt_g = SgdMomentum(task_params, cfg.sgd_momentum, cfg.sgd_weight_decay)
    opt_d = Adam(disc_params, (cfg.adam_beta1, cfg.adam_beta2))
    src_sampler = BatchSampler(len(source), cfg.source_batch,
                               derive_rng(cfg.seed, STREAM_ADAPT, SOURCE))
    tgt_sampler = BatchSampler(len(target), cfg.target_batch,
                               derive_rng(cfg.seed, STREAM_ADAPT, TARGET))
    trace = StageTrace("adapt", {"task": [], "disc": [], "adv": []},
                       {"gen": [], "disc": []})

    for it in range(cfg.adapt_iters):
        lr_g = poly_lr(it, cfg.adapt_iters, cfg.sgd_lr, cfg.poly_power)
        lr_d = poly_lr(it, cfg.adapt_iters, cfg.adam_lr, cfg.poly_power)
        si, ti = src_sampler.next(), tgt_sampler.next()
        xs, ys, xt = source.x[si], source.y[si], target.x[ti]

        # Supervision for this iteration: current predictions, no graph.
        with frozen(task_params):
            feats_s = feature_extract(bundle.extractor, xs)
            feats_t = feature_extract(bundle.extractor, xt)
            logits_s = classify(bundle.classifier, feats_s).values
            logits_t = classify(bundle.classifier, feats_t).values
        enc_s = _batch_encodings_for(
            cfg, logits_s, SOURCE,
            true_labels=ys if cfg.source_ground_truth_encodings else None)
        enc_t = _batch_encodings_for(cfg, logits_t, TARGET)

        # Step 1: discriminator learns the (domain, class) channels.
        disc_val = float("nan")
        try:
            joint_s = discriminate(bundle.discriminator, feats_s)
            joint_t = discriminate(bundle.discriminator, feats_t)
            loss_d = class_disc_loss(joint_s, enc_s, joint_t, enc_t)
            zero_grads(disc_params)
            loss_d.value.backward()
            opt_d.step(lr_d)
            disc_val = loss_d.item()
        except DegenerateBatchError:
            trace.skipped_disc_steps += 1

        # Step 2: extractor/classifier step on task loss plus confusion term.
        task_val = adv_val = float("nan")
        probs_s = _class_probs(bundle, Tensor(xs))
        seg = task_loss(probs_s, ys)
        total = seg.value
        degenerate = False
        if cfg.lambda_adv > 0:
            feats_t_live = feature_extract(bundle.extractor, Tensor(xt))
            with frozen(disc_params):
                joint_t_live = discriminate(bundle.discriminator, feats_t_live)
            try:
                adv = class_adv_loss(joint_t_live, enc_t)
                total = total + adv.value * cfg.lambda_adv
                adv_val = adv.item()
            except DegenerateBatchError:
                degenerate = True
                trace.skipped_gen_steps += 1
        if not degenerate:
            zero_grads(task_params)
            total.backward()
            opt_g.step(lr_g)
            task_val = seg.item()

        trace.losses["task"].append(task_val)
        trace.losses["disc"].append(disc_val)
        trace.losses["adv"].append(adv_val)
        trace.lrs["gen"].append(lr_g)
        trace.lrs["disc"].append(lr_d)
        _cadence(cfg, "adapt", it, bundle, checkpoint_dir,
                 task=task_val, disc=disc_val, adv=adv_val)
    return trace


def self_distill(cfg: TrainConfig, teacher: ModelBundle, source: Dataset,
                 target: Dataset, checkpoint_dir=None) -> tuple[ModelBundle, StageTrace]:
    """Train a fresh student against ground truth plus frozen teacher logits.

    The distillation term covers source and target batches together; an
    optional confidence filter drops target samples whose teacher
    prediction is weak.
    """
    _require_labeled(source, "source")
    if len(target) == 0:
        raise DataError("target dataset is empty")
    student = build_from_config(cfg, seed=derive_seed(cfg.seed, STREAM_STUDENT))
    params = student.task_params()
    opt = SgdMomentum(params, cfg.sgd_momentum, cfg.sgd_weight_decay)
    src_sampler = BatchSampler(len(source), cfg.source_batch,
                               derive_rng(cfg.seed, STREAM_DISTILL, SOURCE))
    tgt_sampler = BatchSampler(len(target), cfg.target_batch,
                               derive_rng(cfg.seed, STREAM_DISTILL, TARGET))
    teacher_params = teacher.all_params()
    trace = StageTrace("distill", {"task": [], "distill": []}, {"gen": []})

    for it in range(cfg.distill_iters):
        lr = poly_lr(it, cfg.distill_iters, cfg.sgd_lr, cfg.poly_power)
        si, ti = src_sampler.next(), tgt_sampler.next()
        xs, ys, xt = source.x[si], source.y[si], target.x[ti]

        with frozen(teacher_params):
            t_logits_s = classify(teacher.classifier,
                                  feature_extract(teacher.extractor, xs)).values
            t_logits_t = classify(teacher.classifier,
                                  feature_extract(teacher.extractor, xt)).values
        if cfg.distill_confidence_filter is not None:
            conf = np.exp(t_logits_t - t_logits_t.max(axis=1, keepdims=True))
            conf /= conf.sum(axis=1, keepdims=True)
            keep = conf.max(axis=1) >= cfg.distill_confidence_filter
            xt_kept, t_logits_t = xt[keep], t_logits_t[keep]
        else:
            xt_kept = xt

        x_both = np.concatenate([xs, xt_kept])
        t_logits = np.concatenate([t_logits_s, t_logits_t])
        s_logits = classify(student.classifier,
                            feature_extract(student.extractor, Tensor(x_both)))
        seg = task_loss(softmax_t(_rows(s_logits, len(xs)), 1.0), ys)
        soft = distill_loss(s_logits, t_logits, cfg.temperature)
        total = seg.value + soft.value
        zero_grads(params)
        total.backward()
        opt.step(lr)
        trace.losses["task"].append(seg.item())
        trace.losses["distill"].append(soft.item())
        trace.lrs["gen"].append(lr)
        _cadence(cfg, "distill", it, student, checkpoint_dir,
                 task=seg.item(), distill=soft.item())
    return student, trace


def _rows(t: Tensor, n: int) -> Tensor:
    """First n rows of a 2-D tensor, with gradient routed back to them."""
    def back(g):
        full = np.zeros_like(t.values)
        full[:n] = g
        t._accumulate(full)
    return Tensor._result(t.values[:n], (t,), back)


def evaluate(bundle: ModelBundle, dataset: Dataset) -> dict:
    """Per-class accuracy (recall) and its mean over classes present."""
    labeled = dataset.subset(dataset.y >= 0)
    if len(labeled) == 0:
        raise DataError("evaluation needs a non-empty labeled dataset")
    logits = classify(bundle.classifier,
                      feature_extract(bundle.extractor, labeled.x)).values
    preds = logits.argmax(axis=1)
    per_class: list[float | None] = []
    present = []
    for k in range(bundle.num_classes):
        mask = labeled.y == k
        if mask.any():
            acc = float((preds[mask] == k).mean())
            per_class.append(acc)
            present.append(acc)
        else:
            per_class.append(None)
    return {
        "per_class_accuracy": per_class,
        "mean_accuracy": float(np.mean(present)),
        "overall_accuracy": float((preds == labeled.y).mean()),
        "count": int(len(labeled)),
    }


@dataclass
class RunReport:
    format_version: int
    seed: int
    config: dict
    stages: list[dict]
    skipped_iterations: int
    metrics: dict
    mean_ccd: float
    ccd_per_class: list[float]
    wall_clock_sec: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_experiment(cfg: TrainConfig, source: Dataset | None = None,
                   target: Dataset | None = None,
                   checkpoint_dir=None) -> tuple[RunReport, dict]:
    """Run the configured stages end to end and assemble the report.

    Returns the report plus the trained bundles ("teacher" always; "final"
    is the distilled student when distillation ran, else the teacher).
    """
    start = time.perf_counter()
    if source is None or target is None:
        source, target = dataset_from_config(cfg)

    bundle, pre_trace = pretrain_source(cfg, source, checkpoint_dir)
    stages = [pre_trace]
    if cfg.adapt_iters > 0:
        stages.append(adapt(cfg, bundle, source, target, checkpoint_dir))

    final = bundle
    metrics = {}
    if cfg.distill_iters > 0:
        metrics["teacher_source"] = evaluate(bundle, source)
        metrics["teacher_target"] = evaluate(bundle, target)
        final, distill_trace = self_distill(cfg, bundle, source, target, checkpoint_dir)
        stages.append(distill_trace)

    metrics["source"] = evaluate(final, source)
    metrics["target"] = evaluate(final, target)
    ccd_report = ccd_for_model(final, source, target, cfg.ccd_domain,
                               cfg.ccd_cap, derive_seed(cfg.seed, STREAM_CCD))

    report = RunReport(
        format_version=REPORT_FORMAT_VERSION,
        seed=cfg.seed,
        config=cfg.to_dict(),
        stages=[t.to_dict() for t in stages],
        skipped_iterations=sum(t.skipped_iterations for t in stages),
        metrics=metrics,
        mean_ccd=ccd_report.mean,
        ccd_per_class=_json_safe(ccd_report.per_class),
        wall_clock_sec=time.perf_counter() - start,
    )
    return report, {"teacher": bundle, "final": final}
