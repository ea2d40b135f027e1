"""Experiment runner: the end-to-end training loop, ablation matrix,
threshold sweeps and metrics emission.

One run owns its mutable state (parameters, buffer, aligner) on a single
logical thread; sweeps and multi-seed ablations share nothing and may run as
independent processes. Every run is deterministic under its seed: identical
configs produce byte-identical metrics files.
"""

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import model as model_mod
from .buffer import InstanceMemoryBuffer
from .core import prob_audit
from .data import (AugmentationConfig, EmbeddingRecord, LabeledSample,
                   SyntheticConfig, generate_synthetic, load_dataset,
                   read_embeddings, strong_aug_batch, weak_aug_batch,
                   write_embeddings)
from .errors import ConfigurationError, DataFormatError, DomainError
from .pseudolabel import DistributionAligner, generate_batch
from .model import (AdamState, ModelParams, adam_step, compute_losses, forward_batch,
                    gradients, load_checkpoint, save_checkpoint)

ABLATION_VARIANTS = [
    ("semantic_only", {"use_text_prob": False, "use_instance_prob": False,
                       "use_text_loss": False}),
    ("plus_text", {"use_text_prob": True, "use_instance_prob": False,
                   "use_text_loss": False}),
    ("plus_instance", {"use_text_prob": True, "use_instance_prob": True,
                       "use_text_loss": False}),
    ("full", {"use_text_prob": True, "use_instance_prob": True,
              "use_text_loss": True}),
]

METRICS_COLUMNS = [
    "epoch", "l_s", "l_t", "l_u", "total", "mask_pass_rate", "mask_pass_count",
    "admitted", "buffer_size", "pseudo_label_accuracy", "test_accuracy",
]


@dataclass
class DatasetFiles:
    """Paths of the four embedding files a run can train from."""

    labeled: str
    unlabeled: str
    test: str
    anchors: str


@dataclass
class TrainConfig:
    """Every knob of one training run; all fields are CLI-addressable."""

    # data source: synthetic generator unless files are given
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    files: DatasetFiles = None
    # similarity temperatures and confidence thresholds
    temperature: float = 0.10
    text_loss_temperature: float = None  # None -> temperature
    alpha: float = 0.8
    gamma: float = 0.86
    # loss weights
    lambda_text: float = 0.6
    lambda_unsup: float = 0.3
    # instance memory buffer
    buffer_momentum: float = 0.9
    buffer_capacity_factor: float = 4.0
    buffer_feature_source: str = "raw"  # raw | weak: which view's features are stored
    # distribution alignment
    align_decay: float = 0.999
    align_warmup_batches: int = 16
    align_mode: str = "marginal"  # marginal | uniform | off
    # batching
    mu: int = 4
    batch_size: int = 16
    epochs: int = 60
    # optimizer
    lr: float = 5e-4
    lr_schedule: str = "cosine"  # cosine | constant
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # model
    feature_dim: int = None  # None -> input dimension
    init_scheme: str = "identity"
    # ablation and experiment flags
    use_text_prob: bool = True
    use_instance_prob: bool = True
    use_text_loss: bool = True
    literal_instance_prob: bool = False
    text_softmax_axis: str = "class"  # class | batch
    text_loss_reduction: str = "sum"  # sum | mean
    # embedding-space augmentation
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    # seeding
    seed: int = 0
    seeds: list = None  # multi-seed ops; defaults to [seed]
    # artifacts / instrumentation
    checkpoint_interval: int = 0
    dump_buffer: bool = False
    dump_pseudo_labels: bool = False
    record_step_stats: bool = False
    check_probabilities: bool = False

    def validate(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.text_loss_temperature is not None and self.text_loss_temperature <= 0:
            raise ConfigurationError("text loss temperature must be positive")
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("alpha and gamma must lie in (0, 1)")
        if self.alpha > self.gamma:
            raise ConfigurationError(
                f"alpha ({self.alpha}) must not exceed gamma ({self.gamma})")
        if self.mu < 1:
            raise ConfigurationError("mu must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 < self.buffer_momentum < 1.0:
            raise ConfigurationError("buffer momentum must lie in (0, 1)")
        if self.buffer_capacity_factor < 1.0:
            raise ConfigurationError("buffer capacity factor must be >= 1")
        if self.align_mode not in ("marginal", "uniform", "off"):
            raise ConfigurationError(f"unknown align_mode {self.align_mode!r}")
        if self.buffer_feature_source not in ("raw", "weak"):
            raise ConfigurationError(
                f"unknown buffer_feature_source {self.buffer_feature_source!r}")
        if self.text_softmax_axis not in ("class", "batch"):
            raise ConfigurationError(f"unknown text_softmax_axis {self.text_softmax_axis!r}")
        if self.text_loss_reduction not in ("sum", "mean"):
            raise ConfigurationError(f"unknown text_loss_reduction {self.text_loss_reduction!r}")
        if self.init_scheme not in ("identity", "random"):
            raise ConfigurationError(f"unknown init_scheme {self.init_scheme!r}")
        self.augmentation.validate()
        if self.files is None:
            self.synthetic.validate()

    def to_dict(self):
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw):
        data = dict(raw or {})
        if data.get("synthetic") is not None:
            synth = dict(data["synthetic"])
            if "confusable_pairs" in synth and synth["confusable_pairs"] is not None:
                synth["confusable_pairs"] = [tuple(p) for p in synth["confusable_pairs"]]
            data["synthetic"] = SyntheticConfig(**synth)
        if data.get("files") is not None:
            data["files"] = DatasetFiles(**data["files"])
        if data.get("augmentation") is not None:
            data["augmentation"] = AugmentationConfig(**data["augmentation"])
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochMetrics:
    """One metrics row per training epoch."""

    epoch: int
    l_s: float
    l_t: float
    l_u: float
    total: float
    mask_pass_rate: float
    mask_pass_count: int
    admitted: int
    buffer_size: int
    pseudo_label_accuracy: float
    test_accuracy: float


@dataclass
class RunResult:
    """Everything a finished run produced."""

    config: TrainConfig
    metrics: list
    final_test_accuracy: float
    params: ModelParams
    out_dir: str = None
    step_stats: list = None  # (mask_pass_count, admit_count) per step if recorded
    audit: dict = None
    checkpoint_path: str = None


def build_dataset(config):
    """Resolve the run's dataset from files or the synthetic generator."""
    if config.files is not None:
        return load_dataset(config.files.labeled, config.files.unlabeled,
                            config.files.test, config.files.anchors)
    return generate_synthetic(config.synthetic)


def evaluate_params(params, test_samples):
    """Accuracy of the semantic head's argmax over a labeled sample list."""
    if not test_samples:
        raise ConfigurationError("empty test set")
    x = np.stack([s.x for s in test_samples])
    labels = np.array([s.label for s in test_samples], dtype=np.int64)
    if x.shape[1] != params.d_in:
        raise DataFormatError(
            f"test dimension {x.shape[1]} does not match model d_in {params.d_in}")
    _, probs = forward_batch(params, x)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate_checkpoint(checkpoint_path, test_path):
    """Accuracy of a stored checkpoint over a SITF test file."""
    params, _ = load_checkpoint(checkpoint_path)
    test = []
    for rec in read_embeddings(test_path):
        if rec.label < 0:
            raise DataFormatError(f"test record {rec.sample_id} is unlabeled")
        test.append(LabeledSample(rec.sample_id, rec.values.astype(np.float64), rec.label))
    return evaluate_params(params, test)


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


def _labeled_batches(n, batch_size, rng):
    """Yield index batches cycling through reshuffled permutations."""
    pool = []
    while True:
        while len(pool) < batch_size:
            pool.extend(rng.permutation(n).tolist())
        yield pool[:batch_size]
        del pool[:batch_size]


def train(config, out_dir=None, dataset=None, progress=None):
    """Run the full semi-supervised loop and return a RunResult.

    ``dataset`` overrides the config's data source (used by ablations to
    share one dataset across variants). ``progress`` is an optional
    ``callback(epoch, total_epochs)`` invoked after each epoch.
    """
    config.validate()
    if dataset is None:
        dataset = build_dataset(config)
    if not dataset.unlabeled:
        raise ConfigurationError("unlabeled split is empty; nothing to pseudo-label")
    d_in = dataset.dim
    d = config.feature_dim or d_in
    k = dataset.num_classes
    if dataset.anchors.shape != (k, d):
        raise ConfigurationError(
            f"anchors shape {dataset.anchors.shape} must equal (num_classes, feature_dim)="
            f"({k}, {d}); anchors live in feature space")

    if config.check_probabilities:
        prob_audit.reset(enabled=True)

    master = np.random.default_rng(config.seed)
    init_rng, shuffle_rng, aug_rng = master.spawn(3)

    params = ModelParams.init(d_in, d, k, init_rng, scheme=config.init_scheme)
    opt = AdamState(params, lr=config.lr, beta1=config.adam_beta1,
                    beta2=config.adam_beta2, eps=config.adam_eps)

    labeled_x = np.stack([s.x for s in dataset.labeled])
    labeled_y = np.array([s.label for s in dataset.labeled], dtype=np.int64)
    labeled_ids = [s.sample_id for s in dataset.labeled]
    unlabeled_x = np.stack([s.x for s in dataset.unlabeled])
    unlabeled_ids = [s.sample_id for s in dataset.unlabeled]

    # buffer rows are the adapter features of the raw labeled inputs
    feats0, _ = forward_batch(params, labeled_x)
    buffer = InstanceMemoryBuffer.init_from_labeled(
        [(labeled_ids[i], feats0[i], int(labeled_y[i])) for i in range(len(labeled_ids))],
        num_classes=k, momentum=config.buffer_momentum,
        capacity=int(config.buffer_capacity_factor * len(labeled_ids)),
        admission_threshold=config.gamma)

    if config.align_mode == "off":
        aligner = None
    else:
        target = dataset.labeled_marginal() if config.align_mode == "marginal" else None
        aligner = DistributionAligner(k, target_marginal=target,
                                      decay=config.align_decay,
                                      warmup_batches=config.align_warmup_batches)

    truth = dataset.evaluation_truth()
    out_path = Path(out_dir) if out_dir else None
    pseudo_dump = None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "config.yaml", "w") as fh:
            yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
        if config.dump_pseudo_labels:
            pseudo_dump = open(out_path / "pseudo_labels.tsv", "w")
            header = ["epoch", "step", "sample_id", "p_sem", "p_text", "p_ins",
                      "p_fused", "p_aligned", "passes_alpha", "passes_gamma"]
            pseudo_dump.write("\t".join(header) + "\n")

    labeled_iter = _labeled_batches(len(labeled_ids), config.batch_size, shuffle_rng)
    unlabeled_per_step = config.mu * config.batch_size
    steps_per_epoch = max(1, math.ceil(len(unlabeled_ids) / unlabeled_per_step))
    total_steps = steps_per_epoch * config.epochs

    metrics = []
    step_stats = [] if config.record_step_stats else None
    start_time = time.monotonic()

    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(unlabeled_ids))
            sums = {"l_s": 0.0, "l_t": 0.0, "l_u": 0.0, "total": 0.0}
            masked = 0
            seen = 0
            admitted = 0
            pseudo_correct = 0
            pseudo_counted = 0

            for step in range(steps_per_epoch):
                lab_idx = next(labeled_iter)
                unl_idx = order[step * unlabeled_per_step:(step + 1) * unlabeled_per_step]

                xl = weak_aug_batch(labeled_x[lab_idx], config.augmentation, aug_rng)
                yl = labeled_y[lab_idx]
                xu = unlabeled_x[unl_idx]
                xu_w = weak_aug_batch(xu, config.augmentation, aug_rng)
                xu_s = strong_aug_batch(xu, config.augmentation, aug_rng)

                feats_l, probs_l = forward_batch(params, xl)
                # labeled features refresh their buffer rows every visit;
                # stored rows use the configured view (clean by default)
                if config.buffer_feature_source == "raw":
                    store_l, _ = forward_batch(params, labeled_x[lab_idx])
                else:
                    store_l = feats_l
                for j, li in enumerate(lab_idx):
                    buffer.ema_update(labeled_ids[li], store_l[j])

                feats_w, p_sem = forward_batch(params, xu_w)
                gen = generate_batch(
                    feats_w, p_sem, dataset.anchors, buffer, aligner,
                    config.temperature, config.alpha, config.gamma,
                    use_text=config.use_text_prob,
                    use_instance=config.use_instance_prob,
                    literal_instance=config.literal_instance_prob)
                aligned = gen["aligned"]
                mask = gen["passes_alpha"]
                admit_flags = gen["passes_gamma"]

                text_tau = (config.text_loss_temperature
                            if config.text_loss_temperature is not None
                            else config.temperature)
                losses = compute_losses(
                    params, xl, yl, dataset.anchors, xu_s, aligned, mask,
                    config.lambda_text, config.lambda_unsup, text_tau,
                    text_axis=config.text_softmax_axis,
                    text_reduction=config.text_loss_reduction,
                    use_text_loss=config.use_text_loss)
                if not np.isfinite(losses.total):
                    _dump_nan_state(out_path, epoch, step, losses, params)
                    raise DomainError(
                        f"non-finite loss at epoch {epoch} step {step}: "
                        f"l_s={losses.l_s} l_t={losses.l_t} l_u={losses.l_u}")

                grads = gradients(
                    params, xl, yl, dataset.anchors, xu_s, aligned, mask,
                    config.lambda_text, config.lambda_unsup, text_tau,
                    text_axis=config.text_softmax_axis,
                    text_reduction=config.text_loss_reduction,
                    use_text_loss=config.use_text_loss)
                # admissions store features computed before the update
                if config.buffer_feature_source == "raw" and np.any(admit_flags):
                    store_u, _ = forward_batch(params, xu)
                else:
                    store_u = feats_w
                if config.lr_schedule == "cosine":
                    opt.lr = config.lr * 0.5 * (
                        1.0 + math.cos(math.pi * opt.step_count / total_steps))
                adam_step(params, grads, opt)

                step_admits = 0
                for j in range(len(unl_idx)):
                    if admit_flags[j]:
                        if buffer.admit_unlabeled(unlabeled_ids[unl_idx[j]],
                                                  store_u[j], aligned[j]):
                            step_admits += 1
                if aligner is not None:
                    aligner.advance_batch()

                if pseudo_dump is not None:
                    _dump_pseudo_rows(pseudo_dump, epoch, step, unl_idx,
                                      unlabeled_ids, gen)

                sums["l_s"] += losses.l_s
                sums["l_t"] += losses.l_t
                sums["l_u"] += losses.l_u
                sums["total"] += losses.total
                pass_count = int(mask.sum())
                masked += pass_count
                seen += len(unl_idx)
                admitted += step_admits
                if truth is not None and pass_count:
                    pred = np.argmax(aligned, axis=1)
                    for j in range(len(unl_idx)):
                        if mask[j]:
                            pseudo_counted += 1
                            if pred[j] == truth.get(unlabeled_ids[unl_idx[j]], -1):
                                pseudo_correct += 1
                if step_stats is not None:
                    step_stats.append((pass_count, step_admits))

            test_acc = evaluate_params(params, dataset.test)
            metrics.append(EpochMetrics(
                epoch=epoch,
                l_s=sums["l_s"] / steps_per_epoch,
                l_t=sums["l_t"] / steps_per_epoch,
                l_u=sums["l_u"] / steps_per_epoch,
                total=sums["total"] / steps_per_epoch,
                mask_pass_rate=masked / seen if seen else 0.0,
                mask_pass_count=masked,
                admitted=admitted,
                buffer_size=len(buffer),
                pseudo_label_accuracy=(pseudo_correct / pseudo_counted
                                       if pseudo_counted else float("nan")),
                test_accuracy=test_acc,
            ))
            if out_path and config.checkpoint_interval > 0 \
                    and epoch % config.checkpoint_interval == 0:
                ck_dir = out_path / "checkpoints"
                ck_dir.mkdir(exist_ok=True)
                save_checkpoint(ck_dir / f"epoch_{epoch:04d}.sitm", params, opt)
            if progress is not None:
                progress(epoch, config.epochs)
    finally:
        if pseudo_dump is not None:
            pseudo_dump.close()

    audit = None
    if config.check_probabilities:
        audit = {"count": prob_audit.count, "worst": prob_audit.worst}
        prob_audit.reset(enabled=False)

    result = RunResult(config=config, metrics=metrics,
                       final_test_accuracy=metrics[-1].test_accuracy,
                       params=params, out_dir=str(out_path) if out_path else None,
                       step_stats=step_stats, audit=audit)

    if out_path:
        _write_metrics(out_path / "metrics.csv", metrics)
        ck_dir = out_path / "checkpoints"
        ck_dir.mkdir(exist_ok=True)
        final_ck = ck_dir / "final.sitm"
        save_checkpoint(final_ck, params, opt)
        result.checkpoint_path = str(final_ck)
        if config.dump_buffer:
            _dump_buffer(out_path, buffer)
        summary = {
            "final_test_accuracy": result.final_test_accuracy,
            "best_test_accuracy": max(m.test_accuracy for m in metrics),
            "epochs": config.epochs,
            "steps_per_epoch": steps_per_epoch,
            "buffer_size": len(buffer),
            "total_admissions": int(sum(m.admitted for m in metrics)),
            "runtime_seconds": time.monotonic() - start_time,
            "seed": config.seed,
        }
        if audit is not None:
            summary["probability_audit"] = audit
        with open(out_path / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    return result


def _dump_nan_state(out_path, epoch, step, losses, params):
    if out_path is None:
        return
    dump = {
        "epoch": epoch, "step": step,
        "l_s": losses.l_s, "l_t": losses.l_t, "l_u": losses.l_u,
        "param_norms": {
            "adapter_w": float(np.linalg.norm(params.adapter_w)),
            "adapter_b": float(np.linalg.norm(params.adapter_b)),
            "head_w": float(np.linalg.norm(params.head_w)),
            "head_b": float(np.linalg.norm(params.head_b)),
        },
    }
    with open(out_path / "nan_dump.json", "w") as fh:
        json.dump(dump, fh, indent=2)


def _vec(arr):
    return ",".join(f"{v:.8g}" for v in np.asarray(arr, dtype=np.float64))


def _dump_pseudo_rows(fh, epoch, step, unl_idx, unlabeled_ids, gen):
    parts = gen["components"]
    for j in range(len(unl_idx)):
        row = [str(epoch), str(step), str(unlabeled_ids[unl_idx[j]]),
               _vec(parts["sem"][j]),
               _vec(parts["text"][j]) if "text" in parts else "",
               _vec(parts["ins"][j]) if "ins" in parts else "",
               _vec(gen["raw"][j]), _vec(gen["aligned"][j]),
               str(int(gen["passes_alpha"][j])), str(int(gen["passes_gamma"][j]))]
        fh.write("\t".join(row) + "\n")


def _dump_buffer(out_path, buffer):
    labeled_recs, unlabeled_recs = [], []
    for sid, origin, label, feature in buffer.snapshot_records():
        rec = EmbeddingRecord(sid, label, feature.astype("<f4"))
        (labeled_recs if origin == "labeled" else unlabeled_recs).append(rec)
    write_embeddings(out_path / "buffer_labeled.sitf", labeled_recs, dim=buffer.dim)
    write_embeddings(out_path / "buffer_unlabeled.sitf", unlabeled_recs, dim=buffer.dim)


def _write_metrics(path, metrics):
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for m in metrics:
            row = [m.epoch, m.l_s, m.l_t, m.l_u, m.total, m.mask_pass_rate,
                   m.mask_pass_count, m.admitted, m.buffer_size,
                   m.pseudo_label_accuracy, m.test_accuracy]
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# -- multi-run drivers ---------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    accuracies: list
    mean: float
    std: float


def ablate(config, out_dir=None, progress=None):
    """Run the four-variant component matrix over the configured seeds.

    Every variant sees the same datasets (data seeds are shared), so
    differences reflect the method. Returns one row per variant with the
    per-seed accuracies and their mean/std.
    """
    config.validate()
    seeds = config.seeds or [config.seed]
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    # one dataset per seed, shared across variants
    datasets = {}
    for s in seeds:
        run_cfg = dataclasses.replace(config, seed=s)
        if config.files is None:
            run_cfg = dataclasses.replace(
                run_cfg, synthetic=dataclasses.replace(config.synthetic, seed=s))
        datasets[s] = build_dataset(run_cfg)

    rows = []
    total_runs = len(ABLATION_VARIANTS) * len(seeds)
    done = 0
    for variant, flags in ABLATION_VARIANTS:
        accs = []
        for s in seeds:
            run_cfg = dataclasses.replace(config, seed=s, seeds=None, **flags)
            if config.files is None:
                run_cfg = dataclasses.replace(
                    run_cfg, synthetic=dataclasses.replace(config.synthetic, seed=s))
            run_dir = out_path / f"{variant}_seed{s}" if out_path else None
            result = train(run_cfg, out_dir=run_dir, dataset=datasets[s])
            accs.append(result.final_test_accuracy)
            done += 1
            if progress is not None:
                progress(done, total_runs)
        rows.append(AblationRow(variant=variant, accuracies=accs,
                                mean=float(np.mean(accs)),
                                std=float(np.std(accs))))
    if out_path:
        with open(out_path / "ablation.json", "w") as fh:
            json.dump([dataclasses.asdict(r) for r in rows], fh, indent=2)
        with open(out_path / "ablation.csv", "w") as fh:
            fh.write("variant,mean_accuracy,std_accuracy," +
                     ",".join(f"seed_{s}" for s in seeds) + "\n")
            for r in rows:
                fh.write(",".join([r.variant, _fmt(r.mean), _fmt(r.std)] +
                                  [_fmt(a) for a in r.accuracies]) + "\n")
    return rows


@dataclass
class SweepPoint:
    value: float
    accuracies: list
    mean: float
    std: float
    epoch1_mask_pass_counts: list


def sweep(config, parameter, grid, out_dir=None, progress=None):
    """Train once per (grid value, seed) for a threshold parameter.

    ``parameter`` is ``alpha`` or ``gamma``. When sweeping alpha above the
    configured gamma, gamma is lifted to the grid value so the config
    invariant alpha <= gamma keeps holding; mask statistics only depend on
    alpha, so the sweep's subject is unaffected.
    """
    if parameter not in ("alpha", "gamma"):
        raise ConfigurationError(f"can only sweep alpha or gamma, not {parameter!r}")
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigurationError("sweep grid is empty")
    for g in grid:
        if not 0.0 < g < 1.0:
            raise ConfigurationError(f"grid value {g} outside (0, 1)")
        if parameter == "gamma" and g < config.alpha:
            raise ConfigurationError(
                f"gamma grid value {g} below alpha {config.alpha}")
    config.validate()
    seeds = config.seeds or [config.seed]
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    points = []
    total_runs = len(grid) * len(seeds)
    done = 0
    for value in grid:
        accs = []
        epoch1_counts = []
        for s in seeds:
            overrides = {parameter: value, "seed": s, "seeds": None}
            if parameter == "alpha" and value > config.gamma:
                overrides["gamma"] = value
            run_cfg = dataclasses.replace(config, **overrides)
            run_dir = out_path / f"{parameter}_{value:g}_seed{s}" if out_path else None
            result = train(run_cfg, out_dir=run_dir)
            accs.append(result.final_test_accuracy)
            epoch1_counts.append(result.metrics[0].mask_pass_count)
            done += 1
            if progress is not None:
                progress(done, total_runs)
        points.append(SweepPoint(value=value, accuracies=accs,
                                 mean=float(np.mean(accs)), std=float(np.std(accs)),
                                 epoch1_mask_pass_counts=epoch1_counts))
    if out_path:
        with open(out_path / "sweep.json", "w") as fh:
            json.dump({"parameter": parameter,
                       "points": [dataclasses.asdict(p) for p in points]}, fh, indent=2)
    return points
