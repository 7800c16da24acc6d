"""Training orchestration, evaluation metrics, and artifact dumps.

One training step: extract embeddings for the batch, stream each sample
through the statistics bank (detached, in batch order), snapshot the bank,
take the stage-appropriate residual, evaluate both margin networks,
combine per-sample margin vectors, apply the one-vs-all margined loss,
and step every optimizer. Stages follow the curriculum plan; when a
non-final stage converges its snapshot is frozen as the instructor for
the next stage's residuals.

Margins exist only during training. Evaluation always decodes the plain
softmax over logits and never mutates parameters or statistics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, serialize
from .curriculum import (
    ADVANCE,
    CONTINUE,
    FINISH,
    CurriculumPlan,
    InstructorState,
    StageState,
    advance,
    build_plan,
    stage_reference,
)
from .data import Dataset, DatasetBundle
from .errors import ConfigError, DataError, NumericError, StateError
from .labels import encode
from .loss import margined_loss, predict_margined, softmax
from .margins import (
    MarginMix,
    OrdinalMargins,
    VariationalMargin,
    combine_batch,
    ordinal_backward,
    ordinal_forward,
    variational_backward,
    variational_forward,
)
from .nn import ClassifierHead, DenseNet, make_optimizer
from .stats import ClassStatsBank, StatsSnapshot


@dataclass
class PmlModel:
    backbone: DenseNet
    head: ClassifierHead
    ordinal_net: DenseNet
    variational_net: DenseNet

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def embed_dim(self) -> int:
        return self.head.dim


def build_model(
    config: TrainConfig,
    feature_dim: int,
    num_classes: int,
    seed_seq: np.random.SeedSequence | None = None,
) -> PmlModel:
    """Backbone, classifier head, and both margin networks, seeded independently."""
    ss = seed_seq if seed_seq is not None else np.random.SeedSequence(config.seed)
    kids = ss.spawn(4)
    stats_width = config.embed_dim + 1 + num_classes
    backbone = DenseNet.create(
        [feature_dim, config.hidden_size, config.hidden_size, config.embed_dim],
        ["relu", "relu", "identity"],
        np.random.default_rng(kids[0]),
    )
    head = ClassifierHead.create(num_classes, config.embed_dim, np.random.default_rng(kids[1]))
    ordinal_net = DenseNet.create(
        [stats_width, config.margin_hidden_size, 2],
        ["tanh", "identity"],
        np.random.default_rng(kids[2]),
    )
    variational_net = DenseNet.create(
        [stats_width, config.margin_hidden_size, 1],
        ["tanh", "identity"],
        np.random.default_rng(kids[3]),
    )
    return PmlModel(backbone, head, ordinal_net, variational_net)


@dataclass
class EvalReport:
    mae: float
    per_class_mae: np.ndarray
    head_mae: float
    tail_mae: float
    epsilon_error: float
    predictions: np.ndarray
    probabilities: np.ndarray
    true_ages: np.ndarray


@dataclass
class EpochReport:
    stage: int
    epoch: int
    train_loss: float
    train_mae: float
    val_mae: float
    val_head_mae: float
    val_tail_mae: float
    val_epsilon_error: float
    imbalance_ratio: float
    val_class_mae: np.ndarray


@dataclass
class MarginLogEntry:
    stage: int
    epoch: int
    mu: np.ndarray
    sigma: np.ndarray
    variational: np.ndarray
    per_class: np.ndarray  # (c, c) combined margin row per true class


@dataclass
class TrainResult:
    model: PmlModel
    config: TrainConfig
    plan: CurriculumPlan
    bank: ClassStatsBank
    reports: list[EpochReport]
    margin_log: list[MarginLogEntry]
    step_losses: list[float]
    stage_transitions: int
    vpre_freezes: int
    train_class_counts: np.ndarray
    test_report: EvalReport | None


def head_tail_classes(train_class_counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Head = most populous third of classes by training count, tail = least populous third."""
    counts = np.asarray(train_class_counts)
    c = counts.size
    third = max(1, c // 3)
    order = np.lexsort((np.arange(c), counts))  # ascending, ties by index
    return order[-third:], order[:third]


def evaluate(
    backbone: DenseNet,
    head: ClassifierHead,
    dataset: Dataset,
    *,
    decoder: str = "expectation",
    train_class_counts: np.ndarray | None = None,
) -> EvalReport:
    """Margin-free metrics on one split: decode the plain softmax, compare to labels.

    MAE is the mean absolute decoded-age error; the epsilon error averages
    1 - exp(-(pred - age)^2 / (2 sigma*^2)) over samples using each
    sample's annotated deviation, so it lies in [0, 1]. Head/tail MAE
    aggregate over the samples of the most/least populous third of
    classes under the training counts.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty split")
    feats = backbone.forward(dataset.features, record=False)
    logits = head.logits(feats, record=False)
    probs = softmax(logits)
    c = dataset.num_classes
    if decoder == "argmax":
        preds = np.argmax(probs, axis=1).astype(np.float64)
    else:
        preds = probs @ np.arange(c, dtype=np.float64)
    errors = np.abs(preds - dataset.ages)
    per_class = np.full(c, np.nan)
    for j in range(c):
        mask = dataset.ages == j
        if mask.any():
            per_class[j] = errors[mask].mean()
    counts = dataset.class_counts() if train_class_counts is None else train_class_counts
    head_set, tail_set = head_tail_classes(counts)
    head_mask = np.isin(dataset.ages, head_set)
    tail_mask = np.isin(dataset.ages, tail_set)
    epsilon = float(np.mean(1.0 - np.exp(-(preds - dataset.ages) ** 2 / (2.0 * dataset.sigmas**2))))
    return EvalReport(
        mae=float(errors.mean()),
        per_class_mae=per_class,
        head_mae=float(errors[head_mask].mean()) if head_mask.any() else float("nan"),
        tail_mae=float(errors[tail_mask].mean()) if tail_mask.any() else float("nan"),
        epsilon_error=epsilon,
        predictions=preds,
        probabilities=probs,
        true_ages=dataset.ages.copy(),
    )


@dataclass
class _StepContext:
    model: PmlModel
    optimizers: dict
    bank: ClassStatsBank
    instructor: InstructorState
    mix: MarginMix
    config: TrainConfig
    targets_table: np.ndarray
    prev_snapshot: StatsSnapshot
    last_margins: tuple[OrdinalMargins, VariationalMargin] | None = None


def _train_step(ctx: _StepContext, features: np.ndarray, ages: np.ndarray) -> float:
    cfg = ctx.config
    model = ctx.model
    feats = model.backbone.forward(features)
    for i in range(len(ages)):
        ctx.bank.observe(int(ages[i]), feats[i])
    current = ctx.bank.snapshot()
    use_margins = cfg.mode == "pml"
    if use_margins:
        delta = stage_reference(ctx.instructor, current, ctx.prev_snapshot)
        om = ordinal_forward(
            model.ordinal_net, current,
            m_max=cfg.m_max, mu_range=cfg.mu_range, sigma_min=cfg.sigma_min,
        )
        vm = variational_forward(model.variational_net, delta, m_max=cfg.m_max)
        margins = combine_batch(om, vm, ctx.mix, ages)
        ctx.last_margins = (om, vm)
    else:
        margins = np.zeros((len(ages), model.num_classes))
    logits = model.head.logits(feats)
    prediction = predict_margined(logits, margins)
    targets = ctx.targets_table[ages]
    loss, d_logits, d_margins = margined_loss(targets, prediction)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    head_grads = model.head.backward(d_logits)
    backbone_grads = model.backbone.backward(head_grads.input)
    if use_margins:
        c = model.num_classes
        d_table = np.zeros((c, c))
        np.add.at(d_table, ages, ctx.mix.lam * d_margins)
        d_values = ctx.mix.beta * d_margins.sum(axis=0)
        ordinal_grads = ordinal_backward(model.ordinal_net, om, d_table)
        variational_grads = variational_backward(model.variational_net, vm, d_values)
        ctx.optimizers["ordinal"].step(model.ordinal_net.params(), ordinal_grads.flat())
        ctx.optimizers["variational"].step(model.variational_net.params(), variational_grads.flat())
    ctx.optimizers["backbone"].step(model.backbone.params(), backbone_grads.flat())
    ctx.optimizers["head"].step(model.head.params(), [head_grads.weight])
    ctx.prev_snapshot = current
    return loss


def _dump_diagnostics(run_dir, snapshot: StatsSnapshot, batch: np.ndarray) -> None:
    path = os.path.join(run_dir, "diagnostics.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# aborted batch sample indices: " + " ".join(str(int(i)) for i in batch) + "\n")
        fh.write("# statistics snapshot at abort (one row per class)\n")
        for row in snapshot.matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def check_run_dir(run_dir) -> None:
    """Fail before any training if the output directory cannot be written."""
    try:
        os.makedirs(run_dir, exist_ok=True)
        probe = os.path.join(run_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise ConfigError(f"run directory {run_dir} is not writable: {exc}") from exc


def train(config: TrainConfig, bundle: DatasetBundle, run_dir=None) -> TrainResult:
    config.validate()
    if run_dir is not None:
        check_run_dir(run_dir)
    if len(bundle.train) == 0:
        raise DataError("training split is empty")
    if len(bundle.val) == 0:
        raise DataError("validation split is empty")
    c = bundle.data.num_classes
    if c < 2:
        raise DataError(f"need at least 2 classes, got {c}")

    ss = np.random.SeedSequence(config.seed)
    model_ss, shuffle_ss, plan_ss = ss.spawn(3)
    model = build_model(config, bundle.train.dim, c, model_ss)
    optimizers = {
        name: make_optimizer(
            config.optimizer, config.learning_rate,
            momentum=config.momentum, weight_decay=config.weight_decay,
        )
        for name in ("backbone", "head", "ordinal", "variational")
    }
    shuffle_rng = np.random.default_rng(shuffle_ss)
    train_counts = bundle.train.class_counts()
    plan = build_plan(
        train_counts, config.curriculum_fractions,
        seed=int(plan_ss.generate_state(1, np.uint32)[0]),
    )
    class_pools = [np.flatnonzero(bundle.train.ages == j) for j in range(c)]
    targets_table = np.stack([encode(a, config.sigma, c).probs for a in range(c)])

    bank = ClassStatsBank(c, config.embed_dim)
    ctx = _StepContext(
        model=model,
        optimizers=optimizers,
        bank=bank,
        instructor=InstructorState(),
        mix=MarginMix(config.lam, config.beta),
        config=config,
        targets_table=targets_table,
        prev_snapshot=StatsSnapshot.zeros(c, config.embed_dim),
    )

    reports: list[EpochReport] = []
    margin_log: list[MarginLogEntry] = []
    step_losses: list[float] = []
    transitions = 0
    freezes = 0

    for stage in range(plan.num_stages):
        ctx.instructor.stage_index = stage
        stage_indices = np.concatenate(
            [class_pools[j][plan.stage_members(stage, j)] for j in range(c)]
        )
        # an all-empty stage (possible with zero-count classes) is skipped outright
        decision = ADVANCE if stage < plan.num_stages - 1 else FINISH
        if stage_indices.size > 0:
            stage_train = bundle.train.subset(stage_indices)
            ratio = plan.imbalance_ratio(stage)
            history: list[float] = []
            while True:
                if config.reset_stats_each_epoch:
                    bank = ClassStatsBank(c, config.embed_dim)
                    ctx.bank = bank
                    ctx.prev_snapshot = StatsSnapshot.zeros(c, config.embed_dim)
                order = shuffle_rng.permutation(stage_indices)
                epoch_losses = []
                for start in range(0, order.size, config.batch_size):
                    batch = order[start:start + config.batch_size]
                    try:
                        loss = _train_step(ctx, bundle.train.features[batch],
                                           bundle.train.ages[batch])
                    except NumericError:
                        if run_dir is not None:
                            _dump_diagnostics(run_dir, ctx.bank.snapshot(), batch)
                        raise
                    epoch_losses.append(loss)
                    step_losses.append(loss)
                train_eval = evaluate(model.backbone, model.head, stage_train,
                                      decoder=config.decoder, train_class_counts=train_counts)
                val_eval = evaluate(model.backbone, model.head, bundle.val,
                                    decoder=config.decoder, train_class_counts=train_counts)
                history.append(val_eval.mae)
                reports.append(EpochReport(
                    stage=stage + 1,
                    epoch=len(history),
                    train_loss=float(np.mean(epoch_losses)),
                    train_mae=train_eval.mae,
                    val_mae=val_eval.mae,
                    val_head_mae=val_eval.head_mae,
                    val_tail_mae=val_eval.tail_mae,
                    val_epsilon_error=val_eval.epsilon_error,
                    imbalance_ratio=ratio,
                    val_class_mae=val_eval.per_class_mae,
                ))
                if ctx.last_margins is not None:
                    om, vm = ctx.last_margins
                    mix = ctx.mix
                    margin_log.append(MarginLogEntry(
                        stage=stage + 1, epoch=len(history),
                        mu=om.mu.copy(), sigma=om.sigma.copy(),
                        variational=vm.values.copy(),
                        per_class=mix.lam * om.table + mix.beta * vm.values[None, :],
                    ))
                decision = advance(
                    StageState(stage, plan.num_stages, config.stage_epochs,
                               config.patience, config.min_delta),
                    history,
                )
                if decision != CONTINUE:
                    break
        transitions += 1
        if decision == ADVANCE:
            ctx.instructor.freeze(ctx.bank.snapshot(tag=f"stage-{stage + 1}"))
            freezes += 1

    test_report = None
    if len(bundle.test) > 0:
        test_report = evaluate(model.backbone, model.head, bundle.test,
                               decoder=config.decoder, train_class_counts=train_counts)
    return TrainResult(
        model=model,
        config=config,
        plan=plan,
        bank=ctx.bank,
        reports=reports,
        margin_log=margin_log,
        step_losses=step_losses,
        stage_transitions=transitions,
        vpre_freezes=freezes,
        train_class_counts=train_counts,
        test_report=test_report,
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def write_metrics_csv(reports: list[EpochReport], num_classes: int, path) -> None:
    header = (
        "stage,epoch,train_loss,train_mae,val_mae,val_head_mae,val_tail_mae,"
        "val_epsilon_error,imbalance_ratio,"
        + ",".join(f"val_mae_class_{j}" for j in range(num_classes))
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for r in reports:
            row = [
                str(r.stage), str(r.epoch), _fmt(r.train_loss), _fmt(r.train_mae),
                _fmt(r.val_mae), _fmt(r.val_head_mae), _fmt(r.val_tail_mae),
                _fmt(r.val_epsilon_error), _fmt(r.imbalance_ratio),
            ] + [_fmt(v) for v in r.val_class_mae]
            fh.write(",".join(row) + "\n")


def dump_artifacts(result: TrainResult, run_dir) -> dict[str, str]:
    """Write the CSV artifacts, the verbatim config, and the report figures."""
    if not result.reports:
        raise StateError("dump_artifacts requires at least one completed epoch")
    check_run_dir(run_dir)
    c = result.model.num_classes
    paths: dict[str, str] = {}

    metrics_path = os.path.join(run_dir, "metrics.csv")
    write_metrics_csv(result.reports, c, metrics_path)
    paths["metrics"] = metrics_path

    margins_path = os.path.join(run_dir, "margins.csv")
    with open(margins_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "stage,epoch,class,mu,sigma,variational,"
            + ",".join(f"m_p_{k}" for k in range(c)) + "\n"
        )
        for entry in result.margin_log:
            for j in range(c):
                row = [
                    str(entry.stage), str(entry.epoch), str(j),
                    _fmt(entry.mu[j]), _fmt(entry.sigma[j]), _fmt(entry.variational[j]),
                ] + [_fmt(v) for v in entry.per_class[j]]
                fh.write(",".join(row) + "\n")
    paths["margins"] = margins_path

    stats_path = os.path.join(run_dir, "stats.csv")
    result.bank.export_csv(stats_path)
    paths["stats"] = stats_path

    plan_path = os.path.join(run_dir, "curriculum.csv")
    result.plan.export_csv(plan_path)
    paths["curriculum"] = plan_path

    distributions_path = os.path.join(run_dir, "distributions.csv")
    with open(distributions_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "sample,true_age,predicted_age,"
            + ",".join(f"p_{k}" for k in range(c)) + "\n"
        )
        if result.test_report is not None:
            tr = result.test_report
            k = min(result.config.distribution_samples, len(tr.predictions))
            for i in range(k):
                row = [str(i), str(int(tr.true_ages[i])), _fmt(tr.predictions[i])]
                row += [_fmt(v) for v in tr.probabilities[i]]
                fh.write(",".join(row) + "\n")
    paths["distributions"] = distributions_path

    config_path = os.path.join(run_dir, "config.txt")
    with open(config_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(result.config))
    paths["config"] = config_path

    if result.test_report is not None:
        test_path = os.path.join(run_dir, "test_metrics.csv")
        with open(test_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("mae,head_mae,tail_mae,epsilon_error\n")
            tr = result.test_report
            fh.write(",".join(_fmt(v) for v in
                              (tr.mae, tr.head_mae, tr.tail_mae, tr.epsilon_error)) + "\n")
        paths["test_metrics"] = test_path

    from . import report as report_mod

    paths.update(report_mod.render_run_figures(result, run_dir))
    return paths
