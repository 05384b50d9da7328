"""Two-stage training pipeline.

Stage one pretrains on a mix of clean and Gaussian-noised images.  Stage two
replaces the classification head and fine-tunes on the downstream task using
clean images only (noisy fine-tuning exists behind an explicit ablation
flag).  Fine-tuning runs in one of two modes: full_network updates every
parameter, fixed_feature updates only the head while the body stays
bit-identical (batch-norm running statistics are still tracked, as they are
state, not parameters).
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import NoiseSpec, drawn_sigmas, sample_noisy_batch
from .model_io import save_checkpoint
from .network import Network
from .optim import SgdConfig, SgdOptimizer, lr_at

STAGES = ("pretrain", "finetune")
FINETUNE_MODES = ("full_network", "fixed_feature")


@dataclass(frozen=True)
class TrainPlan:
    stage: str
    noise: NoiseSpec
    sgd: SgdConfig
    seed: int = 0
    finetune_mode: str = None
    eval_every: int = 1
    allow_noisy_finetune: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.stage == "pretrain":
            if self.finetune_mode is not None:
                raise ValueError("finetune_mode applies to the finetune stage only")
        else:
            mode = self.finetune_mode or "full_network"
            if mode not in FINETUNE_MODES:
                raise ValueError(f"finetune_mode must be one of {FINETUNE_MODES}")
            object.__setattr__(self, "finetune_mode", mode)
            if not self.noise.is_clean and not self.allow_noisy_finetune:
                raise ValueError("fine-tuning uses clean images; set "
                                 "allow_noisy_finetune=True to override")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @property
    def epochs(self):
        return self.sgd.epochs


@dataclass
class TrainReport:
    """Per-epoch training record.  The CSV form carries exactly the columns
    (epoch, loss, clean_acc, lr) so that reruns are byte-identical; wall
    clock time is kept on the object only."""

    stage: str
    seed: int
    losses: list = None
    clean_accs: list = None
    lrs: list = None
    sigma_counts: dict = None
    wall_clock_seconds: float = 0.0
    checkpoint_path: str = None
    diverged_at_epoch: int = None

    def __post_init__(self):
        self.losses = [] if self.losses is None else self.losses
        self.clean_accs = [] if self.clean_accs is None else self.clean_accs
        self.lrs = [] if self.lrs is None else self.lrs
        self.sigma_counts = {} if self.sigma_counts is None else self.sigma_counts

    @property
    def epochs(self):
        return len(self.losses)

    @property
    def final_clean_acc(self):
        finite = [a for a in self.clean_accs if not np.isnan(a)]
        return finite[-1] if finite else float("nan")

    def to_csv(self):
        lines = ["epoch,loss,clean_acc,lr"]
        for e, (loss, acc, lr) in enumerate(zip(self.losses, self.clean_accs, self.lrs), 1):
            lines.append(f"{e},{float(loss)!r},{float(acc)!r},{float(lr)!r}")
        return "\n".join(lines) + "\n"


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite.  Carries the partial report
    and the parameter state at the end of the last finite epoch."""

    def __init__(self, message, report, last_state):
        super().__init__(message)
        self.report = report
        self.last_state = last_state


def _count_sigmas(counter, indices, spec, epoch):
    for s in drawn_sigmas(indices, spec, epoch=epoch):
        counter[float(s)] = counter.get(float(s), 0) + 1


def _run(net, dataset, plan, eval_dataset, head_only, checkpoint_path):
    if eval_dataset is None:
        eval_dataset = dataset
    trained = net.layers[-1].params() if head_only else net.params()
    opt = SgdOptimizer(trained, plan.sgd)
    report = TrainReport(stage=plan.stage, seed=plan.seed)
    last_state = {k: v.copy() for k, v in net.state().items()}
    started = time.perf_counter()
    n = len(dataset)
    batch = plan.sgd.batch_size
    steps_per_epoch = max(1, -(-n // batch))

    for epoch in range(plan.epochs):
        order = np.random.default_rng((plan.seed, epoch)).permutation(n)
        epoch_loss = 0.0
        try:
            for step, start in enumerate(range(0, n, batch)):
                idx = order[start:start + batch]
                x = sample_noisy_batch(dataset, idx, plan.noise, epoch=epoch)
                _count_sigmas(report.sigma_counts, idx, plan.noise, epoch)
                net.zero_grad()
                loss = net.loss_backward(x, dataset.labels[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError(f"loss became {loss}")
                opt.step(epoch + step / steps_per_epoch)
                epoch_loss += loss * idx.size
            # the last step of an epoch can blow up parameters with no
            # forward pass left to notice, so check state explicitly
            for key, value in net.state().items():
                if not np.all(np.isfinite(value)):
                    raise FloatingPointError(f"{key} became non-finite")
            if (epoch + 1) % plan.eval_every == 0 or epoch == plan.epochs - 1:
                acc = net.accuracy(eval_dataset.images, eval_dataset.labels)
            else:
                acc = float("nan")
        except FloatingPointError as e:
            report.wall_clock_seconds = time.perf_counter() - started
            report.diverged_at_epoch = epoch + 1
            net.load_state(last_state)
            if checkpoint_path is not None:
                report.checkpoint_path = save_checkpoint(net, checkpoint_path)
            raise TrainingDiverged(
                f"training diverged in epoch {epoch + 1}: {e}", report, last_state) from e

        report.losses.append(epoch_loss / n)
        report.lrs.append(lr_at(plan.sgd, float(epoch)))
        report.clean_accs.append(acc)
        last_state = {k: v.copy() for k, v in net.state().items()}

    report.wall_clock_seconds = time.perf_counter() - started
    if checkpoint_path is not None:
        report.checkpoint_path = save_checkpoint(net, checkpoint_path)
    return report


def pretrain(net, upstream, plan, eval_dataset=None, checkpoint_path=None):
    """Train every parameter of the network on the upstream task, drawing
    each batch through the plan's noise spec.  Returns the TrainReport; the
    network is trained in place."""
    if plan.stage != "pretrain":
        raise ValueError(f"pretrain called with a {plan.stage!r} plan")
    return _run(net, upstream, plan, eval_dataset, head_only=False,
                checkpoint_path=checkpoint_path)


def finetune(net, downstream, plan, eval_dataset=None, checkpoint_path=None):
    """Fine-tune on the downstream task (clean images unless the plan's
    ablation flag was set).  fixed_feature mode updates only the head."""
    if plan.stage != "finetune":
        raise ValueError(f"finetune called with a {plan.stage!r} plan")
    return _run(net, downstream, plan, eval_dataset,
                head_only=plan.finetune_mode == "fixed_feature",
                checkpoint_path=checkpoint_path)


def swap_head(net, new_num_classes, seed):
    """New network for a new task: body parameters (and norm statistics)
    copied verbatim, head re-initialized for the new class count."""
    if new_num_classes < 2:
        raise ValueError("the new head needs at least 2 classes")
    fresh = Network(net.spec.with_head(new_num_classes))
    head_index = len(fresh.layers) - 1
    old_state = net.state()
    state = {key: (value if key.startswith(f"{head_index}.") else old_state[key])
             for key, value in fresh.state().items()}
    fresh.load_state(state)
    fresh.layers[head_index].init_parameters(np.random.default_rng(seed))
    return fresh


def lr_sweep(start_net, dataset, plan, lrs=(0.1, 0.01, 0.001), eval_dataset=None):
    """Run the same plan once per learning rate, each arm starting from a
    bit-identical copy of start_net.  All reports are retained; the arm with
    the best final clean accuracy wins."""
    start_state = {k: v.copy() for k, v in start_net.state().items()}
    runner = pretrain if plan.stage == "pretrain" else finetune
    reports, nets = {}, {}
    for lr in lrs:
        arm = Network(start_net.spec)
        arm.load_state(start_state)
        arm_plan = replace(plan, sgd=replace(plan.sgd, base_lr=float(lr)))
        reports[float(lr)] = runner(arm, dataset, arm_plan, eval_dataset=eval_dataset)
        nets[float(lr)] = arm
    best = max(reports, key=lambda lr: reports[lr].final_clean_acc)
    return nets[best], best, reports
