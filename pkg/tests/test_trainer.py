"""Training pipeline: plan validation, determinism, divergence handling,
head swapping, the fixed-feature freeze contract, and noise purity."""

import numpy as np
import pytest

import smoothcert as sc

SGD = sc.SgdConfig(base_lr=0.05, epochs=3, warmup_epochs=1, batch_size=16)


def small_setup(norm_kind="layer", num_classes=4, per_class=12, seed=0):
    ds = sc.synth_shapes(num_classes=num_classes, per_class=per_class, size=8, seed=seed)
    spec = sc.conv_classifier(input_shape=(1, 8, 8), channels=4, blocks=1,
                              norm_kind=norm_kind, num_classes=num_classes)
    return ds, sc.Network(spec, seed=1)


def clean_plan(stage="pretrain", epochs=3, **kwargs):
    sgd = sc.SgdConfig(base_lr=0.05, epochs=epochs,
                       warmup_epochs=min(1, epochs - 1), batch_size=16)
    return sc.TrainPlan(stage=stage, noise=sc.NoiseSpec.clean(seed=5), sgd=sgd, **kwargs)


# -------------------------------------------------------------------- plan


def test_plan_validation():
    with pytest.raises(ValueError, match="stage"):
        sc.TrainPlan(stage="warmup", noise=sc.NoiseSpec.clean(), sgd=SGD)
    with pytest.raises(ValueError, match="finetune_mode"):
        sc.TrainPlan(stage="pretrain", noise=sc.NoiseSpec.clean(), sgd=SGD,
                     finetune_mode="full_network")
    with pytest.raises(ValueError, match="finetune_mode"):
        sc.TrainPlan(stage="finetune", noise=sc.NoiseSpec.clean(), sgd=SGD,
                     finetune_mode="half")
    with pytest.raises(ValueError, match="eval_every"):
        sc.TrainPlan(stage="pretrain", noise=sc.NoiseSpec.clean(), sgd=SGD, eval_every=0)
    plan = sc.TrainPlan(stage="finetune", noise=sc.NoiseSpec.clean(), sgd=SGD)
    assert plan.finetune_mode == "full_network"
    assert plan.epochs == SGD.epochs


def test_noisy_finetune_needs_ablation_flag():
    noisy = sc.NoiseSpec(sigmas=(0.25,), seed=0)
    with pytest.raises(ValueError, match="allow_noisy_finetune"):
        sc.TrainPlan(stage="finetune", noise=noisy, sgd=SGD)
    plan = sc.TrainPlan(stage="finetune", noise=noisy, sgd=SGD,
                        allow_noisy_finetune=True)
    assert plan.noise is noisy
    # pretraining with noise never needs the flag
    sc.TrainPlan(stage="pretrain", noise=noisy, sgd=SGD)


def test_stage_mismatch_rejected():
    ds, net = small_setup()
    with pytest.raises(ValueError, match="pretrain"):
        sc.pretrain(net, ds, clean_plan(stage="finetune"))
    with pytest.raises(ValueError, match="finetune"):
        sc.finetune(net, ds, clean_plan(stage="pretrain"))


# ------------------------------------------------------------------ reports


def test_report_shape_and_csv():
    ds, net = small_setup()
    report = sc.pretrain(net, ds, clean_plan())
    assert report.epochs == 3
    assert len(report.clean_accs) == len(report.lrs) == 3
    assert report.wall_clock_seconds > 0
    assert report.lrs[0] == 0.0  # warmup starts from zero
    csv = report.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "epoch,loss,clean_acc,lr"
    assert len(lines) == 4 and lines[1].startswith("1,")


def test_eval_every_skips_but_keeps_final():
    ds, net = small_setup()
    report = sc.pretrain(net, ds, clean_plan(eval_every=2))
    assert np.isnan(report.clean_accs[0])
    assert not np.isnan(report.clean_accs[1])
    assert not np.isnan(report.clean_accs[2])  # final epoch always evaluated
    assert report.final_clean_acc == report.clean_accs[2]


def test_same_seed_same_report_and_params():
    ds, _ = small_setup()

    def run():
        _, net = small_setup()
        report = sc.pretrain(net, ds, clean_plan())
        return report, [p.data.copy() for p in net.params()]

    r1, p1 = run()
    r2, p2 = run()
    assert r1.losses == r2.losses
    assert r1.clean_accs == r2.clean_accs
    assert r1.to_csv() == r2.to_csv()
    for a, b in zip(p1, p2):
        assert np.array_equal(a, b)


def test_training_reduces_loss_and_learns():
    ds, net = small_setup(num_classes=3, per_class=30)
    sgd = sc.SgdConfig(base_lr=0.1, epochs=8, warmup_epochs=1, batch_size=16)
    plan = sc.TrainPlan(stage="pretrain", noise=sc.NoiseSpec.clean(seed=2), sgd=sgd)
    report = sc.pretrain(net, ds, plan)
    assert report.losses[-1] < report.losses[0]
    assert report.final_clean_acc >= 0.9


def test_degenerate_noise_set_equals_clean_training():
    ds, _ = small_setup()
    zero_noise = sc.NoiseSpec(sigmas=(0.0,), weights=(1.0,), seed=7)

    _, net_a = small_setup()
    ra = sc.pretrain(net_a, ds, sc.TrainPlan(stage="pretrain", noise=zero_noise, sgd=SGD))
    _, net_b = small_setup()
    rb = sc.pretrain(net_b, ds, sc.TrainPlan(stage="pretrain",
                                             noise=sc.NoiseSpec.clean(seed=7), sgd=SGD))
    assert ra.losses == rb.losses
    for a, b in zip(net_a.params(), net_b.params()):
        assert np.array_equal(a.data, b.data)
    assert set(ra.sigma_counts) == {0.0}
    assert ra.sigma_counts[0.0] == len(ds) * 3


def test_mixed_noise_instrumentation_counts_every_sample():
    ds, net = small_setup()
    noisy = sc.NoiseSpec.mixed(seed=3)
    report = sc.pretrain(net, ds, sc.TrainPlan(stage="pretrain", noise=noisy, sgd=SGD))
    assert sum(report.sigma_counts.values()) == len(ds) * 3
    assert set(report.sigma_counts) <= set(noisy.sigmas)
    assert len(report.sigma_counts) == 4  # all levels drawn at least once


def test_checkpoint_written_at_end(tmp_path):
    ds, net = small_setup()
    path = str(tmp_path / "pre.ckpt")
    report = sc.pretrain(net, ds, clean_plan(), checkpoint_path=path)
    assert report.checkpoint_path == path
    back = sc.load_checkpoint(path)
    for key, value in net.state().items():
        assert np.array_equal(value, back.state()[key])


# -------------------------------------------------------------- divergence


def test_divergence_aborts_with_last_finite_state(tmp_path):
    ds, net = small_setup()
    # absurd learning rate forces the loss to blow up
    sgd = sc.SgdConfig(base_lr=1e9, epochs=4, batch_size=16)
    plan = sc.TrainPlan(stage="pretrain", noise=sc.NoiseSpec.clean(seed=1), sgd=sgd)
    path = str(tmp_path / "diverged.ckpt")
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(sc.TrainingDiverged) as info:
        sc.pretrain(net, ds, plan, checkpoint_path=path)
    err = info.value
    assert err.report.diverged_at_epoch is not None
    assert err.report.epochs < 4
    back = sc.load_checkpoint(path)
    for key, value in err.last_state.items():
        assert np.array_equal(value, back.state()[key])
        assert np.all(np.isfinite(value)), key


# --------------------------------------------------------------- swap_head


def test_swap_head_copies_body_and_reinits_head():
    ds, net = small_setup(num_classes=4)
    sc.pretrain(net, ds, clean_plan())
    swapped = sc.swap_head(net, 3, seed=11)
    assert swapped.num_classes == 3
    assert swapped.spec.layers[-1].fan_out == 3
    head_index = len(net.layers) - 1
    old_state = net.state()
    for key, value in swapped.state().items():
        if key.startswith(f"{head_index}."):
            continue
        assert np.array_equal(value, old_state[key]), key
    assert swapped.layers[-1].weight.shape == (3, net.layers[-1].weight.shape[1])
    assert np.all(swapped.layers[-1].bias.data == 0.0)
    assert float(np.abs(swapped.layers[-1].weight.data).sum()) > 0.0


def test_swap_head_same_class_count_differs_only_in_head():
    _, net = small_setup(num_classes=4)
    swapped = sc.swap_head(net, 4, seed=12)
    head_index = len(net.layers) - 1
    assert not np.array_equal(swapped.layers[-1].weight.data,
                              net.layers[-1].weight.data)
    for key, value in net.state().items():
        if not key.startswith(f"{head_index}."):
            assert np.array_equal(value, swapped.state()[key])


def test_swap_head_deterministic_in_seed():
    _, net = small_setup()
    a = sc.swap_head(net, 3, seed=5)
    b = sc.swap_head(net, 3, seed=5)
    c = sc.swap_head(net, 3, seed=6)
    assert np.array_equal(a.layers[-1].weight.data, b.layers[-1].weight.data)
    assert not np.array_equal(a.layers[-1].weight.data, c.layers[-1].weight.data)


def test_swap_head_rejects_tiny_class_count():
    _, net = small_setup()
    with pytest.raises(ValueError, match="classes"):
        sc.swap_head(net, 1, seed=0)


# ---------------------------------------------------------------- finetune


def test_one_epoch_finetune_reports_one_epoch():
    ds, net = small_setup()
    report = sc.finetune(net, ds, clean_plan(stage="finetune", epochs=1))
    assert report.epochs == 1


def test_fixed_feature_freeze_contract():
    ds, net = small_setup(norm_kind="batch")
    sc.pretrain(net, ds, clean_plan())
    swapped = sc.swap_head(net, 4, seed=9)
    before = {k: v.copy() for k, v in swapped.state().items()}
    plan = clean_plan(stage="finetune", finetune_mode="fixed_feature")
    sc.finetune(swapped, ds, plan)
    head_index = len(swapped.layers) - 1
    after = swapped.state()
    stats = ("running_mean", "running_var", "batches_tracked")
    for key in before:
        if key.startswith(f"{head_index}."):
            continue
        if key.split(".", 1)[1] in stats:
            continue  # running statistics are state, not parameters
        assert np.array_equal(before[key], after[key]), key
    # the head did move
    assert not np.array_equal(before[f"{head_index}.weight"], after[f"{head_index}.weight"])
    # and batch-norm statistics kept tracking
    bn_keys = [k for k in before if k.endswith("batches_tracked")]
    assert bn_keys and all(after[k] > before[k] for k in bn_keys)


def test_full_network_finetune_moves_body():
    ds, net = small_setup()
    sc.pretrain(net, ds, clean_plan())
    before = net.state()["0.weight"].copy()
    sc.finetune(net, ds, clean_plan(stage="finetune"))
    assert not np.array_equal(before, net.state()["0.weight"])


def test_finetune_noise_purity():
    ds, net = small_setup()
    report = sc.finetune(net, ds, clean_plan(stage="finetune"))
    assert set(report.sigma_counts) == {0.0}


# ---------------------------------------------------------------- lr sweep


def test_lr_sweep_retains_all_reports_and_picks_best():
    ds, net = small_setup(num_classes=3, per_class=20)
    sgd = sc.SgdConfig(base_lr=999.0, epochs=4, warmup_epochs=1, batch_size=16)
    plan = sc.TrainPlan(stage="pretrain", noise=sc.NoiseSpec.clean(seed=2), sgd=sgd)
    best_net, best_lr, reports = sc.lr_sweep(net, ds, plan, lrs=(0.1, 0.01, 0.001))
    assert set(reports) == {0.1, 0.01, 0.001}
    assert best_lr in reports
    best_acc = reports[best_lr].final_clean_acc
    assert all(best_acc >= r.final_clean_acc for r in reports.values())
    # arms start identically: the sweep must not mutate the starting network
    fresh_probe = sc.Network(net.spec)
    fresh_probe.load_state(net.state())
    assert np.array_equal(fresh_probe.state()["0.weight"], net.state()["0.weight"])
    # winner's parameters came from training, not from the start state
    assert not np.array_equal(best_net.state()["0.weight"], net.state()["0.weight"])
