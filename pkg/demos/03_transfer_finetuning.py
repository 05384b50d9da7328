"""Robustness transfers through clean-only fine-tuning.

Pretrain one body on eight upstream classes under mixed noise. Move it to a
three-class downstream task by swapping the classification head and
fine-tuning on *clean* downstream data only -- no noise ever shown during
transfer. The noise tolerance learned upstream survives in the body, so the
downstream model certifies, even though it never trained on noise.

Also contrasts the two transfer modes: full-network (every parameter moves)
and fixed-feature (body frozen, only the new head trains).
"""

import numpy as np

from smoothcert import (
    Network, NoiseSpec, SgdConfig, SmoothingParams, TrainPlan, certify,
    conv_classifier, finetune, make_transfer_pair, pretrain, swap_head,
    synth_shapes,
)

base_train = synth_shapes(num_classes=11, per_class=120, seed=1, split="train")
base_test = synth_shapes(num_classes=11, per_class=25, seed=2, split="test")
up_classes, down_classes = tuple(range(8)), (8, 9, 10)
up_train, down_train = make_transfer_pair(base_train, up_classes, down_classes, seed=3)
up_test, down_test = make_transfer_pair(base_test, up_classes, down_classes, seed=3)
print(f"upstream: {len(up_train)} images / {up_train.num_classes} classes; "
      f"downstream: {len(down_train)} images / {down_train.num_classes} classes")

spec = conv_classifier(input_shape=up_train.image_shape, channels=12, blocks=2,
                       norm_kind="layer", num_classes=up_train.num_classes)
body = Network(spec, seed=0)
pre_plan = TrainPlan(
    stage="pretrain",
    noise=NoiseSpec(sigmas=(0.0, 0.25, 0.5, 1.0), seed=4),
    sgd=SgdConfig(base_lr=0.1, epochs=12, warmup_epochs=2, batch_size=64),
    seed=5)
pre_report = pretrain(body, up_train, pre_plan, eval_dataset=up_test)
print(f"pretrained upstream under mixed noise: clean acc {pre_report.final_clean_acc:.3f}\n")

params = SmoothingParams(sigma=0.25, n0=64, n=500, alpha=0.001, seed=9)


def certified_fraction(net, eps=0.25, count=60):
    hits = 0
    for i in range(count):
        res = certify(net, down_test.images[i], params, input_id=i)
        ok = (not res.abstain and res.predicted == int(down_test.labels[i])
              and res.radius >= eps)
        hits += ok
    return hits / count


for mode in ("full_network", "fixed_feature"):
    net = swap_head(body, down_train.num_classes, seed=6)
    ft_plan = TrainPlan(stage="finetune", noise=NoiseSpec.clean(seed=4),
                        sgd=SgdConfig(base_lr=0.05, epochs=5, batch_size=32),
                        seed=7, finetune_mode=mode)
    ft_report = finetune(net, down_train, ft_plan, eval_dataset=down_test)
    frac = certified_fraction(net)
    print(f"{mode:>14}: clean acc {ft_report.final_clean_acc:.3f}, "
          f"certified@0.25 {frac:.3f}  (fine-tuned on clean data only)")

print("\nNeither fine-tune ever saw a noisy image; the certified accuracy")
print("comes entirely from the noise tolerance stored in the upstream body.")
