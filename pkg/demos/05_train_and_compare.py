"""End-to-end: train the attention model and the plain baseline, compare.

Uses reduced widths and few epochs so the whole script runs in well under
a minute; the full-size protocol lives in the acceptance suite.

Run:  python3 demos/05_train_and_compare.py
"""

import numpy as np

from canet import (
    AttentionConfig,
    TrainConfig,
    build_xception_lite,
    compare_models,
    evaluate_model,
    freeze_layers,
    generate_synthetic_dataset,
    model_forward,
    stratified_split,
    train_model,
)
from canet.tensor import Tensor

ds = generate_synthetic_dataset(n_per_class=60, size=32, seed=11)
split = stratified_split(ds.labels, test_fraction=0.2, seed=11)
print(f"training on {len(split.train)} images, testing on {len(split.test)}")

WIDTHS, HIDDEN = [16, 32, 64], 128
reports = []
for name, attention in (("channel_attention", True), ("no_attention_baseline", False)):
    cfg = AttentionConfig(channels=WIDTHS[-1], heads=8, reduction=8) if attention else None
    model, params = build_xception_lite(WIDTHS, cfg, num_classes=2, seed=11,
                                        input_size=32, hidden_units=HIDDEN)
    freeze_layers(model, 0.0)  # training from scratch: nothing to freeze
    tcfg = TrainConfig(max_epochs=8, seed=11, freeze_fraction=0.0)
    params, history = train_model(model, params, ds, split, tcfg)
    report = evaluate_model(model, params, ds, split.test)
    reports.append((name, report))
    print(f"\n== {name}")
    for epoch, (tl, ta, vl, va) in enumerate(zip(history.train_loss, history.train_acc,
                                                 history.val_loss, history.val_acc), 1):
        print(f"  epoch {epoch}: train loss {tl:.4f} acc {ta:5.1f}%  "
              f"| test loss {vl:.4f} acc {va:5.1f}%")

print("\n" + compare_models(reports).to_text())

# Layer freezing demo: with 70% of the parameterized layers frozen, only
# the attention block and the classification head keep training.
cfg = AttentionConfig(channels=WIDTHS[-1], heads=8, reduction=8)
model, params = build_xception_lite(WIDTHS, cfg, num_classes=2, seed=11,
                                    input_size=32, hidden_units=HIDDEN)
freeze_layers(model, 0.7)
frozen = [l.name for l in model.parameterized_layers() if not l.trainable]
live = [l.name for l in model.parameterized_layers() if l.trainable]
print(f"\nfreeze_layers(0.7): {len(frozen)} frozen ({frozen[0]}..{frozen[-1]}), "
      f"trainable: {live}")

probs = model_forward(model, params, Tensor(ds.images[:4]))
print("probability rows sum to 1:", np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6))
