"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Criterion 5 trains ten full desk-scale models and
dominates the suite's runtime (several minutes on two cores).
"""

import json
import time

import numpy as np
import pytest

from canet.attention import (
    AttentionConfig,
    AttentionParams,
    attention_forward,
    compute_channel_gate,
    init_attention_params,
)
from canet.cli import main
from canet.data import (
    generate_synthetic_dataset,
    read_dataset_archive,
    stratified_split,
    write_dataset_archive,
)
from canet.layers import (
    ConvParams,
    conv2d,
    depthwise_conv2d,
    global_avg_pool2d,
    max_pool2d,
    pointwise_conv2d,
    separable_conv2d,
    weighted_global_avg_pool,
)
from canet.model import (
    CheckpointError,
    build_xception_lite,
    freeze_layers,
    load_checkpoint,
    save_checkpoint,
)
from canet.tensor import Tensor
from canet.training import (
    TrainConfig,
    confusion_rates,
    evaluate_model,
    metrics_from_confusion,
    train_model,
)
from canet.verification import run_gradient_check_suite

from oracles import (
    conv2d_naive,
    depthwise_conv2d_naive,
    global_avg_pool_naive,
    max_pool2d_naive,
)

DATA_SEED = 2024
BASE_SEED = 100


def report(criterion, passed, detail):
    print(f"\n[ACCEPTANCE {criterion}] {'PASS' if passed else 'FAIL'}: {detail}",
          flush=True)
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# criterion 5 fixture: ten desk-scale training runs shared by the assertions

@pytest.fixture(scope="module")
def desk_scale_runs():
    ds = generate_synthetic_dataset(250, 32, seed=DATA_SEED)

    def one_run(seed, attention):
        cfg = AttentionConfig(channels=128, heads=16, reduction=8) if attention else None
        split = stratified_split(ds.labels, 0.2, seed=seed)
        assert len(split.train) == 400 and len(split.test) == 100
        model, params = build_xception_lite([32, 64, 128], cfg, num_classes=2,
                                            seed=seed, input_size=32)
        freeze_layers(model, 0.0)  # no pretrained weights, so nothing to freeze
        tcfg = TrainConfig(max_epochs=30, seed=seed, freeze_fraction=0.0)
        start = time.monotonic()
        params, history = train_model(model, params, ds, split, tcfg)
        elapsed = time.monotonic() - start
        final = evaluate_model(model, params, ds, split.test).accuracy_pct
        return history, final, elapsed

    results = {"attention": [], "baseline": []}
    for i in range(5):
        results["attention"].append(one_run(BASE_SEED + i, attention=True))
        results["baseline"].append(one_run(BASE_SEED + i, attention=False))
    return results


class TestCriterion1:
    def test_paper_scale_out_of_scope_substitutes_exist(self):
        # The published 96.99% accuracy and model ranking rest on a clinical CT
        # dataset and ImageNet-pretrained weights, both out of scope here and
        # NOT reproduced; a seeded synthetic dataset and a seeded reduced
        # backbone stand in, with property-based acceptance below.
        ds = generate_synthetic_dataset(2, 16, seed=0)
        assert ds.source == "synthetic:0"
        model, params = build_xception_lite(
            [4, 8], AttentionConfig(channels=8, heads=2, reduction=4), 2, seed=0,
            input_size=8, hidden_units=8)
        assert model.attention is not None and len(params) > 0
        report(1, True, "paper-scale results are declared non-reproducible; "
                        "synthetic data + seeded reduced backbone substituted")


class TestCriterion2:
    def test_gradient_check_suite(self):
        start = time.monotonic()
        results = run_gradient_check_suite()  # 5 seeds per op, 1e-5 / 1e-4
        elapsed = time.monotonic() - start
        names = {r.name for r in results}
        required = {"dense_relu", "dense_sigmoid", "conv2d_same_s1", "conv2d_valid_s2",
                    "depthwise_conv2d", "pointwise_conv2d", "separable_conv2d",
                    "max_pool2d", "global_avg_pool2d", "weighted_global_avg_pool",
                    "softmax", "softmax_cross_entropy", "attention_pooled",
                    "attention_spatial", "xception_lite_tiny"}
        missing = required - names
        failed = [f"{r.name}={r.max_error:.2e}" for r in results if not r.passed]
        ok = not missing and not failed and elapsed < 120.0
        report(2, ok, f"{len(results)} checks, worst layer error "
                      f"{max(r.max_error for r in results if r.name != 'xception_lite_tiny'):.2e}, "
                      f"runtime {elapsed:.1f}s"
                      + (f"; missing {missing}" if missing else "")
                      + (f"; failed {failed}" if failed else ""))


class TestCriterion3:
    def test_operator_oracles(self):
        rng = np.random.default_rng(77)
        checked = 0
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(1, 3))
            h, w = int(rng.integers(3, 8)), int(rng.integers(3, 8))
            c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            kh, kw = int(rng.integers(1, min(3, h) + 1)), int(rng.integers(1, min(3, w) + 1))
            stride = int(rng.integers(1, 3))
            padding = ("same", "valid")[int(rng.integers(0, 2))]
            x = rng.standard_normal((n, h, w, c_in))

            k = rng.standard_normal((kh, kw, c_in, c_out))
            b = rng.standard_normal(c_out)
            got = conv2d(Tensor(x, dtype=np.float64),
                         ConvParams(Tensor(k, dtype=np.float64),
                                    Tensor(b, dtype=np.float64), stride, padding)).data
            worst = max(worst, np.abs(got - conv2d_naive(x, k, b, stride, padding)).max())

            dk = rng.standard_normal((kh, kw, c_in))
            db = rng.standard_normal(c_in)
            got = depthwise_conv2d(Tensor(x, dtype=np.float64),
                                   ConvParams(Tensor(dk, dtype=np.float64),
                                              Tensor(db, dtype=np.float64),
                                              stride, padding)).data
            worst = max(worst,
                        np.abs(got - depthwise_conv2d_naive(x, dk, db, stride, padding)).max())

            pk = rng.standard_normal((1, 1, c_in, c_out))
            got = pointwise_conv2d(Tensor(x, dtype=np.float64),
                                   ConvParams(Tensor(pk, dtype=np.float64),
                                              Tensor(b, dtype=np.float64))).data
            worst = max(worst, np.abs(got - conv2d_naive(x, pk, b, 1, "same")).max())

            got = max_pool2d(Tensor(x, dtype=np.float64)).data
            worst = max(worst, np.abs(got - max_pool2d_naive(x)).max())

            got = global_avg_pool2d(Tensor(x, dtype=np.float64)).data
            worst = max(worst, np.abs(got - global_avg_pool_naive(x)).max())
            checked += 1

        # separable must equal its composition bit-exactly
        bitexact = True
        for _ in range(5):
            x32 = rng.standard_normal((2, 6, 6, 3)).astype(np.float32)
            dp = ConvParams(Tensor(rng.standard_normal((3, 3, 3)).astype(np.float32)),
                            Tensor(rng.standard_normal(3).astype(np.float32)))
            pp = ConvParams(Tensor(rng.standard_normal((1, 1, 3, 4)).astype(np.float32)),
                            Tensor(rng.standard_normal(4).astype(np.float32)))
            fused = separable_conv2d(Tensor(x32), dp, pp).data
            composed = pointwise_conv2d(depthwise_conv2d(Tensor(x32), dp), pp).data
            bitexact &= np.array_equal(fused, composed)

        # weighted pooling with zero logits reduces to plain pooling
        uniform_gap = 0.0
        for _ in range(5):
            x = rng.standard_normal((2, 5, 5, 4))
            wg = weighted_global_avg_pool(Tensor(x, dtype=np.float64),
                                          Tensor(np.zeros((5, 5)), dtype=np.float64)).data
            gp = global_avg_pool2d(Tensor(x, dtype=np.float64)).data
            uniform_gap = max(uniform_gap, np.abs(wg - gp).max())

        ok = checked >= 20 and worst < 1e-5 and bitexact and uniform_gap < 1e-7
        report(3, ok, f"{checked} random shapes, worst oracle gap {worst:.2e}, "
                      f"separable bit-exact {bitexact}, uniform-logit gap "
                      f"{uniform_gap:.2e}")


class TestCriterion4:
    def test_attention_invariants(self):
        rng = np.random.default_rng(88)
        cfg = AttentionConfig(channels=16, heads=16, reduction=8)
        params = init_attention_params(cfg, (4, 4), seed=9)
        # push parameters off the init fixed point
        for tensor in params.named_tensors().values():
            tensor.data = tensor.data + 0.5 * rng.standard_normal(
                tensor.shape).astype(np.float32)

        pooled = Tensor(3.0 * rng.standard_normal((8, 16)).astype(np.float32))
        gate = compute_channel_gate(pooled, params, cfg).data
        in_unit = bool(np.all(gate > 0.0) and np.all(gate < 1.0))

        perm = list(rng.permutation(16))
        shuffled = AttentionParams(spatial_logits=params.spatial_logits,
                                   heads=[params.heads[i] for i in perm],
                                   post_weight=params.post_weight,
                                   post_bias=params.post_bias)
        permuted = compute_channel_gate(pooled, shuffled, cfg).data
        perm_exact = bool(np.array_equal(gate, permuted))

        x = rng.standard_normal((3, 4, 4, 16)).astype(np.float32)
        init_p = init_attention_params(cfg, (4, 4), seed=10)
        pooled_cfg = AttentionConfig(channels=16, heads=16, reduction=8,
                                     gate_mode="pooled")
        spatial_cfg = AttentionConfig(channels=16, heads=16, reduction=8,
                                      gate_mode="spatial")
        out_pooled = attention_forward(Tensor(x), init_p, pooled_cfg).data
        gap = global_avg_pool2d(Tensor(x)).data
        pooled_gap = np.abs(out_pooled.reshape(3, 16) - 0.5 * gap).max()
        out_spatial = attention_forward(Tensor(x), init_p, spatial_cfg).data
        spatial_gap = np.abs(out_spatial - 0.5 * x).max()

        ok = in_unit and perm_exact and pooled_gap < 1e-6 and spatial_gap < 1e-6
        report(4, ok, f"gate in (0,1): {in_unit}; permutation bit-identical: "
                      f"{perm_exact}; init equivalence gaps pooled {pooled_gap:.2e}, "
                      f"spatial {spatial_gap:.2e}")


class TestCriterion5:
    def test_desk_scale_training(self, desk_scale_runs):
        history0, final0, elapsed0 = desk_scale_runs["attention"][0]
        best_epoch = int(np.argmax(history0.val_acc)) + 1
        reached = max(history0.val_acc) >= 95.0
        in_time = elapsed0 < 600.0

        attn_mean = float(np.mean([r[1] for r in desk_scale_runs["attention"]]))
        base_mean = float(np.mean([r[1] for r in desk_scale_runs["baseline"]]))
        non_inferior = attn_mean >= base_mean - 2.0

        ok = reached and in_time and non_inferior
        report(5, ok, f"seed {BASE_SEED}: {max(history0.val_acc):.1f}% test accuracy "
                      f"(epoch {best_epoch}/30) in {elapsed0:.0f}s; attention mean "
                      f"{attn_mean:.2f}% vs baseline mean {base_mean:.2f}% over 5 runs")


class TestCriterion6:
    def test_metrics_identities(self):
        identity = True
        rng = np.random.default_rng(99)
        for _ in range(50):
            confusion = rng.integers(0, 200, (2, 2))
            if confusion.sum() == 0 or confusion.sum(axis=1).min() == 0:
                continue
            r = metrics_from_confusion(confusion)
            identity &= (r.top1_error_pct == 100.0 - r.accuracy_pct)
            identity &= (int(r.confusion.sum()) == int(confusion.sum()))

        hand = metrics_from_confusion(np.array([[45, 5], [10, 40]]))
        p0, r0, p1, r1 = 45 / 55, 45 / 50, 40 / 45, 40 / 50
        hand_ok = (abs(hand.per_class_precision[0] - p0) < 1e-12
                   and abs(hand.per_class_recall[0] - r0) < 1e-12
                   and abs(hand.per_class_precision[1] - p1) < 1e-12
                   and abs(hand.per_class_recall[1] - r1) < 1e-12
                   and abs(hand.f1_macro - (2 * p0 * r0 / (p0 + r0)
                                            + 2 * p1 * r1 / (p1 + r1)) / 2) < 1e-12)

        # integer confusion matrix at N=496 whose rates round to the published
        # 1.8% false-positive / 1.2% false-negative pair; search over the row
        # split, with the error counts pinned by the target rates
        match = None
        for negatives in range(1, 496):
            positives = 496 - negatives
            fp = round(0.018 * negatives)
            fn = round(0.012 * positives)
            if not (1 <= fp <= negatives and 1 <= fn <= positives):
                continue
            if (round(100.0 * fp / negatives, 1) == 1.8
                    and round(100.0 * fn / positives, 1) == 1.2):
                match = np.array([[negatives - fp, fp], [fn, positives - fn]])
                break
        rates_ok = False
        if match is not None:
            rates = confusion_rates(match)
            rates_ok = (round(rates["false_positive_rate"], 1) == 1.8
                        and round(rates["false_negative_rate"], 1) == 1.2
                        and match.sum() == 496)

        ok = identity and hand_ok and rates_ok
        report(6, ok, f"top1==100-accuracy and count identities on random matrices: "
                      f"{identity}; hand precision/recall/F1 at 1e-12: {hand_ok}; "
                      f"reconstructed N=496 matrix rounds to 1.8%/1.2%: {rates_ok}")


class TestCriterion7:
    def test_split_arithmetic(self):
        labels = np.array([0] * 1252 + [1] * 1230)
        split = stratified_split(labels, 0.2, seed=123)
        again = stratified_split(labels, 0.2, seed=123)
        counts = ((labels[split.test] == 0).sum(), (labels[split.test] == 1).sum())
        deterministic = (np.array_equal(split.test, again.test)
                         and np.array_equal(split.train, again.train))
        ok = counts == (250, 246) and len(split.test) == 496 and deterministic
        report(7, ok, f"test counts per class {counts}, total {len(split.test)}, "
                      f"deterministic {deterministic}")


class TestCriterion8:
    def test_serialization_roundtrips(self, tmp_path):
        model, params = build_xception_lite(
            [4, 8], AttentionConfig(channels=8, heads=2, reduction=4), 2, seed=3,
            input_size=8, hidden_units=8)
        ckpt = tmp_path / "model.canw"
        save_checkpoint(params, {"model": model.to_dict()}, ckpt)
        loaded, _ = load_checkpoint(ckpt)
        ckpt_exact = all(np.array_equal(loaded[n].data, params[n].data) for n in params)

        ds = generate_synthetic_dataset(3, 16, seed=4)
        arch = tmp_path / "data.cads"
        write_dataset_archive(ds, arch)
        back = read_dataset_archive(arch)
        arch_exact = (np.array_equal(back.images, ds.images)
                      and np.array_equal(back.labels, ds.labels)
                      and back.class_names == ds.class_names)

        fail_closed = 0
        corrupt = tmp_path / "corrupt.bin"
        for source, reader, error in ((ckpt, load_checkpoint, CheckpointError),
                                      (arch, read_dataset_archive, Exception)):
            blob = source.read_bytes()
            for mutation in (b"XXXX" + blob[4:], blob[:-7], blob + b"\x00"):
                corrupt.write_bytes(mutation)
                try:
                    reader(corrupt)
                except error:
                    fail_closed += 1
        ok = ckpt_exact and arch_exact and fail_closed == 6
        report(8, ok, f"checkpoint bit-exact {ckpt_exact}, archive bit-exact "
                      f"{arch_exact}, {fail_closed}/6 corruptions rejected")


class TestCriterion9:
    def test_train_reproducible_from_config_echo(self, tmp_path):
        data = tmp_path / "data.cads"
        flags = ["--widths", "8,16", "--hidden-units", "16", "--heads", "2",
                 "--reduction", "4", "--input-size", "16", "--freeze-fraction", "0",
                 "--max-epochs", "2", "--batch-size", "8"]
        assert main(["synth-data", "--outdir", str(tmp_path), "--dataset", str(data),
                     "--n-per-class", "10", "--input-size", "16", "--seed", "31"]) == 0
        first = tmp_path / "first"
        assert main(["train", "--dataset", str(data), "--outdir", str(first),
                     "--seed", "31", *flags]) == 0
        second = tmp_path / "second"
        assert main(["train", "--config", str(first / "resolved_config.json"),
                     "--outdir", str(second)]) == 0
        metrics_match = ((first / "metrics.json").read_bytes()
                         == (second / "metrics.json").read_bytes())
        cfg_a = json.loads((first / "resolved_config.json").read_text())
        cfg_b = json.loads((second / "resolved_config.json").read_text())
        cfg_a.pop("output_dir"), cfg_b.pop("output_dir")
        payload = json.loads((first / "metrics.json").read_text())
        ok = metrics_match and cfg_a == cfg_b and "accuracy_pct" in payload
        report(9, ok, f"metrics JSON byte-identical across re-run from echoed "
                      f"config: {metrics_match}")
