"""Training harness: determinism, metrics contracts, ablation/sweep drivers."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from trilabel.data import AugmentationConfig, SyntheticConfig, generate_synthetic, write_dataset
from trilabel.errors import ConfigurationError, DataFormatError, DomainError
from trilabel.harness import (ABLATION_VARIANTS, DatasetFiles, TrainConfig,
                              ablate, build_dataset, evaluate_checkpoint,
                              evaluate_params, sweep, train)
from trilabel.model import ModelParams

TINY_SYNTH = dict(num_labeled=21, num_unlabeled=84, num_test=70)


def tiny_config(**kw):
    base = dict(
        synthetic=SyntheticConfig(**TINY_SYNTH, seed=9),
        epochs=3, mu=2, batch_size=7, align_warmup_batches=2, seed=9,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults_validate(self):
        TrainConfig().validate()

    def test_alpha_above_gamma_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(alpha=0.9, gamma=0.86).validate()

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"not_a_field": 1})

    def test_round_trip_through_dict_and_yaml(self):
        cfg = tiny_config(temperature=0.42, use_text_loss=False)
        text = yaml.safe_dump(cfg.to_dict())
        back = TrainConfig.from_dict(yaml.safe_load(text))
        assert back == cfg


class TestTrain:
    def test_smoke_run_produces_expected_artifacts(self, tmp_path):
        cfg = tiny_config(checkpoint_interval=2, dump_buffer=True,
                          dump_pseudo_labels=True, record_step_stats=True)
        result = train(cfg, out_dir=tmp_path / "run")
        assert len(result.metrics) == cfg.epochs
        out = Path(result.out_dir)
        assert (out / "config.yaml").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "checkpoints" / "final.sitm").exists()
        assert (out / "checkpoints" / "epoch_0002.sitm").exists()
        assert (out / "buffer_labeled.sitf").exists()
        assert (out / "buffer_unlabeled.sitf").exists()
        assert (out / "pseudo_labels.tsv").exists()
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == cfg.epochs + 1  # header + one row per epoch
        summary = json.loads((out / "summary.json").read_text())
        assert summary["final_test_accuracy"] == result.final_test_accuracy

    def test_determinism_identical_metric_files(self, tmp_path):
        for name in ("a", "b"):
            train(tiny_config(), out_dir=tmp_path / name)
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b

    def test_different_seed_changes_trajectory(self, tmp_path):
        r1 = train(tiny_config(seed=1))
        r2 = train(tiny_config(seed=2))
        assert r1.metrics[-1].l_s != r2.metrics[-1].l_s

    def test_gamma_admissions_bounded_by_alpha_passes(self):
        cfg = tiny_config(record_step_stats=True, epochs=2)
        result = train(cfg)
        assert result.step_stats
        for passes, admits in result.step_stats:
            assert admits <= passes

    def test_training_from_files_and_hidden_truth(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(**TINY_SYNTH, seed=4))
        paths = {n: str(tmp_path / f"{n}.sitf")
                 for n in ("labeled", "unlabeled", "test", "anchors")}
        write_dataset(ds, paths["labeled"], paths["unlabeled"], paths["test"],
                      paths["anchors"])
        cfg = tiny_config(files=DatasetFiles(**paths))
        result = train(cfg)
        assert len(result.metrics) == cfg.epochs
        # hidden labels written to the unlabeled file surface as pseudo accuracy
        masked_epochs = [m for m in result.metrics if m.mask_pass_count > 0]
        for m in masked_epochs:
            assert not np.isnan(m.pseudo_label_accuracy)

    def test_training_without_hidden_truth_runs(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(**TINY_SYNTH, seed=4))
        paths = {n: str(tmp_path / f"{n}.sitf")
                 for n in ("labeled", "unlabeled", "test", "anchors")}
        write_dataset(ds, paths["labeled"], paths["unlabeled"], paths["test"],
                      paths["anchors"], include_hidden_labels=False)
        cfg = tiny_config(files=DatasetFiles(**paths))
        result = train(cfg)
        for m in result.metrics:
            assert np.isnan(m.pseudo_label_accuracy)

    def test_align_modes_run(self):
        for mode in ("marginal", "uniform", "off"):
            result = train(tiny_config(align_mode=mode, epochs=2))
            assert len(result.metrics) == 2

    def test_ablation_flag_combinations_run(self):
        for _, flags in ABLATION_VARIANTS:
            result = train(tiny_config(epochs=2, **flags))
            assert len(result.metrics) == 2
        result = train(tiny_config(epochs=2, literal_instance_prob=True))
        assert len(result.metrics) == 2

    def test_nan_loss_aborts_with_dump(self, tmp_path):
        cfg = tiny_config(lr=1e25, epochs=2, lr_schedule="constant")
        with pytest.raises(DomainError):
            train(cfg, out_dir=tmp_path / "explode")
        assert (tmp_path / "explode" / "nan_dump.json").exists()

    def test_probability_audit_records(self):
        cfg = tiny_config(check_probabilities=True, epochs=2)
        result = train(cfg)
        assert result.audit["count"] > 0
        assert result.audit["worst"] <= 1e-6

    def test_anchor_dimension_mismatch_rejected(self):
        ds = generate_synthetic(SyntheticConfig(**TINY_SYNTH, seed=4))
        bad = dataclasses.replace(tiny_config(), feature_dim=16, init_scheme="random")
        with pytest.raises(ConfigurationError):
            train(bad, dataset=ds)


class TestEvaluate:
    def test_untrained_zero_head_is_chance_level(self):
        ds = generate_synthetic(SyntheticConfig(**TINY_SYNTH, seed=10))
        params = ModelParams(np.eye(32), np.zeros(32), np.zeros((7, 32)), np.zeros(7))
        acc = evaluate_params(params, ds.test)
        # argmax of a uniform softmax is class 0 on every sample
        expected = np.mean([s.label == 0 for s in ds.test])
        assert acc == pytest.approx(expected)

    def test_zero_spread_reaches_perfect_accuracy(self, tmp_path):
        cfg = tiny_config(synthetic=SyntheticConfig(
            **TINY_SYNTH, seed=3, class_spread=0.0, confusable_pairs=[]),
            epochs=8)
        result = train(cfg, out_dir=tmp_path / "run")
        assert result.final_test_accuracy == 1.0

    def test_checkpoint_evaluation_round_trip(self, tmp_path):
        cfg = tiny_config()
        result = train(cfg, out_dir=tmp_path / "run")
        test_file = tmp_path / "test.sitf"
        ds = build_dataset(cfg)
        write_dataset(ds, tmp_path / "l.sitf", tmp_path / "u.sitf", test_file,
                      tmp_path / "a.sitf")
        acc = evaluate_checkpoint(result.checkpoint_path, test_file)
        # float32 storage can flip argmax only on exact ties; expect equality
        assert acc == pytest.approx(result.final_test_accuracy, abs=1e-9)

    def test_dimension_mismatch_is_format_error(self, tmp_path):
        result = train(tiny_config(), out_dir=tmp_path / "run")
        other = generate_synthetic(SyntheticConfig(
            num_labeled=7, num_unlabeled=14, num_test=7, input_dim=16, seed=2))
        write_dataset(other, tmp_path / "l.sitf", tmp_path / "u.sitf",
                      tmp_path / "t.sitf", tmp_path / "a.sitf")
        with pytest.raises(DataFormatError):
            evaluate_checkpoint(result.checkpoint_path, tmp_path / "t.sitf")


class TestAblate:
    def test_single_seed_emits_four_rows_with_zero_std(self, tmp_path):
        cfg = tiny_config(epochs=2)
        rows = ablate(cfg, out_dir=tmp_path / "abl")
        assert [r.variant for r in rows] == [v for v, _ in ABLATION_VARIANTS]
        assert all(r.std == 0.0 for r in rows)
        assert (tmp_path / "abl" / "ablation.csv").exists()
        assert (tmp_path / "abl" / "ablation.json").exists()

    def test_multi_seed_statistics(self):
        cfg = tiny_config(epochs=2, seeds=[1, 2])
        rows = ablate(cfg)
        for r in rows:
            assert len(r.accuracies) == 2
            assert r.mean == pytest.approx(np.mean(r.accuracies))
            assert r.std == pytest.approx(np.std(r.accuracies))

    def test_variants_share_datasets(self):
        # same seed list -> every variant trains on identical data, so the
        # semantic-only rows of two ablate calls must agree exactly
        cfg = tiny_config(epochs=2)
        rows1 = ablate(cfg)
        rows2 = ablate(tiny_config(epochs=2))
        assert rows1[0].accuracies == rows2[0].accuracies


class TestSweep:
    def test_alpha_sweep_runs_and_reports_epoch1_counts(self, tmp_path):
        cfg = tiny_config(epochs=2, alpha=0.6, gamma=0.86)
        points = sweep(cfg, "alpha", [0.6, 0.8], out_dir=tmp_path / "sw")
        assert [p.value for p in points] == [0.6, 0.8]
        for p in points:
            assert len(p.epoch1_mask_pass_counts) == 1
        assert (tmp_path / "sw" / "sweep.json").exists()

    def test_alpha_above_gamma_lifts_gamma(self):
        cfg = tiny_config(epochs=1, alpha=0.6, gamma=0.7)
        points = sweep(cfg, "alpha", [0.9])
        assert len(points) == 1  # would raise if gamma were left below alpha

    def test_single_point_grid(self):
        points = sweep(tiny_config(epochs=1), "gamma", [0.9])
        assert len(points) == 1

    def test_bad_parameter_rejected(self):
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(), "temperature", [0.1])

    def test_gamma_grid_below_alpha_rejected(self):
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(alpha=0.8), "gamma", [0.7])

    def test_out_of_range_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(), "alpha", [0.0])
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(), "alpha", [])


class TestBatchKernelEquivalence:
    def test_metrics_match_per_sample_semantics(self):
        # the vectorized trainer must agree with the per-sample operation
        # contracts; spot-check via the loss identity over recorded steps
        cfg = tiny_config(epochs=2, record_step_stats=True)
        result = train(cfg)
        for m in result.metrics:
            assert m.total == pytest.approx(
                m.l_s + cfg.lambda_text * m.l_t + cfg.lambda_unsup * m.l_u, abs=1e-9)
