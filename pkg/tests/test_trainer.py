import numpy as np
import pytest

from sketchreid.data import SynthConfig, synth_generate
from sketchreid.diffcore import OptimState
from sketchreid.errors import ConfigError, TrainingDiverged
from sketchreid.network import NetworkConfig, build_model
from sketchreid.trainer import (TrainConfig, apply_lambda_guard, check_spt_invariants,
                                lr_at, make_triplet_batches, train)

MICRO_NET = NetworkConfig(n_classes=4, n_stripes=2, stages=(2, 2), input_side=16,
                          n_angles=8, n_radii=8, max_radius=1.9)


def micro_samples(n_ids=4, imgs=2, seed=9):
    cfg = SynthConfig(n_identities=n_ids, images_per_camera=imgs, side=16, seed=seed)
    d = synth_generate(cfg)
    return list(zip(d.images, d.metas))


def micro_train_config(**overrides):
    base = dict(epochs_warmup=1, epochs_joint=1, epochs_refine=1, base_lr=0.01,
                spt_lr=1e-4, batch_triplets=8, anchors_per_id=2, seed=3)
    base.update(overrides)
    return TrainConfig(**base)


class TestLrSchedule:
    def test_epoch_zero_defaults(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == (0.05, 1e-4)

    def test_one_period_decay(self):
        cfg = TrainConfig()  # 20 epochs, period 10
        base, s = lr_at(10, cfg)
        assert abs(base - 0.005) < 1e-15 and abs(s - 1e-5) < 1e-18

    def test_two_period_decay(self):
        cfg = TrainConfig(lr_period=4)
        base, _ = lr_at(8, cfg)
        assert abs(base - 0.05 * 0.01) < 1e-15

    def test_negative_epoch_rejected(self):
        with pytest.raises(ConfigError):
            lr_at(-1, TrainConfig())


class TestTripletBatches:
    def test_two_identity_family_enumerable(self):
        samples = micro_samples(n_ids=2, imgs=1)
        # ids {0,1}; cameras A,B carry variant 0, camera C variant 1
        batches = make_triplet_batches(samples, 4, epoch_seed=1, anchors_per_id=2)
        for batch in batches:
            for a, p, n in batch:
                ma, mp, mn = samples[a][1], samples[p][1], samples[n][1]
                assert ma.identity == mp.identity
                assert mn.identity != ma.identity

    def test_same_seed_same_batches(self):
        samples = micro_samples()
        b1 = make_triplet_batches(samples, 4, epoch_seed=7, anchors_per_id=2)
        b2 = make_triplet_batches(samples, 4, epoch_seed=7, anchors_per_id=2)
        assert b1 == b2

    def test_positives_prefer_cross_variant_at_default_layout(self):
        # Metas shaped like the default benchmark (30 ids, cameras A/B on
        # variant 0 and C on variant 1); the batch maker never reads images.
        from sketchreid.data import SampleMeta
        from sketchreid.trainer import TripletBatchStats
        samples = []
        for ident in range(30):
            for cam, variant in (("A", 0), ("B", 0), ("C", 1)):
                for k in range(20):
                    samples.append((None, SampleMeta(ident, cam, variant,
                                                     f"{cam}/{ident}/{k}")))
        stats = TripletBatchStats()
        make_triplet_batches(samples, 16, epoch_seed=2, anchors_per_id=8,
                             stats=stats)
        total = stats.cross_variant + stats.same_variant
        assert total > 0
        assert stats.cross_variant / total >= 0.95

    def test_single_identity_rejected(self):
        samples = [s for s in micro_samples() if s[1].identity == 0]
        with pytest.raises(ConfigError):
            make_triplet_batches(samples, 4, epoch_seed=0, anchors_per_id=1)

    def test_anchors_cycle_identities(self):
        samples = micro_samples(n_ids=4, imgs=2)
        batches = make_triplet_batches(samples, 4, epoch_seed=3, anchors_per_id=1)
        anchors = [samples[a][1].identity for batch in batches for a, _, _ in batch]
        assert sorted(anchors) == [0, 1, 2, 3]


class TestTrain:
    def test_fixed_theta_lambda_bit_identical(self):
        model = build_model(MICRO_NET, 1)
        before = [s.spt_lambda.copy() for s in model.streams]
        train(model, micro_samples(), micro_train_config(fixed_theta=True))
        for s, b in zip(model.streams, before):
            assert np.array_equal(s.spt_lambda, b)

    def test_stage_discipline(self):
        model = build_model(MICRO_NET, 2)
        cfg = micro_train_config(epochs_warmup=1, epochs_joint=1, epochs_refine=1)
        report = train(model, micro_samples(), cfg)
        lam0 = [l.copy() for l in report.lambda_history[0]]
        lam1 = [l.copy() for l in report.lambda_history[1]]
        lam2 = [l.copy() for l in report.lambda_history[2]]
        init = np.full(8, 0.05)
        for l0, l1, l2 in zip(lam0, lam1, lam2):
            assert np.array_equal(l0, init)          # stage 1 froze lambda
            assert not np.array_equal(l1, l0)        # stage 2 trained it
            assert np.array_equal(l2, l1)            # stage 3 froze it again

    def test_non_lambda_params_change_every_stage(self):
        model = build_model(MICRO_NET, 3)
        samples = micro_samples()
        snaps = []
        cfg1 = micro_train_config(epochs_warmup=1, epochs_joint=0, epochs_refine=0)
        cfg2 = micro_train_config(epochs_warmup=0, epochs_joint=1, epochs_refine=0)
        cfg3 = micro_train_config(epochs_warmup=0, epochs_joint=0, epochs_refine=1)
        for cfg in (cfg1, cfg2, cfg3):
            before = {n: p.copy() for n, p in model.named_parameters()}
            train(model, samples, cfg)
            after = dict(model.named_parameters())
            changed = [n for n in before
                       if not n.endswith("lambda") and not np.array_equal(before[n], after[n])]
            snaps.append(changed)
        for changed in snaps:
            assert len(changed) > 0.9 * (len(list(model.named_parameters())) - 3)

    def test_no_triplet_equals_eta_zero(self):
        samples = micro_samples()
        m1 = build_model(MICRO_NET, 4)
        m2 = build_model(MICRO_NET, 4)
        train(m1, samples, micro_train_config(no_triplet=True))
        train(m2, samples, micro_train_config(eta=0.0))
        for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert n1 == n2 and np.array_equal(p1, p2)

    def test_deterministic(self):
        samples = micro_samples()
        m1 = build_model(MICRO_NET, 5)
        m2 = build_model(MICRO_NET, 5)
        train(m1, samples, micro_train_config())
        train(m2, samples, micro_train_config())
        for (_, p1), (_, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert np.array_equal(p1, p2)

    def test_epoch_log_and_theta_history(self):
        model = build_model(MICRO_NET, 6)
        report = train(model, micro_samples(), micro_train_config())
        assert [e.stage for e in report.epochs] == [1, 2, 3]
        assert len(report.theta_history) == 3
        assert report.invariant_checks == 3
        for thetas in report.theta_history:
            assert len(thetas) == 3

    def test_divergence_aborts_with_diagnostics(self):
        model = build_model(MICRO_NET, 7)
        model.streams[0].convs[0][:] = 1e200
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(TrainingDiverged) as exc:
                train(model, micro_samples(), micro_train_config())
        assert "param_norms" in exc.value.diagnostics

    def test_artifacts_written(self, tmp_path):
        model = build_model(MICRO_NET, 8)
        train(model, micro_samples(), micro_train_config(), out_dir=tmp_path)
        assert (tmp_path / "train_log.csv").exists()
        assert (tmp_path / "theta_epoch000.csv").exists()
        assert (tmp_path / "checkpoint_stage1.sptn").exists()
        assert (tmp_path / "checkpoint_stage3.sptn").exists()
        header = (tmp_path / "train_log.csv").read_text().split("\n")[0]
        assert header == "epoch,stage,lr,spt_lr,mean_ce,mean_triplet,total"


class TestGuards:
    def test_lambda_guard_reinitializes(self):
        model = build_model(MICRO_NET, 9)
        model.streams[1].spt_lambda[:] = -0.3
        state = OptimState(lr=0.1)
        state.velocity["stream1.lambda"] = np.ones(8)
        n = apply_lambda_guard(model, state)
        assert n == 1
        assert np.all(model.streams[1].spt_lambda == 0.05)
        assert np.all(state.velocity["stream1.lambda"] == 0.0)

    def test_invariant_checker_rejects_degenerate(self):
        model = build_model(MICRO_NET, 10)
        model.streams[2].spt_lambda[:] = -1.0
        with pytest.raises(TrainingDiverged):
            check_spt_invariants(model)

    def test_invariant_checker_passes_healthy(self):
        check_spt_invariants(build_model(MICRO_NET, 11))
