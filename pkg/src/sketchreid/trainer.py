"""Staged training: fixed-angle warmup, joint transform+network, fixed-angle refine.

Batches are triplets (anchor, positive, negative) with anchors cycling
through identities and positives drawn cross-variant where possible.
Cross-entropy applies to anchor and positive; the negative contributes only
through the triplet term on the concatenated features.
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from sketchreid import checkpoint, spt
from sketchreid.diffcore import OptimState, sgd_step
from sketchreid.errors import ConfigError, TrainingDiverged
from sketchreid.losses import (LossWeights, cross_entropy, cross_entropy_logit_grad,
                               softmax, triplet_margin_backward)
from sketchreid.network import backward_full, forward_full

LAMBDA_GUARD_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs_warmup: int = 5
    epochs_joint: int = 10
    epochs_refine: int = 5
    base_lr: float = 0.05
    spt_lr: float = 1e-4
    lr_decay: float = 0.1
    lr_period: int = 0          # 0 -> half the total epoch count
    batch_triplets: int = 16
    anchors_per_id: int = 8
    momentum: float = 0.9
    weight_decay: float = 1e-4
    margin: float = 5.0
    eta: float = 10.0
    seed: int = 0
    fixed_theta: bool = False
    no_spt: bool = False
    no_ase: bool = False
    no_triplet: bool = False

    @property
    def total_epochs(self):
        return self.epochs_warmup + self.epochs_joint + self.epochs_refine

    def period(self):
        return self.lr_period if self.lr_period > 0 else max(self.total_epochs // 2, 1)

    def stage_of(self, epoch):
        if epoch < self.epochs_warmup:
            return 1
        if epoch < self.epochs_warmup + self.epochs_joint:
            return 2
        return 3


def lr_at(epoch, config):
    """Stepwise-decayed (base, spt) learning rates at a global epoch index."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    factor = config.lr_decay ** (epoch // config.period())
    return config.base_lr * factor, config.spt_lr * factor


@dataclass
class TripletBatchStats:
    cross_variant: int = 0
    same_variant: int = 0


def make_triplet_batches(samples, batch_size, epoch_seed, anchors_per_id,
                         stats=None):
    """Index triples (anchor, positive, negative) chunked into batches.

    Anchors cycle through a fresh identity permutation each round; positives
    prefer a different variant of the same identity; negatives are uniform
    over other identities' images.
    """
    by_id = {}
    for i, (_, meta) in enumerate(samples):
        by_id.setdefault(meta.identity, []).append(i)
    ids = sorted(by_id)
    if len(ids) < 2:
        raise ConfigError("triplet training needs at least 2 identities")
    rng = np.random.default_rng(epoch_seed)
    triplets = []
    for _ in range(anchors_per_id):
        for ident in rng.permutation(ids):
            pool = by_id[ident]
            a = pool[rng.integers(len(pool))]
            a_variant = samples[a][1].variant
            cross = [i for i in pool if samples[i][1].variant != a_variant]
            if cross:
                p = cross[rng.integers(len(cross))]
                if stats is not None:
                    stats.cross_variant += 1
            else:
                same = [i for i in pool if i != a] or pool
                p = same[rng.integers(len(same))]
                if stats is not None:
                    stats.same_variant += 1
            others = [x for x in ids if x != ident]
            npool = by_id[others[rng.integers(len(others))]]
            n = npool[rng.integers(len(npool))]
            triplets.append((a, p, n))
    batches = [triplets[k:k + batch_size]
               for k in range(0, len(triplets) - batch_size + 1, batch_size)]
    if not batches and triplets:
        batches = [triplets]
    return batches


def triplet_loss_and_grads(model, img_a, img_p, img_n, target, weights,
                           grads_out, with_lambda_grad=True):
    """One triplet's total loss; gradients accumulate into grads_out.

    Returns (total, ce_anchor, ce_positive, triplet_value).
    """
    feats_a, cache_a = forward_full(model, img_a, want_cache=True)
    feats_p, cache_p = forward_full(model, img_p, want_cache=True)
    feats_n, cache_n = forward_full(model, img_n, want_cache=True)
    xa = np.concatenate(feats_a)
    xp = np.concatenate(feats_p)
    xn = np.concatenate(feats_n)
    trip, dxa, dxp, dxn = triplet_margin_backward(xa, xp, xn, weights.margin)
    l = model.config.embed_width
    eta = weights.eta

    def branch_grads(feats, dx_concat, with_ce):
        grads = []
        ce = 0.0
        idx = 0
        for i, s in enumerate(model.streams):
            for j, br in enumerate(s.branches):
                g = eta * dx_concat[idx * l:(idx + 1) * l]
                if with_ce:
                    logits = br.head_w @ feats[idx] + br.head_b
                    prob = softmax(logits)
                    ce += cross_entropy(prob, target)
                    g_logit = cross_entropy_logit_grad(prob, target)
                    _acc(grads_out, f"stream{i}.branch{j}.head_w",
                         np.outer(g_logit, feats[idx]))
                    _acc(grads_out, f"stream{i}.branch{j}.head_b", g_logit)
                    g = g + br.head_w.T @ g_logit
                grads.append(g)
                idx += 1
        return grads, ce

    ga, ce_a = branch_grads(feats_a, dxa, with_ce=True)
    gp, ce_p = branch_grads(feats_p, dxp, with_ce=True)
    gn, _ = branch_grads(feats_n, dxn, with_ce=False)
    backward_full(model, cache_a, ga, grads_out, with_lambda_grad)
    backward_full(model, cache_p, gp, grads_out, with_lambda_grad)
    backward_full(model, cache_n, gn, grads_out, with_lambda_grad)
    total = ce_a + ce_p + eta * trip
    return total, ce_a, ce_p, trip


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, dtype=np.float64)


@dataclass
class EpochLog:
    epoch: int
    stage: int
    lr: float
    spt_lr: float
    mean_ce: float
    mean_triplet: float
    total: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    theta_history: list = field(default_factory=list)   # per epoch: list per stream
    lambda_history: list = field(default_factory=list)  # per epoch: list per stream
    batch_stats: TripletBatchStats = field(default_factory=TripletBatchStats)
    lambda_reinits: int = 0
    same_variant_positives_logged: int = 0
    invariant_checks: int = 0


def apply_lambda_guard(model, state):
    """Re-initialize any stream whose positive weight mass vanished.

    The z gradient is identically zero there, so training cannot recover
    on its own; the velocity is cleared along with the weights.
    """
    reinits = 0
    for i, s in enumerate(model.streams):
        if s.spt_lambda is None:
            continue
        if np.maximum(s.spt_lambda, 0.0).sum() < LAMBDA_GUARD_EPS:
            s.spt_lambda[:] = spt.LAMBDA_INIT
            vel = state.velocity.get(f"stream{i}.lambda")
            if vel is not None:
                vel[:] = 0.0
            reinits += 1
    return reinits


def check_spt_invariants(model):
    """z nondecreasing, theta inside its range, positive weight mass."""
    for i, s in enumerate(model.streams):
        if s.spt_lambda is None:
            continue
        mass = np.maximum(s.spt_lambda, 0.0).sum()
        if mass <= LAMBDA_GUARD_EPS:
            raise TrainingDiverged(f"stream {i}: angle weight mass vanished")
        z = spt.lambda_to_z(s.spt_lambda)
        if np.any(np.diff(z) < -1e-15):
            raise TrainingDiverged(f"stream {i}: z not nondecreasing")
        a, b = model.config.stream_ranges[i]
        theta = spt.z_to_theta(z, a, b)
        lo, hi = min(a, b), max(a, b)
        if theta.min() < lo - 1e-12 or theta.max() > hi + 1e-12:
            raise TrainingDiverged(f"stream {i}: theta escaped [{lo}, {hi}]")


def current_thetas(model):
    out = []
    for i, s in enumerate(model.streams):
        if s.spt_lambda is None:
            out.append(None)
        else:
            a, b = model.config.stream_ranges[i]
            out.append(spt.z_to_theta(spt.lambda_to_z(s.spt_lambda), a, b))
    return out


def train(model, samples, config, out_dir=None):
    """samples: list of (image, meta) for the training identities."""
    out = Path(out_dir) if out_dir is not None else None
    weights = LossWeights(margin=config.margin,
                          eta=0.0 if config.no_triplet else config.eta)
    params = model.param_dict()
    lambda_names = set(model.lambda_names())
    state = OptimState(lr=config.base_lr, momentum=config.momentum,
                       weight_decay=config.weight_decay)
    report = TrainReport()
    n_branches = model.config.n_branches
    for epoch in range(config.total_epochs):
        stage = config.stage_of(epoch)
        lr, spt_lr = lr_at(epoch, config)
        state.lr = lr
        state.lr_overrides = {name: spt_lr for name in lambda_names}
        lambda_learns = (stage == 2 and model.config.with_spt
                         and not config.fixed_theta)
        batches = make_triplet_batches(
            samples, config.batch_triplets,
            epoch_seed=np.random.SeedSequence([config.seed, 7919, epoch]),
            anchors_per_id=config.anchors_per_id, stats=report.batch_stats)
        ce_sum = trip_sum = total_sum = 0.0
        n_trip = 0
        for batch_idx, batch in enumerate(batches):
            grads = {}
            for a, p, n in batch:
                img_a, meta_a = samples[a]
                img_p, _ = samples[p]
                img_n, _ = samples[n]
                total, ce_a, ce_p, trip = triplet_loss_and_grads(
                    model, img_a, img_p, img_n, meta_a.identity, weights,
                    grads, with_lambda_grad=lambda_learns)
                if not np.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss in epoch {epoch}, batch {batch_idx}",
                        diagnostics={
                            "epoch": epoch, "batch": batch_idx,
                            "triplet": (a, p, n),
                            "param_norms": {k: float(np.linalg.norm(v))
                                            for k, v in params.items()},
                        })
                ce_sum += ce_a + ce_p
                trip_sum += trip
                total_sum += total
                n_trip += 1
            scale = 1.0 / len(batch)
            for g in grads.values():
                g *= scale
            if not lambda_learns:
                for name in lambda_names:
                    grads.pop(name, None)
            sgd_step(params, grads, state)
            if lambda_learns:
                report.lambda_reinits += apply_lambda_guard(model, state)
        check_spt_invariants(model)
        report.invariant_checks += 1
        report.theta_history.append(current_thetas(model))
        report.lambda_history.append(
            [s.spt_lambda.copy() if s.spt_lambda is not None else None
             for s in model.streams])
        report.epochs.append(EpochLog(
            epoch=epoch, stage=stage, lr=lr, spt_lr=spt_lr,
            mean_ce=float(ce_sum / max(2 * n_trip, 1) / n_branches),
            mean_triplet=float(trip_sum / max(n_trip, 1)),
            total=float(total_sum / max(n_trip, 1))))
        if out is not None:
            _write_theta_csv(out / f"theta_epoch{epoch:03d}.csv", report.theta_history[-1])
        if out is not None and epoch + 1 in (config.epochs_warmup,
                                             config.epochs_warmup + config.epochs_joint,
                                             config.total_epochs):
            checkpoint.save_model(model, out / f"checkpoint_stage{stage}.sptn")
    report.same_variant_positives_logged = report.batch_stats.same_variant
    if out is not None:
        _write_train_log(out / "train_log.csv", report.epochs)
    return report


def _write_train_log(path, epoch_logs):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "stage", "lr", "spt_lr", "mean_ce",
                         "mean_triplet", "total"])
        for e in epoch_logs:
            writer.writerow([e.epoch, e.stage, repr(e.lr), repr(e.spt_lr),
                             repr(e.mean_ce), repr(e.mean_triplet), repr(e.total)])


def _write_theta_csv(path, thetas):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["stream", "row", "theta"])
        for i, theta in enumerate(thetas):
            if theta is None:
                continue
            for k, t in enumerate(theta):
                writer.writerow([i, k, repr(float(t))])


def ablation_config(config, flag):
    """A TrainConfig variant for the named ablation switch."""
    if flag == "full":
        return config
    if flag == "fixed_theta":
        return replace(config, fixed_theta=True)
    if flag == "no_spt":
        return replace(config, no_spt=True)
    if flag == "no_ase":
        return replace(config, no_ase=True)
    if flag == "no_triplet":
        return replace(config, no_triplet=True)
    raise ConfigError(f"unknown ablation flag {flag!r}")
