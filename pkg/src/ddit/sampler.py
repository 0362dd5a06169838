"""Deterministic denoising loop with per-step patch-size scheduling.

Sampling walks a uniform grid of timesteps from T down to 0 (endpoints
included; with T=1000 and 50 steps the stride is exactly 20). The model
is evaluated at the first ``steps`` knots and each DDIM update targets
the next knot, with alpha-bar(0) defined as 1 so the final update lands
on a fully denoised latent without a degenerate step.

The trajectory window always holds full-resolution latents, whatever
patch size each step used, so the scheduler's finite differences remain
well defined across patch-size switches. Initial noise comes from a
Philox counter-based generator keyed by the sample seed, which is
bit-stable across platforms.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import TrajectoryWindow
from .errors import NumericError, ValidationError
from .model import MAX_TIMESTEP, count_flops
from .scheduler import ScheduleDecision, ScheduleTrace, SchedulerConfig, decide

__all__ = [
    "NoiseSchedule",
    "ddim_step",
    "timestep_grid",
    "initial_noise",
    "SampleReport",
    "sample",
    "compare_to_baseline",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta forward process; alpha_bar[t] is indexed t = 0..T with
    alpha_bar[0] = 1 (the clean boundary)."""

    t_train: int
    betas: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def linear(cls, t_train=MAX_TIMESTEP, beta_start=1e-4, beta_end=0.02):
        if t_train < 1:
            raise ValidationError("t_train must be >= 1")
        betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        if not (np.diff(alpha_bar) < 0).all() or alpha_bar[-1] <= 0 or alpha_bar[1] >= 1:
            raise ValidationError("alpha-bar must strictly decrease within (0, 1)")
        return cls(t_train=t_train, betas=betas, alpha_bar=alpha_bar)


def ddim_step(z_t, eps_hat, t, t_prev, schedule):
    """One deterministic (eta = 0) denoising update from t to t_prev.

    x0_hat = (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t);
    z_prev = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev) eps.
    t_prev == t returns the latent unchanged.
    """
    if not 0 <= t_prev <= t <= schedule.t_train:
        raise ValidationError(
            f"need t_train >= t > t_prev >= 0, got t={t}, t_prev={t_prev}"
        )
    z_t = np.asarray(z_t, dtype=np.float32)
    eps_hat = np.asarray(eps_hat, dtype=np.float32)
    if z_t.shape != eps_hat.shape:
        raise ValidationError(f"shape mismatch {z_t.shape} vs {eps_hat.shape}")
    if t_prev == t:
        return z_t.copy()
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t_prev]
    c_keep = np.float32(math.sqrt(ab_prev / ab_t))
    c_eps = np.float32(
        math.sqrt(1.0 - ab_prev) - math.sqrt(ab_prev / ab_t) * math.sqrt(1.0 - ab_t)
    )
    return c_keep * z_t + c_eps * eps_hat


def timestep_grid(t_train, steps):
    """steps+1 strictly decreasing integer knots from t_train to 0 inclusive."""
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if steps > t_train:
        raise ValidationError(f"steps ({steps}) cannot exceed t_train ({t_train})")
    knots = np.rint(np.linspace(t_train, 0, steps + 1)).astype(int)
    if not (np.diff(knots) < 0).all():
        raise ValidationError(f"cannot build {steps} distinct steps from t_train={t_train}")
    return knots


def initial_noise(shape, seed):
    """Standard-normal float32 noise from a Philox stream keyed by seed."""
    key = np.random.SeedSequence([int(seed)]).generate_state(2, np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(shape, dtype=np.float32)


@dataclass
class SampleReport:
    final_latent: np.ndarray
    trace: ScheduleTrace
    total_token_steps: int
    total_flops: int
    baseline_flops: int
    speedup_estimate: float
    wall_time_s: float
    seed: int
    cond: int
    steps: int

    def summary(self):
        counts = self.trace.multiplier_counts()
        return {
            "seed": self.seed,
            "cond": self.cond,
            "steps": self.steps,
            "total_token_steps": self.total_token_steps,
            "total_flops": self.total_flops,
            "baseline_flops": self.baseline_flops,
            "speedup_estimate": self.speedup_estimate,
            "wall_time_s": self.wall_time_s,
            "steps_per_multiplier": {str(k): counts[k] for k in sorted(counts)},
        }


def sample(model, cond, steps=50, scheduler_config=None, seed=0, schedule=None,
           force_multiplier=None, keep_trajectory=False):
    """Generate one latent, choosing the patch size per step.

    ``force_multiplier`` bypasses the scheduler entirely (every decision is
    recorded with reason "forced"); ``keep_trajectory`` attaches the full
    list of visited (timestep, latent) pairs to the returned report as
    ``report.trajectory`` for offline replay.
    """
    cfg = model.config
    sched_cfg = scheduler_config or SchedulerConfig()
    noise_sched = schedule or NoiseSchedule.linear()
    if force_multiplier is not None and force_multiplier not in cfg.multipliers:
        raise ValidationError(
            f"multiplier {force_multiplier} unsupported; supported: {list(cfg.multipliers)}"
        )

    start = time.perf_counter()
    knots = timestep_grid(noise_sched.t_train, steps)
    z = initial_noise((cfg.latent_h, cfg.latent_w, cfg.channels), seed)
    window = TrajectoryWindow(capacity=sched_cfg.order + 1)
    window.push(knots[0], z)
    trace = ScheduleTrace(sched_cfg)
    trajectory = [(int(knots[0]), z.copy())] if keep_trajectory else None

    flops_by_m = {m: count_flops(m, cfg).total for m in cfg.multipliers}
    for i in range(steps):
        t, t_next = int(knots[i]), int(knots[i + 1])
        if force_multiplier is not None:
            decision = ScheduleDecision(
                timestep=t,
                chosen_multiplier=force_multiplier,
                candidate_stats={},
                token_count=cfg.tokens(force_multiplier),
                reason="forced",
            )
        else:
            decision = decide(window, sched_cfg, i, cfg.patch)
        eps_hat = model.forward(z, t, cond, decision.chosen_multiplier)
        trace.append(decision, flops_by_m[decision.chosen_multiplier])
        z = ddim_step(z, eps_hat, t, t_next, noise_sched)
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite latent after step {i} (t={t})")
        window.push(t_next, z)
        if keep_trajectory:
            trajectory.append((t_next, z.copy()))

    baseline = steps * flops_by_m[1]
    total = trace.cum_flops[-1]
    report = SampleReport(
        final_latent=z,
        trace=trace,
        total_token_steps=trace.total_token_steps(),
        total_flops=total,
        baseline_flops=baseline,
        speedup_estimate=baseline / total,
        wall_time_s=time.perf_counter() - start,
        seed=seed,
        cond=cond,
        steps=steps,
    )
    if keep_trajectory:
        report.trajectory = trajectory
    return report


def compare_to_baseline(model, cond, seed=0, scheduler_config=None, steps=50,
                        schedule=None):
    """Run dynamic and forced-base-patch sampling with one seed.

    Returns (dynamic report, baseline report, RMSE between final latents).
    """
    dyn = sample(model, cond, steps=steps, scheduler_config=scheduler_config,
                 seed=seed, schedule=schedule)
    base = sample(model, cond, steps=steps, scheduler_config=scheduler_config,
                  seed=seed, schedule=schedule, force_multiplier=1)
    diff = dyn.final_latent.astype(np.float64) - base.final_latent.astype(np.float64)
    rmse = float(np.sqrt(np.mean(diff * diff)))
    return dyn, base, rmse
