"""Training-free per-step patch-size selection.

Before each denoising step the scheduler looks at the order-n finite
difference of the recent latent trajectory, summarizes its spatial spread
per candidate patch size (per-patch population std, then the rho-th
percentile across patches), and picks the largest candidate whose
statistic falls below the threshold tau. If none qualifies it stays at
the base patch size; while the trajectory window is still filling it also
stays at base ("warmup").

Decisions are pure functions of (window contents, config, step index), so
replaying a recorded trajectory reproduces a schedule exactly.
"""

import json
from dataclasses import asdict, dataclass

from .dynamics import TrajectoryWindow, nth_difference, per_patch_std, percentile
from .errors import TraceFormatError, ValidationError

REASONS = ("warmup", "threshold_pass", "default_base", "forced")


@dataclass(frozen=True)
class SchedulerConfig:
    tau: float = 1e-3
    rho: float = 0.4
    candidates: tuple = (2, 4)
    order: int = 3
    warmup_steps: int = 3

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(int(m) for m in self.candidates))
        if self.tau < 0:
            raise ValidationError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must be in [0, 1], got {self.rho}")
        if not self.candidates:
            raise ValidationError("need at least one candidate multiplier")
        if list(self.candidates) != sorted(set(self.candidates)) or self.candidates[0] < 2:
            raise ValidationError(
                f"candidates must be strictly increasing and >= 2, got {self.candidates}"
            )
        if self.order not in (1, 2, 3):
            raise ValidationError(f"order must be 1, 2, or 3, got {self.order}")
        if self.warmup_steps < self.order:
            raise ValidationError(
                f"warmup_steps ({self.warmup_steps}) must be >= order ({self.order})"
            )


@dataclass
class ScheduleDecision:
    timestep: int
    chosen_multiplier: int
    candidate_stats: dict
    token_count: int
    reason: str

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValidationError(f"unknown decision reason {self.reason!r}")


class ScheduleTrace:
    """Ordered per-step decisions plus cumulative matmul-FLOP accounting."""

    def __init__(self, config):
        self.config = config
        self.decisions = []
        self.cum_flops = []

    def append(self, decision, step_flops):
        if self.decisions and decision.timestep >= self.decisions[-1].timestep:
            raise ValidationError("trace timesteps must strictly decrease")
        prev = self.cum_flops[-1] if self.cum_flops else 0
        self.decisions.append(decision)
        self.cum_flops.append(prev + int(step_flops))

    def __len__(self):
        return len(self.decisions)

    def total_token_steps(self):
        return sum(d.token_count for d in self.decisions)

    def multiplier_counts(self):
        counts = {}
        for d in self.decisions:
            counts[d.chosen_multiplier] = counts.get(d.chosen_multiplier, 0) + 1
        return counts

    def to_jsonl(self):
        lines = []
        for decision, cum in zip(self.decisions, self.cum_flops):
            record = {
                "t": decision.timestep,
                "m": decision.chosen_multiplier,
                "reason": decision.reason,
                "sigma": {
                    str(m): float(f"{v:.9g}")
                    for m, v in sorted(decision.candidate_stats.items())
                },
                "tokens": decision.token_count,
                "cum_flops": cum,
            }
            lines.append(json.dumps(record, separators=(", ", ": ")))
        return "\n".join(lines) + ("\n" if lines else "")

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text, config=None):
        trace = cls(config)
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                decision = ScheduleDecision(
                    timestep=int(rec["t"]),
                    chosen_multiplier=int(rec["m"]),
                    candidate_stats={int(k): float(v) for k, v in rec["sigma"].items()},
                    token_count=int(rec["tokens"]),
                    reason=str(rec["reason"]),
                )
                cum = int(rec["cum_flops"])
            except (KeyError, ValueError, TypeError, json.JSONDecodeError, ValidationError) as exc:
                raise TraceFormatError(f"trace line {lineno}: {exc}") from exc
            trace.decisions.append(decision)
            trace.cum_flops.append(cum)
        return trace

    @classmethod
    def read_jsonl(cls, path, config=None):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read(), config)


def candidate_stats(window, config, base_patch):
    """rho-percentile of per-patch std of the order-n difference, per candidate."""
    diff = nth_difference(window, config.order)
    h, w, _ = diff.shape
    stats = {}
    for m in config.candidates:
        edge = base_patch * m
        if h % edge or w % edge:
            raise ValidationError(
                f"latent {h}x{w} incompatible with candidate patch edge {edge}"
            )
        stds = per_patch_std(diff, edge)
        stats[m] = percentile(stds.reshape(-1), config.rho)
    return stats


def decide(window, config, step_index, base_patch):
    """Choose the patch-size multiplier for the upcoming denoising step."""
    shape = window.shape
    if shape is not None:
        h, w, _ = shape
        for m in config.candidates:
            edge = base_patch * m
            if h % edge or w % edge:
                raise ValidationError(
                    f"latent {h}x{w} incompatible with candidate patch edge {edge}"
                )

    def tokens(m):
        return (shape[0] * shape[1]) // (base_patch * m) ** 2 if shape else 0

    if step_index < config.warmup_steps or len(window) < config.order + 1:
        return ScheduleDecision(
            timestep=window.entries()[-1][0] if len(window) else 0,
            chosen_multiplier=1,
            candidate_stats={},
            token_count=tokens(1),
            reason="warmup",
        )

    stats = candidate_stats(window, config, base_patch)
    chosen = 1
    reason = "default_base"
    for m in sorted(config.candidates, reverse=True):
        if stats[m] < config.tau:
            chosen = m
            reason = "threshold_pass"
            break
    return ScheduleDecision(
        timestep=window.entries()[-1][0],
        chosen_multiplier=chosen,
        candidate_stats=stats,
        token_count=tokens(chosen),
        reason=reason,
    )


def replay(trajectory, config, base_patch):
    """Re-run decide() over a recorded trajectory of (timestep, latent) pairs.

    Mirrors the sampling loop: the decision for step i sees the window
    after latents 0..i have been pushed. The final latent of a recorded
    run feeds no decision, so K latents yield K-1 decisions.
    """
    if len(trajectory) < 2:
        raise ValidationError("trajectory must contain at least two latents")
    window = TrajectoryWindow(capacity=config.order + 1)
    decisions = []
    for i, (t, z) in enumerate(trajectory[:-1]):
        window.push(t, z)
        decisions.append(decide(window, config, i, base_patch))
    return decisions


def sweep(trajectory, taus, config, base_patch):
    """Replay a fixed trajectory under several thresholds.

    Returns one row per tau: (tau, total token-steps, decision list).
    No model evaluation happens; this is the offline what-if table.
    """
    if not taus:
        raise ValidationError("tau list must be non-empty")
    rows = []
    for tau in taus:
        cfg = SchedulerConfig(
            tau=tau, rho=config.rho, candidates=config.candidates,
            order=config.order, warmup_steps=config.warmup_steps,
        )
        decisions = replay(trajectory, cfg, base_patch)
        rows.append((tau, sum(d.token_count for d in decisions), decisions))
    return rows


def config_snapshot(config):
    return asdict(config) if not isinstance(config, dict) else dict(config)
