"""Fit the adaptive (large-patch) pathway against the frozen base pathway.

The base model at multiplier 1 acts as the teacher. Clean synthetic
latents are noised with the forward process, the teacher predicts noise
at the base patch size, the student predicts at an enlarged patch size,
and the squared error between the two predictions is minimized over the
adaptive parameters only (LoRA deltas, enlarged embedder/de-embedder
pairs, size identifiers, residual gates). Base parameters never receive
gradients and stay byte-identical.

Synthetic data comes in four procedural families, two spatially smooth
and two textured, labeled by their family index so the condition channel
of the model carries real signal.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .dynamics import per_patch_std
from .errors import NumericError, ValidationError
from .model import MICRO_CONFIG, DynamicPatchModel, initial_parameters
from .sampler import NoiseSchedule

KINDS = ("smooth-blobs", "low-freq-gradient", "checkerboard-texture", "noise-texture")
SMOOTH_KINDS = ("smooth-blobs", "low-freq-gradient")
TEXTURED_KINDS = ("checkerboard-texture", "noise-texture")


def kind_label(kind):
    try:
        return KINDS.index(kind)
    except ValueError:
        raise ValidationError(f"unknown dataset kind {kind!r}; known kinds: {list(KINDS)}")


def _rng(*key):
    seq = np.random.SeedSequence([int(k) for k in key])
    return np.random.Generator(np.random.Philox(key=seq.generate_state(2, np.uint64)))


@dataclass
class SyntheticDataset:
    samples: list  # (latent float32 (H, W, C), label int)
    kinds: tuple
    seed: int

    def __len__(self):
        return len(self.samples)

    def latents(self):
        return np.stack([z for z, _ in self.samples])

    def labels(self):
        return np.array([lab for _, lab in self.samples], dtype=np.int64)


def _normalize(z):
    z = z - z.mean()
    sd = z.std()
    if sd < 1e-12:
        raise NumericError("degenerate synthetic sample with zero variance")
    return (z / sd).astype(np.float32)


def _smooth_blobs(rng, h, w, c):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w, c))
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(10.0, 20.0)
        bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma**2))
        field += bump[:, :, None] * rng.standard_normal(c)
    return field


def _low_freq_gradient(rng, h, w, c):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w, c))
    for ch in range(c):
        a, b = rng.standard_normal(2)
        field[:, :, ch] = a * ys / h + b * xs / w
        for _ in range(2):
            period = rng.uniform(32.0, 64.0)
            theta = rng.uniform(0, 2 * np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(
                2 * np.pi * (np.cos(theta) * ys + np.sin(theta) * xs) / period + phase
            )
            field[:, :, ch] += rng.standard_normal() * wave
    return field


def _checkerboard(rng, h, w, c):
    ys, xs = np.mgrid[0:h, 0:w]
    cell = int(rng.integers(1, 3))
    oy, ox = int(rng.integers(0, 2 * cell)), int(rng.integers(0, 2 * cell))
    board = ((ys + oy) // cell + (xs + ox) // cell) % 2 * 2.0 - 1.0
    amps = rng.standard_normal(c) + np.sign(rng.standard_normal(c))
    field = board[:, :, None] * amps
    field += 0.1 * rng.standard_normal((h, w, c))
    return field


def _noise_texture(rng, h, w, c):
    return rng.standard_normal((h, w, c))


_GENERATORS = {
    "smooth-blobs": _smooth_blobs,
    "low-freq-gradient": _low_freq_gradient,
    "checkerboard-texture": _checkerboard,
    "noise-texture": _noise_texture,
}


def generate_dataset(kind, n, seed, shape=(64, 64, 4)):
    """n procedural latents of one family, unit-normalized per sample."""
    label = kind_label(kind)
    if n < 1:
        raise ValidationError("n must be >= 1")
    h, w, c = shape
    gen = _GENERATORS[kind]
    samples = []
    for i in range(n):
        rng = _rng(seed, label, i)
        samples.append((_normalize(gen(rng, h, w, c)), label))
    return SyntheticDataset(samples=samples, kinds=(kind,), seed=seed)


def mean_local_std(latents, edge=2):
    """Average per-patch std at a small edge: a scalar roughness measure."""
    vals = [per_patch_std(z, edge).mean() for z in latents]
    return float(np.mean(vals))


def generate_mixed(n, seed, shape=(64, 64, 4), kinds=KINDS):
    """Round-robin dataset over several families, with the roughness contract
    (every textured family rougher than every smooth family) checked."""
    if n < len(kinds):
        raise ValidationError(f"need at least {len(kinds)} samples for kinds {kinds}")
    per = (n + len(kinds) - 1) // len(kinds)
    per_kind = {k: generate_dataset(k, per, seed, shape) for k in kinds}
    roughness = {
        k: mean_local_std([z for z, _ in ds.samples]) for k, ds in per_kind.items()
    }
    for smooth in set(kinds) & set(SMOOTH_KINDS):
        for textured in set(kinds) & set(TEXTURED_KINDS):
            if roughness[textured] <= roughness[smooth]:
                raise NumericError(
                    f"roughness contract violated: {textured} ({roughness[textured]:.4f}) "
                    f"<= {smooth} ({roughness[smooth]:.4f})"
                )
    samples = []
    for i in range(per):
        for k in kinds:
            samples.append(per_kind[k].samples[i])
    return SyntheticDataset(samples=samples[:n], kinds=tuple(kinds), seed=seed)


def distill_loss(student_eps, teacher_eps):
    """Mean squared difference between the two noise predictions."""
    a = np.asarray(student_eps, dtype=np.float64)
    b = np.asarray(teacher_eps, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    multipliers: tuple = (2, 4)
    eval_size: int = 16
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(int(m) for m in self.multipliers))
        if self.steps < 1 or self.batch_size < 1 or self.eval_size < 1:
            raise ValidationError("steps, batch_size, and eval_size must be >= 1")
        if any(m < 2 for m in self.multipliers):
            raise ValidationError(f"trained multipliers must be > 1, got {self.multipliers}")


def _noise_batch(z0, ts, schedule, rng):
    """Forward process q(z_t | z_0) for a (B, H, W, C) batch."""
    ab = schedule.alpha_bar[ts].astype(np.float32)
    eps = rng.standard_normal(z0.shape, dtype=np.float32)
    coef_sig = np.sqrt(ab).reshape(-1, 1, 1, 1)
    coef_eps = np.sqrt(1.0 - ab).reshape(-1, 1, 1, 1)
    return coef_sig * z0 + coef_eps * eps


def train_step(model, optimizer, z0, labels, m, schedule, rng):
    """One distillation update at multiplier m on a clean (B, H, W, C) batch."""
    if m not in model.config.adapted_multipliers():
        raise ValidationError(f"can only train adapted multipliers, got m={m}")
    b = z0.shape[0]
    ts = rng.integers(1, schedule.t_train + 1, size=b)
    zt = torch.from_numpy(_noise_batch(z0, ts, schedule, rng))
    tt = torch.from_numpy(ts.astype(np.int64))
    ct = torch.from_numpy(labels.astype(np.int64))
    dtype = model.cond_table.dtype
    zt = zt.to(dtype)
    with torch.no_grad():
        teacher = model.predict(zt, tt, ct, 1)
    student = model.predict(zt, tt, ct, m)
    loss = F.mse_loss(student, teacher)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite distillation loss at m={m}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model, config):
    """Adam over the adaptive parameters.

    Residual gates get a larger learning rate: they are scalars whose
    useful range is O(1), and with Adam's unit-free steps the base rate
    would spend most of the budget just walking them up from zero.
    """
    gates = [p for n, p in model.named_parameters()
             if p.requires_grad and n.startswith("gate.")]
    others = [p for n, p in model.named_parameters()
              if p.requires_grad and not n.startswith("gate.")]
    groups = [
        {"params": others, "lr": config.lr},
        {"params": gates, "lr": config.lr * 20.0},
    ]
    return torch.optim.Adam(
        groups, betas=(config.beta1, config.beta2), eps=config.eps
    )


class _FixedEval:
    """Held-out evaluation set with frozen (t, noise) draws."""

    def __init__(self, samples, schedule, seed):
        rng = _rng(seed, 7001)
        z0 = np.stack([z for z, _ in samples])
        self.labels = torch.from_numpy(np.array([lab for _, lab in samples], dtype=np.int64))
        self.ts = rng.integers(1, schedule.t_train + 1, size=len(samples))
        self.zt = torch.from_numpy(_noise_batch(z0, self.ts, schedule, rng))
        self.tt = torch.from_numpy(self.ts.astype(np.int64))
        self._teacher = None

    def loss(self, model, m):
        dtype = model.cond_table.dtype
        zt = self.zt.to(dtype)
        with torch.no_grad():
            if self._teacher is None or self._teacher.dtype != dtype:
                self._teacher = model.predict(zt, self.tt, self.labels, 1)
            student = model.predict(zt, self.tt, self.labels, m)
            return float(F.mse_loss(student, self._teacher))


def train(model, dataset, config=None, schedule=None, seed=0, log_path=None):
    """Distill every configured multiplier; returns a history dict.

    The first ``eval_size`` dataset samples are held out for evaluation;
    training batches draw from the remainder. Multipliers cycle per step.
    """
    config = config or TrainConfig()
    schedule = schedule or NoiseSchedule.linear()
    if len(dataset) <= config.eval_size:
        raise ValidationError(
            f"dataset of {len(dataset)} samples cannot spare {config.eval_size} for eval"
        )
    for m in config.multipliers:
        if m not in model.config.adapted_multipliers():
            raise ValidationError(
                f"multiplier {m} not adapted by this model "
                f"(adapted: {list(model.config.adapted_multipliers())})"
            )

    holdout = _FixedEval(dataset.samples[: config.eval_size], schedule, seed)
    train_samples = dataset.samples[config.eval_size:]
    z0_pool = np.stack([z for z, _ in train_samples])
    label_pool = np.array([lab for _, lab in train_samples], dtype=np.int64)

    optimizer = make_optimizer(model, config)
    rng = _rng(seed, 11)
    init_eval = {m: holdout.loss(model, m) for m in config.multipliers}
    rows = []
    t0 = time.perf_counter()
    for step in range(config.steps):
        m = config.multipliers[step % len(config.multipliers)]
        idx = rng.integers(0, len(train_samples), size=config.batch_size)
        loss = train_step(model, optimizer, z0_pool[idx], label_pool[idx], m, schedule, rng)
        if step % config.log_every == 0 or step == config.steps - 1:
            rows.append({
                "step": step,
                "loss": loss,
                "lr": config.lr,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            })
    final_eval = {m: holdout.loss(model, m) for m in config.multipliers}

    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "loss", "lr", "wall_ms"])
            writer.writeheader()
            writer.writerows(rows)

    return {
        "init_eval": init_eval,
        "final_eval": final_eval,
        "init_eval_mean": float(np.mean(list(init_eval.values()))),
        "final_eval_mean": float(np.mean(list(final_eval.values()))),
        "log_rows": rows,
    }


def gradient_check(n_coords=100, seed=0, step=1e-3):
    """Compare analytic student-path gradients with central differences.

    Runs a miniature model in float64 with randomized adaptive weights,
    fixes one noisy batch, and probes ``n_coords`` randomly chosen
    trainable coordinates. Returns (max relative error, per-coordinate
    list). The teacher prediction is constant w.r.t. the probed weights.
    """
    cfg = MICRO_CONFIG
    rng = _rng(seed, 97)
    params = initial_parameters(cfg, seed)
    model = DynamicPatchModel(cfg, params=params).double()
    with torch.no_grad():
        for p in model.trainable_parameters():
            p.copy_(torch.from_numpy(
                rng.standard_normal(tuple(p.shape)) * 0.05
            ))

    schedule = NoiseSchedule.linear()
    b = 2
    z0 = rng.standard_normal((b, cfg.latent_h, cfg.latent_w, cfg.channels))
    ts = rng.integers(1, schedule.t_train + 1, size=b)
    zt = torch.from_numpy(_noise_batch(z0.astype(np.float32), ts, schedule, rng)).double()
    tt = torch.from_numpy(ts.astype(np.int64))
    ct = torch.from_numpy(rng.integers(0, cfg.cond_vocab, size=b))
    m = cfg.adapted_multipliers()[0]

    with torch.no_grad():
        teacher = model.predict(zt, tt, ct, 1)

    def loss_value():
        student = model.predict(zt, tt, ct, m)
        return F.mse_loss(student, teacher)

    loss = loss_value()
    model.zero_grad(set_to_none=True)
    loss.backward()

    trainables = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    flat_index = []
    for name, p in trainables:
        flat_index.extend((name, p, i) for i in range(p.numel()))
    picks = rng.choice(len(flat_index), size=min(n_coords, len(flat_index)), replace=False)

    results = []
    for pick in picks:
        name, p, i = flat_index[int(pick)]
        analytic = float(p.grad.view(-1)[i])
        with torch.no_grad():
            flat = p.view(-1)
            orig = float(flat[i])
            flat[i] = orig + step
            up = float(loss_value())
            flat[i] = orig - step
            down = float(loss_value())
            flat[i] = orig
        numeric = (up - down) / (2 * step)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        results.append((name, int(i), analytic, numeric, rel))
    max_rel = max(r[-1] for r in results)
    return max_rel, results
