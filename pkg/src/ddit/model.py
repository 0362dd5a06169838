"""A small diffusion transformer that can tokenize its latent at several
patch sizes.

The base pathway (multiplier 1) is a conventional patchify -> embed ->
pre-norm transformer -> de-embed -> depatchify noise predictor and is
frozen after construction. Each additional multiplier m gets its own
embedder/de-embedder pair (initialized from the base pair so the model
behaves the same at every size before training, see ``ddit.patching``), a
learned size-identifier vector added to every token, a scalar-gated
residual bypass around the whole patch pipeline, and a shared LoRA branch
on both feed-forward projections of every block that is active only when
m > 1.

Weight initialization draws from a single counter-based Philox stream in
the order of :func:`canonical_parameter_names`, so a (config, seed) pair
reproduces the model bit for bit on any platform.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import patching
from .errors import NumericError, ValidationError

# Number of forward-process steps the timestep conditioning is defined for.
MAX_TIMESTEP = 1000

# Init scales. Weight matrices use fan-in scaling; the two projections that
# write into the residual stream are damped so block outputs stay small
# relative to the token stream at init.
POS_INIT_STD = 0.02
COND_INIT_STD = 1.0
LORA_A_INIT_STD = 0.02

# Timestep-feature frequency band. The fastest component must vary slowly
# between adjacent sampling knots (stride MAX_TIMESTEP / steps), otherwise
# the conditioning vector injects step-to-step jitter into the denoising
# trajectory that swamps the latent dynamics the scheduler measures.
TIME_FREQ_MAX = 1.0 / 200.0
TIME_FREQ_MIN = 1.0 / 10000.0

# Extra damping on the residual-stream write projections, on top of the
# 1/sqrt(2L) depth scaling. Sets how strongly the untrained network
# perturbs the identity noise-prediction pathway.
RESIDUAL_DAMP = 1.0


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    layers: int = 4
    heads: int = 4
    expansion: int = 4
    patch: int = 2
    latent_h: int = 64
    latent_w: int = 64
    channels: int = 4
    multipliers: tuple = (1, 2, 4)
    lora_rank: int = 8
    lora_alpha: int = 8
    cond_vocab: int = 4

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(int(m) for m in self.multipliers))
        if self.hidden % self.heads:
            raise ValidationError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.multipliers[0] != 1 or list(self.multipliers) != sorted(set(self.multipliers)):
            raise ValidationError(
                f"multipliers must be strictly increasing and start at 1, got {self.multipliers}"
            )
        for m in self.multipliers:
            edge = self.patch * m
            if self.latent_h % edge or self.latent_w % edge:
                raise ValidationError(
                    f"latent {self.latent_h}x{self.latent_w} not divisible by patch edge {edge}"
                )
        for name in ("hidden", "layers", "heads", "expansion", "patch", "latent_h",
                     "latent_w", "channels", "lora_rank", "lora_alpha", "cond_vocab"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")

    @property
    def grid(self):
        return self.latent_h // self.patch, self.latent_w // self.patch

    def tokens(self, m):
        return (self.latent_h * self.latent_w) // (self.patch * m) ** 2

    def adapted_multipliers(self):
        return tuple(m for m in self.multipliers if m > 1)


MICRO_CONFIG = ModelConfig(
    hidden=8, layers=1, heads=2, expansion=4, patch=2, latent_h=8, latent_w=8,
    channels=2, multipliers=(1, 2), lora_rank=2, lora_alpha=2, cond_vocab=2,
)


def canonical_parameter_names(config):
    """Every learnable tensor, in the fixed order used for init and weight files."""
    names = [
        "time_mlp.fc1.weight", "time_mlp.fc1.bias",
        "time_mlp.fc2.weight", "time_mlp.fc2.bias",
        "cond_table", "pos_base",
    ]
    for m in config.multipliers:
        names += [
            f"embed.m{m}.weight", f"embed.m{m}.bias",
            f"deembed.m{m}.weight", f"deembed.m{m}.bias",
        ]
    for m in config.adapted_multipliers():
        names += [f"ident.m{m}", f"gate.m{m}"]
    for i in range(config.layers):
        base = f"blocks.{i}"
        names += [
            f"{base}.ln1.weight", f"{base}.ln1.bias",
            f"{base}.attn.qkv.weight", f"{base}.attn.qkv.bias",
            f"{base}.attn.out.weight", f"{base}.attn.out.bias",
            f"{base}.ln2.weight", f"{base}.ln2.bias",
            f"{base}.ffn.w1.weight", f"{base}.ffn.w1.bias",
            f"{base}.ffn.w2.weight", f"{base}.ffn.w2.bias",
        ]
    for i in range(config.layers):
        names += [f"lora.{i}.w1_a", f"lora.{i}.w1_b", f"lora.{i}.w2_a", f"lora.{i}.w2_b"]
    return names


def parameter_shapes(config):
    """name -> tensor shape for every canonical parameter."""
    d = config.hidden
    p = config.patch
    c = config.channels
    hidden_ffn = config.expansion * d
    r = config.lora_rank
    shapes = {
        "time_mlp.fc1.weight": (d, d), "time_mlp.fc1.bias": (d,),
        "time_mlp.fc2.weight": (d, d), "time_mlp.fc2.bias": (d,),
        "cond_table": (config.cond_vocab, d),
        "pos_base": (*config.grid, d),
    }
    for m in config.multipliers:
        e = p * m
        shapes[f"embed.m{m}.weight"] = (e, e, c, d)
        shapes[f"embed.m{m}.bias"] = (d,)
        shapes[f"deembed.m{m}.weight"] = (d, e, e, c)
        shapes[f"deembed.m{m}.bias"] = (e, e, c)
    for m in config.adapted_multipliers():
        shapes[f"ident.m{m}"] = (d,)
        shapes[f"gate.m{m}"] = (1,)
    for i in range(config.layers):
        base = f"blocks.{i}"
        shapes.update({
            f"{base}.ln1.weight": (d,), f"{base}.ln1.bias": (d,),
            f"{base}.attn.qkv.weight": (3 * d, d), f"{base}.attn.qkv.bias": (3 * d,),
            f"{base}.attn.out.weight": (d, d), f"{base}.attn.out.bias": (d,),
            f"{base}.ln2.weight": (d,), f"{base}.ln2.bias": (d,),
            f"{base}.ffn.w1.weight": (hidden_ffn, d), f"{base}.ffn.w1.bias": (hidden_ffn,),
            f"{base}.ffn.w2.weight": (d, hidden_ffn), f"{base}.ffn.w2.bias": (d,),
        })
    for i in range(config.layers):
        shapes[f"lora.{i}.w1_a"] = (r, d)
        shapes[f"lora.{i}.w1_b"] = (hidden_ffn, r)
        shapes[f"lora.{i}.w2_a"] = (r, hidden_ffn)
        shapes[f"lora.{i}.w2_b"] = (d, r)
    return shapes


def trainable_parameter_names(config):
    """The adaptive pathway: everything specific to multipliers above 1."""
    names = []
    for m in config.adapted_multipliers():
        names += [
            f"embed.m{m}.weight", f"embed.m{m}.bias",
            f"deembed.m{m}.weight", f"deembed.m{m}.bias",
            f"ident.m{m}", f"gate.m{m}",
        ]
    for i in range(config.layers):
        names += [f"lora.{i}.w1_a", f"lora.{i}.w1_b", f"lora.{i}.w2_a", f"lora.{i}.w2_b"]
    return names


def initial_parameters(config, seed, res_damp=None):
    """name -> float32 array for every canonical parameter.

    Random draws come from one Philox stream in canonical-name order;
    derived tensors (pseudo-inverse embedders, upsampled de-embedders,
    the base de-embedder) and constant tensors consume no randomness.
    """
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence([seed]).generate_state(2, np.uint64)))
    d = config.hidden
    p = config.patch
    c = config.channels
    k = p * p * c
    hidden_ffn = config.expansion * d
    if res_damp is None:
        res_damp = RESIDUAL_DAMP
    res_scale = res_damp / math.sqrt(2 * config.layers)

    def normal(shape, std):
        return (rng.standard_normal(shape) * std).astype(np.float32)

    def lecun(shape, fan_in, scale=1.0):
        return normal(shape, scale / math.sqrt(fan_in))

    params = {
        "time_mlp.fc1.weight": lecun((d, d), d),
        "time_mlp.fc1.bias": np.zeros(d, np.float32),
        "time_mlp.fc2.weight": lecun((d, d), d),
        "time_mlp.fc2.bias": np.zeros(d, np.float32),
        "cond_table": normal((config.cond_vocab, d), COND_INIT_STD),
        "pos_base": normal((*config.grid, d), POS_INIT_STD),
    }

    base_w = lecun((p, p, c, d), k)
    base_b = np.zeros(d, np.float32)
    # De-embedding starts as the pseudo-inverse of embedding, so the
    # untrained model acts as a (perturbed) identity noise predictor and
    # denoising trajectories stay bounded.
    base_de_w = np.linalg.pinv(base_w.reshape(k, d).astype(np.float64))
    base_de_w = base_de_w.reshape(d, p, p, c)
    base_de_b = np.zeros((p, p, c), np.float64)
    for m in config.multipliers:
        if m == 1:
            w, b = base_w, base_b
            dw, db = base_de_w, base_de_b
        else:
            w, b = patching.init_pseudo_inverse(base_w, base_b, m)
            dw, db = patching.init_upsampled_deembedder(base_de_w, base_de_b, m)
        params[f"embed.m{m}.weight"] = np.asarray(w, np.float32)
        params[f"embed.m{m}.bias"] = np.asarray(b, np.float32)
        params[f"deembed.m{m}.weight"] = np.asarray(dw, np.float32)
        params[f"deembed.m{m}.bias"] = np.asarray(db, np.float32)

    for m in config.adapted_multipliers():
        params[f"ident.m{m}"] = np.zeros(d, np.float32)
        params[f"gate.m{m}"] = np.zeros(1, np.float32)

    for i in range(config.layers):
        base = f"blocks.{i}"
        params[f"{base}.ln1.weight"] = np.ones(d, np.float32)
        params[f"{base}.ln1.bias"] = np.zeros(d, np.float32)
        params[f"{base}.attn.qkv.weight"] = lecun((3 * d, d), d)
        params[f"{base}.attn.qkv.bias"] = np.zeros(3 * d, np.float32)
        params[f"{base}.attn.out.weight"] = lecun((d, d), d, res_scale)
        params[f"{base}.attn.out.bias"] = np.zeros(d, np.float32)
        params[f"{base}.ln2.weight"] = np.ones(d, np.float32)
        params[f"{base}.ln2.bias"] = np.zeros(d, np.float32)
        params[f"{base}.ffn.w1.weight"] = lecun((hidden_ffn, d), d)
        params[f"{base}.ffn.w1.bias"] = np.zeros(hidden_ffn, np.float32)
        params[f"{base}.ffn.w2.weight"] = lecun((d, hidden_ffn), hidden_ffn, res_scale)
        params[f"{base}.ffn.w2.bias"] = np.zeros(d, np.float32)

    r = config.lora_rank
    for i in range(config.layers):
        params[f"lora.{i}.w1_a"] = normal((r, d), LORA_A_INIT_STD)
        params[f"lora.{i}.w1_b"] = np.zeros((hidden_ffn, r), np.float32)
        params[f"lora.{i}.w2_a"] = normal((r, hidden_ffn), LORA_A_INIT_STD)
        params[f"lora.{i}.w2_b"] = np.zeros((d, r), np.float32)
    return params


def sinusoidal_features(t, dim, dtype=torch.float32):
    """Band-limited sin/cos timestep features: first half sines, then cosines.

    Frequencies run geometrically from TIME_FREQ_MAX down to TIME_FREQ_MIN,
    so features are injective over integer timesteps yet smooth across the
    strides a sampling run takes. At t=0 all sines are 0 and cosines 1.
    """
    half = dim // 2
    t = torch.as_tensor(t, dtype=dtype).reshape(-1, 1)
    i = torch.arange(half, dtype=dtype) / max(half - 1, 1)
    freqs = (TIME_FREQ_MAX * (TIME_FREQ_MIN / TIME_FREQ_MAX) ** i).reshape(1, -1)
    args = t * freqs
    feats = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        feats = F.pad(feats, (0, 1))
    return feats


class TimestepMLP(nn.Module):
    def __init__(self, d):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, d)

    def forward(self, feats):
        return self.fc2(F.silu(self.fc1(feats)))


class Attention(nn.Module):
    def __init__(self, d, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x, probs_out=None):
        b, n, d = x.shape
        dh = d // self.heads
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0].contiguous(), qkv[1].contiguous(), qkv[2].contiguous()
        if probs_out is None:
            ctx = F.scaled_dot_product_attention(q, k, v)
        else:
            # Explicit path so callers can inspect the softmax rows.
            scores = (q @ k.transpose(-2, -1)) / math.sqrt(dh)
            probs = torch.softmax(scores, dim=-1)
            probs_out.append(probs.detach())
            ctx = probs @ v
        ctx = ctx.permute(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, d, hidden_ffn):
        super().__init__()
        self.w1 = nn.Linear(d, hidden_ffn)
        self.w2 = nn.Linear(hidden_ffn, d)

    def forward(self, x, lora=None, lora_scale=0.0):
        h = self.w1(x)
        if lora is not None:
            h = h + lora_scale * F.linear(F.linear(x, lora.w1_a), lora.w1_b)
        h = F.gelu(h)
        y = self.w2(h)
        if lora is not None:
            y = y + lora_scale * F.linear(F.linear(h, lora.w2_a), lora.w2_b)
        return y


class Block(nn.Module):
    def __init__(self, d, heads, hidden_ffn):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, hidden_ffn)

    def forward(self, x, lora=None, lora_scale=0.0, probs_out=None):
        x = x + self.attn(self.ln1(x), probs_out=probs_out)
        x = x + self.ffn(self.ln2(x), lora=lora, lora_scale=lora_scale)
        return x


class LoRAPair(nn.Module):
    """Low-rank deltas for one block's two feed-forward projections."""

    def __init__(self, rank, d, hidden_ffn):
        super().__init__()
        self.w1_a = nn.Parameter(torch.zeros(rank, d))
        self.w1_b = nn.Parameter(torch.zeros(hidden_ffn, rank))
        self.w2_a = nn.Parameter(torch.zeros(rank, hidden_ffn))
        self.w2_b = nn.Parameter(torch.zeros(d, rank))


class PatchPair(nn.Module):
    """Embedder or de-embedder weights for one patch size."""

    def __init__(self, weight_shape, bias_shape):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(*weight_shape))
        self.bias = nn.Parameter(torch.zeros(*bias_shape))


class DynamicPatchModel(nn.Module):
    """Noise predictor over (H, W, C) latents at any supported multiplier."""

    def __init__(self, config, seed=0, params=None):
        super().__init__()
        self.config = config
        d = config.hidden
        c = config.channels
        p = config.patch
        hidden_ffn = config.expansion * d

        self.time_mlp = TimestepMLP(d)
        self.cond_table = nn.Parameter(torch.zeros(config.cond_vocab, d))
        self.pos_base = nn.Parameter(torch.zeros(*config.grid, d))
        self.embed = nn.ModuleDict()
        self.deembed = nn.ModuleDict()
        for m in config.multipliers:
            e = p * m
            self.embed[f"m{m}"] = PatchPair((e, e, c, d), (d,))
            self.deembed[f"m{m}"] = PatchPair((d, e, e, c), (e, e, c))
        self.ident = nn.ParameterDict(
            {f"m{m}": nn.Parameter(torch.zeros(d)) for m in config.adapted_multipliers()}
        )
        self.gate = nn.ParameterDict(
            {f"m{m}": nn.Parameter(torch.zeros(1)) for m in config.adapted_multipliers()}
        )
        self.blocks = nn.ModuleList(
            Block(d, config.heads, hidden_ffn) for _ in range(config.layers)
        )
        self.lora = nn.ModuleList(
            LoRAPair(config.lora_rank, d, hidden_ffn) for _ in range(config.layers)
        )

        if params is None:
            params = initial_parameters(config, seed)
        self._load_named_arrays(params)
        self._freeze_base()
        self._pos_cache = {}

    # -- parameter plumbing ------------------------------------------------

    def _named_parameter_map(self):
        return dict(self.named_parameters())

    def _load_named_arrays(self, params):
        missing = set(canonical_parameter_names(self.config)) - set(params)
        if missing:
            raise ValidationError(f"missing parameters: {sorted(missing)}")
        own = self._named_parameter_map()
        with torch.no_grad():
            for name in canonical_parameter_names(self.config):
                target = own[name]
                arr = np.asarray(params[name], dtype=np.float32)
                if tuple(arr.shape) != tuple(target.shape):
                    raise ValidationError(
                        f"parameter {name}: shape {arr.shape} != expected {tuple(target.shape)}"
                    )
                target.copy_(torch.from_numpy(arr.copy()).to(target.dtype))
        self._pos_cache = {}

    def _freeze_base(self):
        trainable = set(trainable_parameter_names(self.config))
        for name, param in self.named_parameters():
            param.requires_grad_(name in trainable)

    def named_arrays(self):
        """name -> float32 numpy copy, in canonical order."""
        own = self._named_parameter_map()
        return {
            name: own[name].detach().cpu().to(torch.float32).numpy().copy()
            for name in canonical_parameter_names(self.config)
        }

    def base_parameter_names(self):
        trainable = set(trainable_parameter_names(self.config))
        return [n for n in canonical_parameter_names(self.config) if n not in trainable]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # -- forward -----------------------------------------------------------

    def _dtype(self):
        return self.cond_table.dtype

    def _positional(self, m):
        key = (m, self._dtype())
        if key not in self._pos_cache:
            if m == 1:
                grid = self.pos_base.detach()
            else:
                grid = torch.from_numpy(
                    patching.interpolate_pos(
                        self.pos_base.detach().cpu().to(torch.float64).numpy(), m
                    )
                )
            n = self.config.tokens(m)
            self._pos_cache[key] = grid.reshape(n, self.config.hidden).to(self._dtype())
        return self._pos_cache[key]

    def _check_inputs(self, z, t, cond, m):
        cfg = self.config
        if m not in cfg.multipliers:
            raise ValidationError(
                f"multiplier {m} unsupported; supported multipliers: {list(cfg.multipliers)}"
            )
        if z.shape[-3:] != (cfg.latent_h, cfg.latent_w, cfg.channels):
            raise ValidationError(
                f"latent shape {tuple(z.shape[-3:])} != configured "
                f"{(cfg.latent_h, cfg.latent_w, cfg.channels)}"
            )
        if bool((t < 0).any()) or bool((t > MAX_TIMESTEP).any()):
            raise ValidationError(f"timestep out of range [0, {MAX_TIMESTEP}]")
        if bool((cond < 0).any()) or bool((cond >= cfg.cond_vocab).any()):
            raise ValidationError(f"condition label out of range [0, {cfg.cond_vocab})")

    def predict(self, z, t, cond, m, probs_out=None):
        """Batched differentiable noise prediction; z is (B, H, W, C)."""
        cfg = self.config
        self._check_inputs(z, t, cond, m)
        b = z.shape[0]
        e = cfg.patch * m
        n = cfg.tokens(m)
        k = e * e * cfg.channels
        gh, gw = cfg.latent_h // e, cfg.latent_w // e

        patches = (
            z.reshape(b, gh, e, gw, e, cfg.channels)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(b, n, k)
        )
        temb = self.time_mlp(sinusoidal_features(t, cfg.hidden, self._dtype()))
        cemb = self.cond_table[cond]
        emb = self.embed[f"m{m}"]
        x = patches @ emb.weight.reshape(k, cfg.hidden) + emb.bias
        x = x + self._positional(m).unsqueeze(0)
        if m > 1:
            x = x + self.ident[f"m{m}"]
        x = x + (temb + cemb).unsqueeze(1)

        lora_scale = cfg.lora_alpha / cfg.lora_rank
        for block, lora in zip(self.blocks, self.lora):
            x = block(
                x,
                lora=lora if m > 1 else None,
                lora_scale=lora_scale,
                probs_out=probs_out,
            )

        dem = self.deembed[f"m{m}"]
        y = x @ dem.weight.reshape(cfg.hidden, k) + dem.bias.reshape(k)
        out = (
            y.reshape(b, gh, gw, e, e, cfg.channels)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(b, cfg.latent_h, cfg.latent_w, cfg.channels)
        )
        if m > 1:
            out = out + self.gate[f"m{m}"] * z
        return out

    def forward(self, z, t, cond, m):
        """Single-latent inference API: (H, W, C) float32 in, float32 out."""
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 3:
            raise ValidationError(f"latent must be (H, W, C), got shape {z.shape}")
        with torch.no_grad():
            zt = torch.from_numpy(z.copy()).to(self._dtype()).unsqueeze(0)
            tt = torch.tensor([int(t)])
            ct = torch.tensor([int(cond)])
            out = self.predict(zt, tt, ct, m)
        result = out[0].to(torch.float32).numpy()
        if not np.isfinite(result).all():
            raise NumericError(f"non-finite model output at t={t}, m={m}")
        return result

    def attention_probs(self, z, t, cond, m):
        """Per-layer softmax attention maps, each (heads, N, N), for one latent."""
        probs = []
        z = np.asarray(z, dtype=np.float32)
        with torch.no_grad():
            zt = torch.from_numpy(z.copy()).to(self._dtype()).unsqueeze(0)
            self.predict(zt, torch.tensor([int(t)]), torch.tensor([int(cond)]), m,
                         probs_out=probs)
        return [p[0].to(torch.float32).numpy() for p in probs]


def build_model(config=None, seed=0):
    return DynamicPatchModel(config or ModelConfig(), seed=seed)


# -- analytic cost model ----------------------------------------------------


@dataclass
class FlopEstimate:
    """Matrix-multiply FLOPs (2 per multiply-accumulate) of one forward pass.

    Only matmul work is counted; normalization, softmax, activations, and
    elementwise terms are excluded. This matches what an instrumented
    matmul counter sees on one single-latent forward.
    """

    multiplier: int
    tokens: int
    embed: int
    conditioning: int
    attn_qkv: int
    attn_scores: int
    attn_values: int
    attn_out: int
    ffn: int
    lora: int
    deembed: int
    total: int = field(init=False)

    def __post_init__(self):
        self.total = (
            self.embed + self.conditioning + self.attn_qkv + self.attn_scores
            + self.attn_values + self.attn_out + self.ffn + self.lora + self.deembed
        )

    def as_dict(self):
        return {
            "multiplier": self.multiplier,
            "tokens": self.tokens,
            "embed": self.embed,
            "conditioning": self.conditioning,
            "attn_qkv": self.attn_qkv,
            "attn_scores": self.attn_scores,
            "attn_values": self.attn_values,
            "attn_out": self.attn_out,
            "ffn": self.ffn,
            "lora": self.lora,
            "deembed": self.deembed,
            "total": self.total,
        }


def count_flops(m, config=None):
    """Analytic per-forward FLOPs at multiplier m for a single latent.

    With N = HW/(pm)^2 tokens, K = (pm)^2 C patch values, L layers, width d,
    expansion e, and LoRA rank r (active only for m > 1):

        embed / de-embed   2 N K d                     (each)
        conditioning       4 d^2                       (two d x d linears)
        qkv projection     L * 6 N d^2
        attention scores   L * 2 N^2 d                 (Q K^T over all heads)
        attention values   L * 2 N^2 d                 (probs V)
        attention output   L * 2 N d^2
        feed-forward       L * 4 N d^2 e               (two N d (ed) matmuls)
        LoRA branch        L * 4 N d r (1 + e)
    """
    cfg = config or ModelConfig()
    if m not in cfg.multipliers:
        raise ValidationError(
            f"multiplier {m} unsupported; supported multipliers: {list(cfg.multipliers)}"
        )
    d = cfg.hidden
    n = cfg.tokens(m)
    k = (cfg.patch * m) ** 2 * cfg.channels
    lyr = cfg.layers
    e = cfg.expansion
    r = cfg.lora_rank
    return FlopEstimate(
        multiplier=m,
        tokens=n,
        embed=2 * n * k * d,
        conditioning=4 * d * d,
        attn_qkv=lyr * 6 * n * d * d,
        attn_scores=lyr * 2 * n * n * d,
        attn_values=lyr * 2 * n * n * d,
        attn_out=lyr * 2 * n * d * d,
        ffn=lyr * 4 * n * d * d * e,
        lora=(lyr * 4 * n * d * r * (1 + e)) if m > 1 else 0,
        deembed=2 * n * d * k,
    )
