"""Language-model composition: residual blocks around recurrence mixers.

An LMHeadModel is embedding -> n_layer pre-norm residual blocks -> final
RMS norm -> vocabulary head (optionally tied to the embedding). Each block
wraps one mixer from the layer zoo (chosen per position via mixer_types, so
stacks can mix LTI and LTV kinds) and an optional gated two-layer MLP of
width d_intermediate (0 disables it).

Three execution paths mirror the layers: batched forward (sequential or
parallel scan), a taped forward for training with a full analytic backward,
and a step path for generation that runs on preallocated buffers — after the
first generated token the instrumented allocation counter stays flat.

Checkpoints are a single binary container: magic "LRNNX001", a little-endian
u64 header length, a UTF-8 JSON header mapping parameter path -> {dtype,
shape, offset, length} (plus the model config under the reserved key
"__config__"), then the raw little-endian payload. Round trips are
byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autograd import GradBundle, Tape, layer_backward
from .layers import make_layer
from .numerics import Rng, ShapeError, alloc, real_dtype, sigmoid

__all__ = [
    "Unsupported",
    "UnknownMixer",
    "TokenOutOfRange",
    "BadMagic",
    "CorruptHeader",
    "ShapeMismatch",
    "MIXER_REGISTRY",
    "register_mixer",
    "ModelConfig",
    "RMSNorm",
    "GatedMLP",
    "Block",
    "LMHeadModel",
    "build_model",
    "lm_forward",
    "model_backward",
    "cross_entropy",
    "Adam",
    "generate",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]


class Unsupported(NotImplementedError):
    """A registered-but-not-implemented mixer slot (the "attn" placeholder)."""


class UnknownMixer(ValueError):
    """mixer_types names a kind missing from the registry."""


class TokenOutOfRange(ValueError):
    """A token id is negative or >= vocab_size."""


class BadMagic(ValueError):
    """Checkpoint file does not start with the container magic."""


class CorruptHeader(ValueError):
    """Checkpoint header or payload fails an integrity check."""


class ShapeMismatch(ValueError):
    """Checkpoint tensor extents disagree with the model being loaded."""


# ---------------------------------------------------------------------------
# Mixer registry (open, string-keyed; kinds are case-insensitive)


def _recurrence_factory(kind):
    def build(d_model, rng, dtype, d_state=None, **kw):
        return make_layer(kind, d_model, d_state=d_state, dtype=dtype, rng=rng, **kw)

    return build


def _attn_factory(d_model, rng, dtype, **kw):
    raise Unsupported(
        "the 'attn' mixer slot is declared but not implemented; "
        "use one of the recurrence kinds"
    )


MIXER_REGISTRY = {k: _recurrence_factory(k) for k in ("s4d", "s5", "lru", "s6", "rglru")}
MIXER_REGISTRY["attn"] = _attn_factory


def register_mixer(kind, factory):
    """Add a mixer factory(d_model, rng, dtype, **kwargs) under a kind name."""
    MIXER_REGISTRY[kind.lower()] = factory


# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    """LM shape; serializes to JSON with these exact field names."""

    d_model: int
    d_state: int
    n_layer: int
    vocab_size: int
    d_intermediate: int = 0
    mixer_types: list = field(default_factory=list)
    mixer_kwargs: dict = field(default_factory=dict)
    tie_embeddings: bool = False
    dtype: str = "f64"

    def __post_init__(self):
        if not self.mixer_types:
            self.mixer_types = ["s5"] * self.n_layer
        self.mixer_types = [str(t).lower() for t in self.mixer_types]
        self.mixer_kwargs = {str(k).lower(): dict(v) for k, v in self.mixer_kwargs.items()}
        for name, v in (("d_model", self.d_model), ("d_state", self.d_state),
                        ("n_layer", self.n_layer), ("vocab_size", self.vocab_size)):
            if int(v) < 1:
                raise ValueError(f"{name} must be a positive int, got {v}")
        if self.d_intermediate < 0:
            raise ValueError(f"d_intermediate must be >= 0, got {self.d_intermediate}")
        if len(self.mixer_types) != self.n_layer:
            raise ValueError(
                f"mixer_types has {len(self.mixer_types)} entries for n_layer={self.n_layer}"
            )

    def to_json(self) -> str:
        return json.dumps({
            "d_model": self.d_model, "d_state": self.d_state,
            "n_layer": self.n_layer, "vocab_size": self.vocab_size,
            "d_intermediate": self.d_intermediate,
            "mixer_types": self.mixer_types, "mixer_kwargs": self.mixer_kwargs,
            "tie_embeddings": self.tie_embeddings, "dtype": self.dtype,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# Sub-modules


class RMSNorm:
    """y = x / sqrt(mean(x^2, -1) + eps) * g, with learned per-channel g."""

    EPS = 1e-5

    def __init__(self, d_model, dtype):
        self.g = np.ones(d_model, real_dtype(dtype))

    def forward(self, x, want_cache=False):
        ms = np.mean(x * x, axis=-1, keepdims=True)
        r = 1.0 / np.sqrt(ms + self.EPS)
        y = x * r * self.g
        return (y, (x, r)) if want_cache else y

    def backward(self, cache, gy):
        x, r = cache
        m = x.shape[-1]
        t = gy * self.g
        s = np.sum(t * x, axis=-1, keepdims=True)
        gx = r * t - (r ** 3 / m) * s * x
        gg = np.sum(gy * x * r, axis=tuple(range(gy.ndim - 1)))
        return gx, gg


class GatedMLP:
    """y = (silu(x W1^T) * (x W3^T)) W2^T, the gated feed-forward block."""

    def __init__(self, d_model, d_intermediate, rng, dtype):
        dt = real_dtype(dtype)
        r1, r2, r3 = rng.split(3)
        self.w1 = np.asarray(r1.normal((d_intermediate, d_model)) / np.sqrt(d_model), dt)
        self.w3 = np.asarray(r3.normal((d_intermediate, d_model)) / np.sqrt(d_model), dt)
        self.w2 = np.asarray(
            r2.normal((d_model, d_intermediate)) / np.sqrt(d_intermediate), dt)

    def forward(self, x, want_cache=False):
        a = x @ self.w1.T
        b = x @ self.w3.T
        sa = sigmoid(a)
        h = a * sa * b
        y = h @ self.w2.T
        return (y, (x, a, b, sa)) if want_cache else y

    def backward(self, cache, gy):
        x, a, b, sa = cache
        h = a * sa * b
        gh = gy @ self.w2
        gw2 = np.einsum("...m,...i->mi", gy, h, optimize=True)
        dsilu = sa * (1.0 + a * (1.0 - sa))
        ga = gh * b * dsilu
        gb = gh * (a * sa)
        gw1 = np.einsum("...i,...m->im", ga, x, optimize=True)
        gw3 = np.einsum("...i,...m->im", gb, x, optimize=True)
        gx = ga @ self.w1 + gb @ self.w3
        return gx, gw1, gw2, gw3


class Block:
    """Pre-norm residual block: x + mixer(norm(x)), then x + mlp(norm2(x))."""

    def __init__(self, mixer, d_model, d_intermediate, rng, dtype):
        self.mixer = mixer
        self.norm = RMSNorm(d_model, dtype)
        if d_intermediate:
            self.norm2 = RMSNorm(d_model, dtype)
            self.mlp = GatedMLP(d_model, d_intermediate, rng, dtype)
        else:
            self.norm2 = None
            self.mlp = None

    def forward(self, x, mode, workers, want_tape=False, want_state=False):
        cache = {}
        n1 = self.norm.forward(x, want_cache=want_tape)
        if want_tape:
            n1, cache["norm"] = n1
            ym, cache["mixer"] = self.mixer.forward(n1, mode, workers=workers, tape=True)
        elif want_state:
            ym, state = self.mixer.forward(n1, mode, workers=workers, return_state=True)
            cache["state"] = state
        else:
            ym = self.mixer.forward(n1, mode, workers=workers)
        x = x + ym
        if self.mlp is not None:
            n2 = self.norm2.forward(x, want_cache=want_tape)
            if want_tape:
                n2, cache["norm2"] = n2
                ym2, cache["mlp"] = self.mlp.forward(n2, want_cache=True)
            else:
                ym2 = self.mlp.forward(n2)
            x = x + ym2
        return x, cache

    def backward(self, cache, gx):
        grads = {}
        if self.mlp is not None:
            gn2, gw1, gw2, gw3 = self.mlp.backward(cache["mlp"], gx)
            grads["mlp.w1"], grads["mlp.w2"], grads["mlp.w3"] = gw1, gw2, gw3
            gx2, grads["norm2.g"] = self.norm2.backward(cache["norm2"], gn2)
            gx = gx + gx2
        bundle = layer_backward(self.mixer, cache["mixer"], gx)
        for k, v in bundle.params.items():
            grads[f"mixer.{k}"] = v
        gn1, grads["norm.g"] = self.norm.backward(cache["norm"], bundle.u)
        return gx + gn1, grads


class LMHeadModel:
    """Embedding, mixer blocks, final norm, and the vocabulary head."""

    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        dt = real_dtype(cfg.dtype)
        r_emb, r_blocks, r_head = rng.split(3)
        m = cfg.d_model
        self.embedding = np.asarray(
            r_emb.normal((cfg.vocab_size, m)) / np.sqrt(m), dt)
        self.blocks = []
        for i, kind in enumerate(cfg.mixer_types):
            r_mix, r_mlp = r_blocks.split(2)
            try:
                factory = MIXER_REGISTRY[kind]
            except KeyError:
                raise UnknownMixer(
                    f"mixer kind {kind!r} is not registered; known kinds: "
                    f"{sorted(MIXER_REGISTRY)}"
                ) from None
            kw = dict(cfg.mixer_kwargs.get(kind, {}))
            kw.setdefault("d_state", cfg.d_state)
            if kind == "rglru":
                kw.pop("d_state", None)
            mixer = factory(m, r_mix, cfg.dtype, **kw)
            self.blocks.append(Block(mixer, m, cfg.d_intermediate, r_mlp, cfg.dtype))
        self.norm_f = RMSNorm(m, cfg.dtype)
        self.head = None
        if not cfg.tie_embeddings:
            self.head = np.asarray(
                r_head.normal((m, cfg.vocab_size)) / np.sqrt(m), dt)

    @property
    def rdt(self):
        return real_dtype(self.cfg.dtype)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.blocks):
            out[f"blocks.{i}.norm.g"] = blk.norm.g
            for k, v in blk.mixer.parameters().items():
                out[f"blocks.{i}.mixer.{k}"] = v
            if blk.mlp is not None:
                out[f"blocks.{i}.norm2.g"] = blk.norm2.g
                out[f"blocks.{i}.mlp.w1"] = blk.mlp.w1
                out[f"blocks.{i}.mlp.w2"] = blk.mlp.w2
                out[f"blocks.{i}.mlp.w3"] = blk.mlp.w3
        out["norm_f.g"] = self.norm_f.g
        if self.head is not None:
            out["head"] = self.head
        return out

    def _head_matrix(self):
        return self.embedding.T if self.head is None else self.head

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens)
        if not np.issubdtype(tokens.dtype, np.integer):
            raise TypeError(f"tokens must be integers, got dtype {tokens.dtype}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise TokenOutOfRange(
                f"token ids must lie in [0, {self.cfg.vocab_size}), got range "
                f"[{tokens.min()}, {tokens.max()}]"
            )
        return tokens


def build_model(cfg: ModelConfig, rng: Rng | None = None) -> LMHeadModel:
    """Deterministically construct an LMHeadModel from its config."""
    return LMHeadModel(cfg, rng if rng is not None else Rng(0))


def lm_forward(model, tokens, mode="sequential", *, workers=1, tape=False,
               return_state=False):
    """Logits [batch, length, vocab_size] for token ids [batch, length].

    tape=True additionally returns the activation record for model_backward;
    return_state=True additionally returns per-block mixer step states
    positioned after the last token (generation prefill).
    """
    tokens = model._check_tokens(tokens)
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None]
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be [batch, length], got shape {tokens.shape}")
    x = model.embedding[tokens]
    caches, states = [], []
    for blk in model.blocks:
        x, cache = blk.forward(x, mode, workers, want_tape=tape, want_state=return_state)
        caches.append(cache)
        if return_state:
            states.append(cache.pop("state"))
    hf = model.norm_f.forward(x, want_cache=tape)
    if tape:
        hf, norm_f_cache = hf
    logits = hf @ model._head_matrix()
    if squeeze:
        logits = logits[0]
    if not (tape or return_state):
        return logits
    out = [logits]
    if tape:
        out.append(Tape("lm", tokens=tokens, caches=caches,
                        norm_f=norm_f_cache, hf=hf))
    if return_state:
        out.append(states)
    return tuple(out)


def model_backward(model, tape: Tape, grad_logits) -> dict[str, np.ndarray]:
    """Gradients for every model parameter given d(loss)/d(logits)."""
    saved = tape.take()
    tokens, caches, norm_f_cache, hf = (
        saved["tokens"], saved["caches"], saved["norm_f"], saved["hf"])
    gy = np.asarray(grad_logits, model.rdt)
    if gy.ndim == 2:
        gy = gy[None]
    grads = {}
    head = model._head_matrix()
    ghf = gy @ head.T
    ghead = np.einsum("blm,blv->mv", hf, gy, optimize=True)
    if model.head is None:
        g_emb_head = ghead.T.copy()  # tied: head gradient flows to embedding
    else:
        grads["head"] = ghead
    gx, grads["norm_f.g"] = model.norm_f.backward(norm_f_cache, ghf)
    for i in range(len(model.blocks) - 1, -1, -1):
        gx, bgrads = model.blocks[i].backward(caches[i], gx)
        for k, v in bgrads.items():
            grads[f"blocks.{i}.{k}"] = v
    ge = np.zeros_like(model.embedding)
    np.add.at(ge, saved["tokens"], gx)
    if model.head is None:
        ge += g_emb_head
    grads["embedding"] = ge
    return grads


def cross_entropy(logits, targets):
    """Mean next-token cross entropy; returns (loss, grad_logits)."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(
            f"targets shape {targets.shape} must match logits leading shape "
            f"{logits.shape[:-1]}"
        )
    x = logits.astype(np.float64, copy=False)
    m = x.max(axis=-1, keepdims=True)
    z = np.exp(x - m)
    sz = z.sum(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(sz[..., 0])
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    count = targets.size
    loss = float((lse - picked).sum() / count)
    grad = z / sz  # softmax
    hit = np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0
    np.put_along_axis(grad, targets[..., None], hit, axis=-1)
    grad /= count
    return loss, grad.astype(logits.dtype, copy=False)


class Adam:
    """Plain Adam over a parameter dict (key-order deterministic)."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9,
                 beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k in self.params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Generation


class _GenSession:
    """Preallocated buffers for allocation-free stepping."""

    def __init__(self, model, batch, max_new, sampled):
        m = model.cfg.d_model
        V = model.cfg.vocab_size
        dt = model.rdt
        self.x = alloc((batch, m), dt)
        self.nb = alloc((batch, m), dt)
        self.ms = alloc(batch, dt)
        self.logits = alloc((batch, V), dt)
        self.tok = alloc(batch, np.int64)
        self.head = alloc((m, V), dt)
        self.head[...] = model._head_matrix()
        self.mlp_w = {}
        if model.cfg.d_intermediate:
            dI = model.cfg.d_intermediate
            self.h1 = alloc((batch, dI), dt)
            self.h2 = alloc((batch, dI), dt)
            self.h3 = alloc((batch, dI), dt)
            for i, blk in enumerate(model.blocks):
                if blk.mlp is None:
                    continue
                w1t = alloc((m, dI), dt)
                w1t[...] = blk.mlp.w1.T
                w3t = alloc((m, dI), dt)
                w3t[...] = blk.mlp.w3.T
                w2t = alloc((dI, m), dt)
                w2t[...] = blk.mlp.w2.T
                self.mlp_w[i] = (w1t, w3t, w2t)
        if sampled:
            self.prob = alloc((batch, V), dt)

    def _norm_step(self, norm, x, out):
        np.multiply(x, x, out=out)
        np.sum(out, axis=1, out=self.ms)
        np.divide(self.ms, x.shape[1], out=self.ms)
        np.add(self.ms, RMSNorm.EPS, out=self.ms)
        np.sqrt(self.ms, out=self.ms)
        np.divide(x, self.ms[:, None], out=out)
        np.multiply(out, norm.g, out=out)

    def _mlp_step(self, block_idx, x):
        w1t, w3t, w2t = self.mlp_w[block_idx]
        np.matmul(x, w1t, out=self.h1)
        np.matmul(x, w3t, out=self.h3)
        with np.errstate(over="ignore"):
            np.negative(self.h1, out=self.h2)
            np.exp(self.h2, out=self.h2)
            np.add(self.h2, 1.0, out=self.h2)
            np.reciprocal(self.h2, out=self.h2)
        np.multiply(self.h1, self.h2, out=self.h1)  # silu
        np.multiply(self.h1, self.h3, out=self.h1)
        np.matmul(self.h1, w2t, out=self.nb)


def generate(model, prompt, max_new, mode="greedy", *, temperature=1.0,
             seed=0, workers=1):
    """Continue `prompt` by max_new tokens via prefill + single steps.

    mode "greedy" takes argmax with lowest-index tie-break; "temperature"
    softmax-samples logits/temperature with a seeded generator. Prefill runs
    the batched forward once to position every mixer state; each generated
    token is then one allocation-free step per block.
    """
    if mode not in ("greedy", "temperature"):
        raise ValueError(f"mode must be 'greedy' or 'temperature', got {mode!r}")
    prompt = model._check_tokens(prompt)
    squeeze = prompt.ndim == 1
    tokens2 = prompt[None] if squeeze else prompt
    if tokens2.ndim != 2 or tokens2.shape[1] == 0:
        raise ShapeError("prompt must be a non-empty token sequence")
    B, T = tokens2.shape
    out = np.empty((B, T + max_new), np.int64)
    out[:, :T] = tokens2
    if max_new == 0:
        return out[0] if squeeze else out
    logits_all, states = lm_forward(model, tokens2, workers=workers, return_state=True)
    if logits_all.ndim == 2:
        logits_all = logits_all[None]
    sess = _GenSession(model, B, max_new, sampled=(mode == "temperature"))
    draws = None
    if mode == "temperature":
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        draws = Rng(seed).uniform(0.0, 1.0, (max_new, B))
    sess.logits[...] = logits_all[:, -1]

    V = model.cfg.vocab_size
    for step_i in range(max_new):
        if mode == "greedy":
            np.argmax(sess.logits, axis=1, out=sess.tok)
        else:
            np.divide(sess.logits, temperature, out=sess.prob)
            np.max(sess.prob, axis=1, out=sess.ms)
            np.subtract(sess.prob, sess.ms[:, None], out=sess.prob)
            np.exp(sess.prob, out=sess.prob)
            np.sum(sess.prob, axis=1, out=sess.ms)
            np.divide(sess.prob, sess.ms[:, None], out=sess.prob)
            np.cumsum(sess.prob, axis=1, out=sess.prob)
            for b in range(B):
                idx = int(np.searchsorted(sess.prob[b], float(draws[step_i, b])))
                sess.tok[b] = min(idx, V - 1)
        out[:, T + step_i] = sess.tok
        if step_i == max_new - 1:
            break
        np.take(model.embedding, sess.tok, axis=0, out=sess.x)
        for bi, (blk, st) in enumerate(zip(model.blocks, states)):
            sess._norm_step(blk.norm, sess.x, sess.nb)
            yk, _ = blk.mixer.step(st, sess.nb)
            np.add(sess.x, yk, out=sess.x)
            if blk.mlp is not None:
                sess._norm_step(blk.norm2, sess.x, sess.nb)
                sess._mlp_step(bi, sess.nb)
                np.add(sess.x, sess.nb, out=sess.x)
        sess._norm_step(model.norm_f, sess.x, sess.nb)
        np.matmul(sess.nb, sess.head, out=sess.logits)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# Checkpoint container


CHECKPOINT_MAGIC = b"LRNNX001"


def save_checkpoint(model, path):
    """Write the container: magic, header length, JSON header, raw payload."""
    params = model.parameters()
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        if arr.dtype.byteorder == ">":  # payload is little-endian by contract
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries[name] = {
            "dtype": arr.dtype.name, "shape": list(arr.shape),
            "offset": offset, "length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    entries["__config__"] = json.loads(model.cfg.to_json())
    header = json.dumps(entries, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in chunks:
            f.write(raw)


def load_checkpoint(path, dtype=None) -> LMHeadModel:
    """Rebuild the model recorded at `path`, validating the container.

    dtype, when given, overrides the stored config's dtype (tensors upcast or
    downcast on assignment; f32 -> f64 is exact).
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise BadMagic(
            f"expected magic {CHECKPOINT_MAGIC!r}, found {blob[:8]!r}"
        )
    if len(blob) < 16:
        raise CorruptHeader("file too short for a header length")
    hlen = int.from_bytes(blob[8:16], "little")
    if 16 + hlen > len(blob):
        raise CorruptHeader(f"header length {hlen} exceeds file size {len(blob)}")
    try:
        entries = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeader(f"header is not valid JSON: {e}") from None
    if "__config__" not in entries:
        raise CorruptHeader("header is missing the __config__ entry")
    cfg_dict = entries.pop("__config__")
    if dtype is not None:
        cfg_dict = dict(cfg_dict, dtype=dtype)
    cfg = ModelConfig(**cfg_dict)
    payload = blob[16 + hlen:]
    spans = []
    for name, ent in entries.items():
        try:
            off, ln = int(ent["offset"]), int(ent["length"])
            np.dtype(ent["dtype"])
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptHeader(f"bad entry for {name!r}: {e}") from None
        if off < 0 or ln < 0 or off + ln > len(payload):
            raise CorruptHeader(
                f"entry {name!r} spans [{off}, {off + ln}) outside payload "
                f"of {len(payload)} bytes"
            )
        spans.append((off, ln, name))
    spans.sort()
    for (o1, l1, n1), (o2, _, n2) in zip(spans, spans[1:]):
        if o1 + l1 > o2:
            raise CorruptHeader(f"entries {n1!r} and {n2!r} overlap")
    if spans and spans[-1][0] + spans[-1][1] != len(payload):
        raise CorruptHeader(
            f"payload has {len(payload)} bytes but entries cover "
            f"{spans[-1][0] + spans[-1][1]}"
        )
    model = build_model(cfg, Rng(0))
    params = model.parameters()
    missing = sorted(set(params) - set(entries))
    extra = sorted(set(entries) - set(params))
    if missing or extra:
        raise ShapeMismatch(
            f"parameter set mismatch: missing {missing}, unexpected {extra}"
        )
    for name, ent in entries.items():
        arr = np.frombuffer(
            payload, dtype=np.dtype(ent["dtype"]).newbyteorder("<"),
            count=int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 1,
            offset=ent["offset"],
        ).reshape(ent["shape"])
        target = params[name]
        if tuple(arr.shape) != tuple(target.shape):
            raise ShapeMismatch(
                f"{name!r}: checkpoint shape {tuple(arr.shape)} vs model shape "
                f"{tuple(target.shape)}"
            )
        target[...] = arr
    return model
