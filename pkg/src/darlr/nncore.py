"""Differentiable building blocks shared by the agents and the world model.

Everything is double-precision numpy with explicit forward tapes and
hand-written backward passes, so every gradient in the project can be
verified against central finite differences. No general autodiff graph:
each block knows how to push gradients through itself and nothing else.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_LN_EPS = 1e-5


def rng_stream(seed, *tags):
    """Independent Generator derived from a root seed plus hashable tags.

    Strings are folded through blake2b so streams are stable across runs
    and platforms; integers pass through directly.
    """
    words = [int(seed) & _MASK64]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            words.append(int(tag) & _MASK64)
        else:
            digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
            words.append(int.from_bytes(digest, "little"))
    return np.random.default_rng(np.random.SeedSequence(words))


class NonFiniteGradient(ValueError):
    """Raised by adam_step when a block's gradient contains inf or nan."""


@dataclass
class ParamBlock:
    """A named dense parameter array with its gradient and Adam buffers."""

    name: str
    values: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0


def make_block(name, shape, rng=None, fan=None):
    """Create a ParamBlock.

    With an rng, values are uniform(-a, a) with a = sqrt(6 / (fan_in +
    fan_out)); `fan` overrides the fan pair inferred from the first and
    last axes. Without an rng the block starts at zero (biases, norms).
    """
    shape = tuple(int(s) for s in shape)
    if rng is None:
        values = np.zeros(shape)
    else:
        if fan is None:
            if len(shape) >= 2:
                fan = (shape[0], shape[-1])
            else:
                fan = (1, shape[0])
        a = math.sqrt(6.0 / (fan[0] + fan[1]))
        values = rng.uniform(-a, a, size=shape)
    return ParamBlock(
        name=name,
        values=values,
        grad=np.zeros(shape),
        adam_m=np.zeros(shape),
        adam_v=np.zeros(shape),
    )


def zero_grads(blocks):
    for b in blocks:
        b.grad[...] = 0.0


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def adam_step(blocks, cfg: AdamConfig):
    """Bias-corrected Adam update over blocks; gradients are cleared."""
    for b in blocks:
        if not np.all(np.isfinite(b.grad)):
            raise NonFiniteGradient(f"non-finite gradient in block '{b.name}'")
        t = b.step_count + 1
        b.adam_m[...] = cfg.beta1 * b.adam_m + (1.0 - cfg.beta1) * b.grad
        b.adam_v[...] = cfg.beta2 * b.adam_v + (1.0 - cfg.beta2) * b.grad**2
        m_hat = b.adam_m / (1.0 - cfg.beta1**t)
        v_hat = b.adam_v / (1.0 - cfg.beta2**t)
        b.values[...] = b.values - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        b.grad[...] = 0.0
        b.step_count = t


class Linear:
    """Dense layer y = x W + b with gradient accumulation."""

    def __init__(self, name, n_in, n_out, seed):
        self.n_in = n_in
        self.n_out = n_out
        self.w = make_block(f"{name}/W", (n_in, n_out), rng_stream(seed, "init", f"{name}/W"))
        self.b = make_block(f"{name}/b", (n_out,))

    def blocks(self):
        return [self.w, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"linear '{self.w.name}': input width {x.shape[-1]} != {self.n_in}")
        return x @ self.w.values + self.b.values, x

    def backward(self, tape, dy):
        x = tape
        if x.ndim == 1:
            self.w.grad += np.outer(x, dy)
            self.b.grad += dy
        else:
            self.w.grad += x.T @ dy
            self.b.grad += dy.sum(axis=0)
        return dy @ self.w.values.T


class Mlp:
    """Stack of Linear layers with tanh on the hidden layers, linear output."""

    def __init__(self, name, widths, seed, activation="tanh"):
        if len(widths) < 2:
            raise ValueError("mlp needs at least input and output widths")
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unsupported activation '{activation}'")
        self.name = name
        self.widths = list(widths)
        self.activation = activation
        self.layers = [
            Linear(f"{name}/L{i}", widths[i], widths[i + 1], seed)
            for i in range(len(widths) - 1)
        ]

    def blocks(self):
        out = []
        for layer in self.layers:
            out.extend(layer.blocks())
        return out

    def forward(self, x):
        tapes = []
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            z, lt = layer.forward(h)
            hidden = i < len(self.layers) - 1
            if hidden and self.activation == "tanh":
                h = np.tanh(z)
                tapes.append((lt, h))
            else:
                h = z
                tapes.append((lt, None))
        return h, tapes

    def backward(self, tapes, dy):
        d = np.asarray(dy, dtype=np.float64)
        for layer, (lt, act) in zip(reversed(self.layers), reversed(tapes)):
            if act is not None:
                d = d * (1.0 - act**2)
            d = layer.backward(lt, d)
        return d


def _layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return gain.values * xhat + bias.values, (xhat, inv)


def _layer_norm_backward(cache, gain, bias, dy):
    xhat, inv = cache
    gain.grad += (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    bias.grad += dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain.values
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return (dxhat - m1 - xhat * m2) * inv


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class SeqEncoder:
    """Windowed self-attention encoder over a short token history.

    Sequences shorter than the window are left-padded with a learned start
    token; learned positional offsets are added per window slot. Layers are
    pre-norm (attention then feed-forward, each behind LayerNorm and a
    residual add). The encoding of the last window position is the output.
    """

    def __init__(self, name, width, window, seed, heads=1, layers=1, ff_mult=2):
        if heads < 1 or width % heads != 0:
            raise ValueError("model width must be divisible by the head count")
        self.name = name
        self.width = width
        self.window = window
        self.heads = heads
        self.n_layers = layers
        d = width
        ff = ff_mult * d

        def blk(tag, shape, fan=None, zero=False):
            full = f"{name}/{tag}"
            rng = None if zero else rng_stream(seed, "init", full)
            return make_block(full, shape, rng, fan=fan)

        self.pos = blk("pos", (window, d))
        self.start = blk("start", (d,), fan=(1, d))
        self.layer_params = []
        for li in range(layers):
            p = {
                "ln1_g": blk(f"l{li}/ln1_g", (d,), zero=True),
                "ln1_b": blk(f"l{li}/ln1_b", (d,), zero=True),
                "wq": blk(f"l{li}/wq", (d, d)),
                "bq": blk(f"l{li}/bq", (d,), zero=True),
                "wk": blk(f"l{li}/wk", (d, d)),
                "bk": blk(f"l{li}/bk", (d,), zero=True),
                "wv": blk(f"l{li}/wv", (d, d)),
                "bv": blk(f"l{li}/bv", (d,), zero=True),
                "wo": blk(f"l{li}/wo", (d, d)),
                "bo": blk(f"l{li}/bo", (d,), zero=True),
                "ln2_g": blk(f"l{li}/ln2_g", (d,), zero=True),
                "ln2_b": blk(f"l{li}/ln2_b", (d,), zero=True),
                "w1": blk(f"l{li}/w1", (d, ff)),
                "b1": blk(f"l{li}/b1", (ff,), zero=True),
                "w2": blk(f"l{li}/w2", (ff, d)),
                "b2": blk(f"l{li}/b2", (d,), zero=True),
            }
            # LayerNorm gains start at one
            p["ln1_g"].values[...] = 1.0
            p["ln2_g"].values[...] = 1.0
            self.layer_params.append(p)

    def blocks(self):
        out = [self.pos, self.start]
        for p in self.layer_params:
            out.extend(p.values())
        return out

    def encode(self, tokens):
        """Encode a token history; returns (state, tape)."""
        n = len(tokens)
        if n == 0:
            raise ValueError("cannot encode an empty token list")
        if n > self.window:
            raise ValueError(f"got {n} tokens for window {self.window}")
        w, d, h = self.window, self.width, self.heads
        dk = d // h
        pad = w - n
        x = np.empty((w, d))
        x[:pad] = self.start.values
        for i, t in enumerate(tokens):
            t = np.asarray(t, dtype=np.float64)
            if t.shape != (d,):
                raise ValueError(f"token width {t.shape} != ({d},)")
            x[pad + i] = t
        x = x + self.pos.values

        scale = 1.0 / math.sqrt(dk)
        layer_tapes = []
        for p in self.layer_params:
            x_in = x
            n1, ln1_cache = _layer_norm_forward(x_in, p["ln1_g"], p["ln1_b"])
            q = n1 @ p["wq"].values + p["bq"].values
            k = n1 @ p["wk"].values + p["bk"].values
            v = n1 @ p["wv"].values + p["bv"].values
            qh = q.reshape(w, h, dk).transpose(1, 0, 2)
            kh = k.reshape(w, h, dk).transpose(1, 0, 2)
            vh = v.reshape(w, h, dk).transpose(1, 0, 2)
            scores = np.einsum("hid,hjd->hij", qh, kh) * scale
            attn = softmax(scores, axis=-1)
            ctxh = np.einsum("hij,hjd->hid", attn, vh)
            ctx = ctxh.transpose(1, 0, 2).reshape(w, d)
            attn_out = ctx @ p["wo"].values + p["bo"].values
            x_mid = x_in + attn_out
            n2, ln2_cache = _layer_norm_forward(x_mid, p["ln2_g"], p["ln2_b"])
            a1 = np.tanh(n2 @ p["w1"].values + p["b1"].values)
            f = a1 @ p["w2"].values + p["b2"].values
            x = x_mid + f
            layer_tapes.append(
                {
                    "x_in": x_in, "n1": n1, "ln1": ln1_cache,
                    "qh": qh, "kh": kh, "vh": vh, "attn": attn, "ctx": ctx,
                    "x_mid": x_mid, "n2": n2, "ln2": ln2_cache, "a1": a1,
                }
            )
        tape = {"n_tokens": n, "pad": pad, "layers": layer_tapes}
        return x[-1].copy(), tape

    def backward(self, tape, ds):
        """Push a gradient at the output state back to the input tokens.

        Accumulates parameter gradients and returns a list with one
        gradient array per input token.
        """
        w, d, h = self.window, self.width, self.heads
        dk = d // h
        scale = 1.0 / math.sqrt(dk)
        dx = np.zeros((w, d))
        dx[-1] = ds
        for p, lt in zip(reversed(self.layer_params), reversed(tape["layers"])):
            # feed-forward branch
            df = dx
            da1 = df @ p["w2"].values.T
            p["w2"].grad += lt["a1"].T @ df
            p["b2"].grad += df.sum(axis=0)
            dh1 = da1 * (1.0 - lt["a1"] ** 2)
            dn2 = dh1 @ p["w1"].values.T
            p["w1"].grad += lt["n2"].T @ dh1
            p["b1"].grad += dh1.sum(axis=0)
            dx_mid = dx + _layer_norm_backward(lt["ln2"], p["ln2_g"], p["ln2_b"], dn2)
            # attention branch
            dattn_out = dx_mid
            dctx = dattn_out @ p["wo"].values.T
            p["wo"].grad += lt["ctx"].T @ dattn_out
            p["bo"].grad += dattn_out.sum(axis=0)
            dctxh = dctx.reshape(w, h, dk).transpose(1, 0, 2)
            dattn = np.einsum("hid,hjd->hij", dctxh, lt["vh"])
            dvh = np.einsum("hij,hid->hjd", lt["attn"], dctxh)
            inner = (dattn * lt["attn"]).sum(axis=-1, keepdims=True)
            dscores = lt["attn"] * (dattn - inner)
            dqh = np.einsum("hij,hjd->hid", dscores, lt["kh"]) * scale
            dkh = np.einsum("hij,hid->hjd", dscores, lt["qh"]) * scale
            dq = dqh.transpose(1, 0, 2).reshape(w, d)
            dk_ = dkh.transpose(1, 0, 2).reshape(w, d)
            dv = dvh.transpose(1, 0, 2).reshape(w, d)
            dn1 = dq @ p["wq"].values.T + dk_ @ p["wk"].values.T + dv @ p["wv"].values.T
            p["wq"].grad += lt["n1"].T @ dq
            p["bq"].grad += dq.sum(axis=0)
            p["wk"].grad += lt["n1"].T @ dk_
            p["bk"].grad += dk_.sum(axis=0)
            p["wv"].grad += lt["n1"].T @ dv
            p["bv"].grad += dv.sum(axis=0)
            dx = dx_mid + _layer_norm_backward(lt["ln1"], p["ln1_g"], p["ln1_b"], dn1)
        self.pos.grad += dx
        pad = tape["pad"]
        if pad > 0:
            self.start.grad += dx[:pad].sum(axis=0)
        return [dx[pad + i].copy() for i in range(tape["n_tokens"])]


def softmax_policy(logits, mask=None, temperature=1.0, rng=None):
    """Sample an action from a masked, temperature-scaled softmax.

    `mask` marks selectable entries with True (None = all selectable).
    Returns (action, logprob, probs); probs are exactly zero on masked-out
    entries.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    z = logits / temperature
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("all actions are masked")
        z = np.where(mask, z, -np.inf)
    probs = softmax(z)
    if rng is None:
        raise ValueError("softmax_policy needs an rng to sample")
    cdf = np.cumsum(probs)
    r = rng.random()
    action = int(np.searchsorted(cdf, r, side="right"))
    action = min(action, len(probs) - 1)
    while probs[action] == 0.0:
        action -= 1
    return action, float(np.log(probs[action])), probs


def greedy_action(logits, mask=None):
    """Deterministic argmax over selectable entries (lowest index on ties)."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("all actions are masked")
        z = np.where(mask, z, -np.inf)
    return int(np.argmax(z))


# --- checkpoint fragments -------------------------------------------------

def block_state(blocks):
    """Flatten blocks into a {name: array-or-int} state mapping."""
    state = {}
    for b in blocks:
        state[f"{b.name}:values"] = b.values
        state[f"{b.name}:adam_m"] = b.adam_m
        state[f"{b.name}:adam_v"] = b.adam_v
        state[f"{b.name}:step_count"] = b.step_count
    return state


def load_block_state(blocks, state):
    """Restore block contents in place from a state mapping."""
    for b in blocks:
        for suffix, target in (("values", b.values), ("adam_m", b.adam_m), ("adam_v", b.adam_v)):
            key = f"{b.name}:{suffix}"
            if key not in state:
                raise KeyError(f"checkpoint is missing '{key}'")
            arr = state[key]
            if arr.shape != target.shape:
                raise ValueError(f"shape mismatch for '{key}': {arr.shape} != {target.shape}")
            target[...] = arr
        b.step_count = int(state[f"{b.name}:step_count"])


def write_fragment(fh, state):
    """Write a state mapping as a text fragment (17 significant digits)."""
    for name in sorted(state):
        v = state[name]
        if isinstance(v, (int, np.integer)):
            fh.write(f"int {name} {int(v)}\n")
            continue
        arr = np.asarray(v)
        kind = "i" if arr.dtype.kind in "iu" else "f"
        dims = " ".join(str(s) for s in arr.shape)
        fh.write(f"array {name} {kind} {arr.ndim} {dims}\n")
        flat = arr.reshape(-1)
        if kind == "i":
            body = (str(int(x)) for x in flat)
        else:
            body = (format(float(x), ".17g") for x in flat)
        line = []
        for tok in body:
            line.append(tok)
            if len(line) == 16:
                fh.write(" ".join(line) + "\n")
                line = []
        if line:
            fh.write(" ".join(line) + "\n")


def read_fragment(fh):
    """Parse a text fragment back into a {name: array-or-int} mapping."""
    state = {}
    header = None
    buf = []
    need = 0

    def finish():
        name, kind, shape = header
        if kind == "i":
            arr = np.array([int(t) for t in buf], dtype=np.int64)
        else:
            arr = np.array([float(t) for t in buf], dtype=np.float64)
        state[name] = arr.reshape(shape)

    for raw in fh:
        line = raw.strip()
        if not line:
            continue
        if header is not None and need > 0:
            toks = line.split()
            buf.extend(toks)
            need -= len(toks)
            if need <= 0:
                finish()
                header, buf, need = None, [], 0
            continue
        parts = line.split()
        if parts[0] == "int":
            state[parts[1]] = int(parts[2])
        elif parts[0] == "array":
            name, kind, ndim = parts[1], parts[2], int(parts[3])
            shape = tuple(int(x) for x in parts[4 : 4 + ndim])
            count = int(np.prod(shape)) if shape else 1
            if count == 0:
                state[name] = np.zeros(shape, dtype=np.int64 if kind == "i" else np.float64)
            else:
                header, buf, need = (name, kind, shape), [], count
        else:
            raise ValueError(f"bad fragment line: {line!r}")
    if header is not None:
        raise ValueError("truncated fragment")
    return state


# --- finite-difference verification ----------------------------------------

def gradient_check(blocks, loss_fn, backward_fn, step=1e-5, floor=1e-3):
    """Max relative error between analytic gradients and central differences.

    `backward_fn()` must run a full forward+backward over the current
    parameter values and return the scalar loss; `loss_fn()` reruns just
    the forward pass. Both must be deterministic in the parameters.

    The denominator is floored: central differences on a flat direction
    are dominated by subtraction roundoff (~1e-10 for unit-scale losses),
    so gradients below `floor` are compared on an absolute scale. A wrong
    analytic gradient still shows up at O(1) relative error.
    """
    zero_grads(blocks)
    backward_fn()
    analytic = [b.grad.copy() for b in blocks]
    worst = 0.0
    for b, g in zip(blocks, analytic):
        flat = b.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(fd), floor)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    zero_grads(blocks)
    return worst
