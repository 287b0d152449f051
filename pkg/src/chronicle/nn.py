"""Decoder-only causal transformer in numpy with hand-written backprop.

Pre-norm blocks, learned positional embeddings, GELU feedforward, untied
output projection. Parameters live in a flat name -> array dict so the
optimizer, serializer, and finite-difference checks can treat the model
as one vector. All functions are dtype-polymorphic: float32 for speed,
float64 for gradient verification.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def tensor_names(n_layers: int) -> list[str]:
    """Canonical parameter order used by the optimizer and the artifact."""
    names = ["tok_emb", "pos_emb"]
    for i in range(n_layers):
        p = f"h{i}."
        names += [
            p + "ln1_g", p + "ln1_b",
            p + "attn_wqkv", p + "attn_bqkv",
            p + "attn_wo", p + "attn_bo",
            p + "ln2_g", p + "ln2_b",
            p + "mlp_w1", p + "mlp_b1",
            p + "mlp_w2", p + "mlp_b2",
        ]
    names += ["lnf_g", "lnf_b", "w_out"]
    return names


def init_params(
    vocab_size: int,
    context_len: int,
    n_layers: int,
    n_heads: int,
    d_model: int,
    d_ff: int,
    seed: int,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    if d_model % n_heads != 0:
        raise ValueError("d_model must be divisible by n_heads")
    rng = np.random.default_rng(seed)

    def normal(*shape, std=0.02):
        return rng.normal(0.0, std, size=shape).astype(dtype)

    # Residual projections get the 1/sqrt(2L) shrink so depth does not
    # blow up the residual stream at init.
    resid_std = 0.02 / math.sqrt(2 * max(1, n_layers))
    params: dict[str, np.ndarray] = {
        "tok_emb": normal(vocab_size, d_model),
        "pos_emb": normal(context_len, d_model),
    }
    for i in range(n_layers):
        p = f"h{i}."
        params[p + "ln1_g"] = np.ones(d_model, dtype=dtype)
        params[p + "ln1_b"] = np.zeros(d_model, dtype=dtype)
        params[p + "attn_wqkv"] = normal(d_model, 3 * d_model)
        params[p + "attn_bqkv"] = np.zeros(3 * d_model, dtype=dtype)
        params[p + "attn_wo"] = normal(d_model, d_model, std=resid_std)
        params[p + "attn_bo"] = np.zeros(d_model, dtype=dtype)
        params[p + "ln2_g"] = np.ones(d_model, dtype=dtype)
        params[p + "ln2_b"] = np.zeros(d_model, dtype=dtype)
        params[p + "mlp_w1"] = normal(d_model, d_ff)
        params[p + "mlp_b1"] = np.zeros(d_ff, dtype=dtype)
        params[p + "mlp_w2"] = normal(d_ff, d_model, std=resid_std)
        params[p + "mlp_b2"] = np.zeros(d_model, dtype=dtype)
    params["lnf_g"] = np.ones(d_model, dtype=dtype)
    params["lnf_b"] = np.zeros(d_model, dtype=dtype)
    params["w_out"] = normal(d_model, vocab_size)
    return params


# ---------------------------------------------------------------------------
# Primitive layers. Each forward returns (output, cache); each backward
# consumes the cache and returns input gradients plus parameter gradients.


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu_fwd(x):
    # in-place chains: large temporaries are expensive on this path
    x2 = x * x
    u = x2 * x
    u *= _GELU_C
    u += x
    u *= _GELU_K
    t = np.tanh(u)
    y = t + 1.0
    y *= x
    y *= 0.5
    return y, (x, x2, t)


def _gelu_bwd(dy, cache):
    # d/dx [0.5 x (1 + tanh u)] = 0.5 [(1 + t) + x (1 - t^2) u']
    x, x2, t = cache
    du = x2 * (3.0 * _GELU_C)
    du += 1.0
    du *= _GELU_K
    g = t * t
    np.subtract(1.0, g, out=g)
    g *= x
    g *= du
    g += t
    g += 1.0
    g *= 0.5
    g *= dy
    return g


def _dropout_fwd(x, p, rng):
    if rng is None or p <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


def _attention_fwd(a, wqkv, bqkv, wo, bo, n_heads, p_drop, rng):
    B, T, d = a.shape
    hd = d // n_heads
    scale = 1.0 / math.sqrt(hd)

    qkv = a @ wqkv
    qkv += bqkv
    q, k, v = np.split(qkv, 3, axis=-1)
    q = q.reshape(B, T, n_heads, hd).transpose(0, 2, 1, 3)
    k = k.reshape(B, T, n_heads, hd).transpose(0, 2, 1, 3)
    v = v.reshape(B, T, n_heads, hd).transpose(0, 2, 1, 3)

    scores = q @ k.transpose(0, 1, 3, 2)
    scores *= scale
    scores[:, :, ~np.tril(np.ones((T, T), dtype=bool))] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    att = np.exp(scores, out=scores)
    att /= att.sum(axis=-1, keepdims=True)

    att_d, att_keep = _dropout_fwd(att, p_drop, rng)
    ctx = att_d @ v
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, d)
    out = merged @ wo + bo
    return out, (a, q, k, v, att, att_keep, merged, wo, wqkv, scale)


def _attention_bwd(dout, cache, n_heads):
    a, q, k, v, att, att_keep, merged, wo, wqkv, scale = cache
    B, T, d = a.shape
    hd = d // n_heads

    dwo = merged.reshape(-1, d).T @ dout.reshape(-1, d)
    dbo = dout.sum(axis=(0, 1))
    dmerged = dout @ wo.T
    dctx = dmerged.reshape(B, T, n_heads, hd).transpose(0, 2, 1, 3)

    att_d = att if att_keep is None else att * att_keep
    datt = dctx @ v.transpose(0, 1, 3, 2)
    dv = att_d.transpose(0, 1, 3, 2) @ dctx
    datt = _dropout_bwd(datt, att_keep)

    # softmax backward in place; masked cells have att == 0, so their
    # gradient vanishes with the product
    datt -= (datt * att).sum(axis=-1, keepdims=True)
    datt *= att
    datt *= scale
    dscores = datt
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dqkv = np.concatenate(
        [
            dq.transpose(0, 2, 1, 3).reshape(B, T, d),
            dk.transpose(0, 2, 1, 3).reshape(B, T, d),
            dv.transpose(0, 2, 1, 3).reshape(B, T, d),
        ],
        axis=-1,
    )
    dwqkv = a.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
    dbqkv = dqkv.sum(axis=(0, 1))
    da = dqkv @ wqkv.T
    return da, dwqkv, dbqkv, dwo, dbo


def _mlp_fwd(a, w1, b1, w2, b2, p_drop, rng):
    h = a @ w1
    h += b1
    g, gelu_cache = _gelu_fwd(h)
    out = g @ w2
    out += b2
    out_d, keep = _dropout_fwd(out, p_drop, rng)
    return out_d, (a, gelu_cache, g, w1, w2, keep)


def _mlp_bwd(dout, cache):
    a, gelu_cache, g, w1, w2, keep = cache
    d = a.shape[-1]
    dff = g.shape[-1]
    dout = _dropout_bwd(dout, keep)
    dw2 = g.reshape(-1, dff).T @ dout.reshape(-1, d)
    db2 = dout.sum(axis=(0, 1))
    dg = dout @ w2.T
    dh = _gelu_bwd(dg, gelu_cache)
    dw1 = a.reshape(-1, d).T @ dh.reshape(-1, dff)
    db1 = dh.sum(axis=(0, 1))
    da = dh @ w1.T
    return da, dw1, db1, dw2, db2


# ---------------------------------------------------------------------------
# Full network


def forward(
    params: dict[str, np.ndarray],
    n_layers: int,
    n_heads: int,
    ids: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    want_cache: bool = False,
):
    """Logits for a batch of index sequences, shape (B, T, V).

    With ``rng=None`` the pass is deterministic inference; passing a
    generator enables dropout at rate ``dropout``.
    """
    B, T = ids.shape
    x = params["tok_emb"][ids]
    x += params["pos_emb"][:T][None, :, :]
    x, emb_keep = _dropout_fwd(x, dropout, rng)
    x_embed = x

    block_caches = []
    for i in range(n_layers):
        p = f"h{i}."
        a, ln1c = _layernorm_fwd(x, params[p + "ln1_g"], params[p + "ln1_b"])
        attn_out, attc = _attention_fwd(
            a,
            params[p + "attn_wqkv"], params[p + "attn_bqkv"],
            params[p + "attn_wo"], params[p + "attn_bo"],
            n_heads, dropout, rng,
        )
        attn_out, attn_keep = _dropout_fwd(attn_out, dropout, rng)
        x = x + attn_out
        m, ln2c = _layernorm_fwd(x, params[p + "ln2_g"], params[p + "ln2_b"])
        mlp_out, mlpc = _mlp_fwd(
            m,
            params[p + "mlp_w1"], params[p + "mlp_b1"],
            params[p + "mlp_w2"], params[p + "mlp_b2"],
            dropout, rng,
        )
        x = x + mlp_out
        block_caches.append((ln1c, attc, attn_keep, ln2c, mlpc))

    xf, lnfc = _layernorm_fwd(x, params["lnf_g"], params["lnf_b"])
    logits = xf @ params["w_out"]
    if not want_cache:
        return logits
    cache = (ids, emb_keep, x_embed, block_caches, xf, lnfc)
    return logits, cache


def backward(
    params: dict[str, np.ndarray],
    n_layers: int,
    n_heads: int,
    cache,
    dlogits: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar with given dlogits; also returns the gradient
    at the embedding output (token + positional sum), used for saliency."""
    ids, emb_keep, _, block_caches, xf, lnfc = cache
    B, T = ids.shape

    d = params["tok_emb"].shape[1]
    grads = {
        "w_out": xf.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
    }
    dxf = dlogits @ params["w_out"].T
    dx, grads["lnf_g"], grads["lnf_b"] = _layernorm_bwd(dxf, lnfc)

    for i in reversed(range(n_layers)):
        p = f"h{i}."
        ln1c, attc, attn_keep, ln2c, mlpc = block_caches[i]

        da_mlp, dw1, db1, dw2, db2 = _mlp_bwd(dx, mlpc)
        grads[p + "mlp_w1"], grads[p + "mlp_b1"] = dw1, db1
        grads[p + "mlp_w2"], grads[p + "mlp_b2"] = dw2, db2
        dres, dg2, db2n = _layernorm_bwd(da_mlp, ln2c)
        grads[p + "ln2_g"], grads[p + "ln2_b"] = dg2, db2n
        dx = dx + dres

        dattn_out = _dropout_bwd(dx, attn_keep)
        da_att, dwqkv, dbqkv, dwo, dbo = _attention_bwd(dattn_out, attc, n_heads)
        grads[p + "attn_wqkv"], grads[p + "attn_bqkv"] = dwqkv, dbqkv
        grads[p + "attn_wo"], grads[p + "attn_bo"] = dwo, dbo
        dres, dg1, db1n = _layernorm_bwd(da_att, ln1c)
        grads[p + "ln1_g"], grads[p + "ln1_b"] = dg1, db1n
        dx = dx + dres

    dx_embed = dx
    dx = _dropout_bwd(dx, emb_keep)
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, ids, dx)
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:T] = dx.sum(axis=0)
    grads["tok_emb"] = dtok
    grads["pos_emb"] = dpos
    return grads, dx_embed


def log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(
    params: dict[str, np.ndarray],
    n_layers: int,
    n_heads: int,
    batch: np.ndarray,
    valid: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    want_grads: bool = True,
):
    """Mean causal cross-entropy over valid target positions.

    ``batch`` is (B, T) token indices; ``valid`` is a (B, T-1) bool mask
    over target positions (position j masks prediction of batch[:, j+1]).
    Returns (loss, grads) with grads None when not requested. A batch
    with zero valid targets yields loss 0 and all-zero gradients.
    """
    B, T = batch.shape
    n_valid = int(valid.sum())
    if T < 2 or n_valid == 0:
        zero = {k: np.zeros_like(v) for k, v in params.items()} if want_grads else None
        return 0.0, zero

    inputs = batch[:, :-1]
    targets = batch[:, 1:]
    logits, cache = forward(
        params, n_layers, n_heads, inputs, dropout=dropout, rng=rng, want_cache=True
    )
    logp = log_softmax(logits)
    took = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(took * valid).sum() / n_valid)

    if not want_grads:
        return loss, None

    # dL/dlogits = (softmax - onehot) / n_valid on valid positions
    dlogits = np.exp(logp)
    rows = np.arange(B)[:, None]
    cols = np.arange(T - 1)[None, :]
    dlogits[rows, cols, targets] -= 1.0
    dlogits *= (valid / n_valid)[..., None].astype(dlogits.dtype)
    grads, _ = backward(params, n_layers, n_heads, cache, dlogits)
    return loss, grads
