"""Token classifier: alternating attention / state-space blocks and a softmax head.

The model is small enough to run in float64 numpy with hand-written reverse
mode gradients.  Blocks are residual, ``x <- x + block(x)``:

* attention: ``softmax(X Eq (X Ek)^T / sqrt(C1)) X Ev`` followed by an output
  projection ``Eo``;
* state space: a left-to-right scan ``h_t = a_t * h_{t-1} + g_t * x_t`` with
  ``a_t = sigmoid(x_t Wa + ba)`` and ``g_t = x_t Wb + bb`` (both per-channel),
  read out as ``y_t = h_t C + x_t D``.

Parameters live in an ordered ``dict`` keyed ``"<block>.<kind>.<name>"`` plus
``"head.W"`` / ``"head.b"``; the key order is the declaration order used by
checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, TrainingDivergedError
from .softlabel import LOG_FLOOR, SoftLabelMatrix

__all__ = [
    "ATTENTION",
    "SSM",
    "DEFAULT_PATTERN",
    "param_shapes",
    "init_params",
    "pattern_from_params",
    "softmax",
    "attention_forward",
    "ssm_scan",
    "ssm_forward",
    "forward",
    "classify",
    "loss_and_gradient",
    "gradient_descent",
]

ATTENTION = "attention"
SSM = "ssm"
DEFAULT_PATTERN = (ATTENTION, SSM, ATTENTION, SSM)

_ATTN_NAMES = ("Eq", "Ek", "Ev", "Eo")
_SSM_NAMES = ("Wa", "ba", "Wb", "bb", "C", "D")


def _check_pattern(pattern):
    pattern = tuple(pattern)
    if not pattern:
        raise InvalidInputError("block pattern must not be empty")
    bad = [p for p in pattern if p not in (ATTENTION, SSM)]
    if bad:
        raise InvalidInputError(f"unknown block tags {bad}")
    return pattern


def param_shapes(channels: int, n_classes: int, pattern=DEFAULT_PATTERN) -> list[tuple[str, tuple]]:
    pattern = _check_pattern(pattern)
    c = channels
    shapes = []
    for i, kind in enumerate(pattern):
        if kind == ATTENTION:
            shapes += [(f"{i}.attn.{n}", (c, c)) for n in _ATTN_NAMES]
        else:
            shapes += [(f"{i}.ssm.Wa", (c, c)), (f"{i}.ssm.ba", (c,)),
                       (f"{i}.ssm.Wb", (c, c)), (f"{i}.ssm.bb", (c,)),
                       (f"{i}.ssm.C", (c, c)), (f"{i}.ssm.D", (c, c))]
    shapes += [("head.W", (c, n_classes)), ("head.b", (n_classes,))]
    return shapes


def init_params(channels: int, n_classes: int, pattern=DEFAULT_PATTERN, seed: int = 0) -> dict:
    """Seeded uniform initialization on [-0.05, 0.05]."""
    rng = np.random.default_rng(seed)
    return {name: rng.uniform(-0.05, 0.05, size=shape)
            for name, shape in param_shapes(channels, n_classes, pattern)}


def pattern_from_params(params: dict) -> tuple[str, ...]:
    kinds = {}
    for name in params:
        head, _, rest = name.partition(".")
        if head.isdigit():
            kinds[int(head)] = ATTENTION if rest.startswith("attn.") else SSM
    return tuple(kinds[i] for i in range(len(kinds)))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- attention ---------------------------------------------------------------

def _attention(x, eq, ek, ev):
    q, k, v = x @ eq, x @ ek, x @ ev
    scale = math.sqrt(x.shape[1])
    p = softmax(q @ k.T / scale)
    return p @ v, (q, k, v, p, scale)


def attention_forward(s, eq, ek, ev) -> np.ndarray:
    """Single-head scaled dot-product self-attention over the token rows."""
    s = np.asarray(s, dtype=np.float64)
    return _attention(s, eq, ek, ev)[0]


def _attention_backward(dout, x, eq, ek, ev, cache):
    q, k, v, p, scale = cache
    dv = p.T @ dout
    dp = dout @ v.T
    dz = p * (dp - np.sum(dp * p, axis=1, keepdims=True)) / scale
    dq = dz @ k
    dk = dz.T @ q
    grads = (x.T @ dq, x.T @ dk, x.T @ dv)
    dx = dq @ eq.T + dk @ ek.T + dv @ ev.T
    return dx, grads


# -- state space ---------------------------------------------------------------

def ssm_scan(x, a, g, c, d) -> np.ndarray:
    """Run ``h_t = a_t*h_{t-1} + g_t*x_t``, ``y_t = h_t C + x_t D`` from ``h_0 = 0``.

    ``a`` and ``g`` are per-step, per-channel gate arrays shaped like ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    h = _scan(x, np.asarray(a, dtype=np.float64), np.asarray(g, dtype=np.float64))
    return h @ c + x @ d


def _scan(x, a, g):
    h = np.empty_like(x)
    prev = np.zeros(x.shape[1])
    for t in range(len(x)):
        prev = a[t] * prev + g[t] * x[t]
        h[t] = prev
    return h


def _ssm(x, wa, ba, wb, bb, c, d):
    a = _sigmoid(x @ wa + ba)
    g = x @ wb + bb
    h = _scan(x, a, g)
    return h @ c + x @ d, (a, g, h)


def ssm_forward(s, wa, ba, wb, bb, c, d) -> np.ndarray:
    """Selective scan with input-dependent transition and input gates."""
    s = np.asarray(s, dtype=np.float64)
    return _ssm(s, wa, ba, wb, bb, c, d)[0]


def _ssm_backward(dy, x, wa, wb, c, d, cache):
    a, g, h = cache
    dc = h.T @ dy
    dd = x.T @ dy
    dh_out = dy @ c.T
    dx = dy @ d.T
    dh = np.empty_like(h)
    carry = np.zeros(h.shape[1])
    for t in range(len(x) - 1, -1, -1):
        carry = dh_out[t] + carry
        dh[t] = carry
        carry = carry * a[t]
    h_prev = np.vstack([np.zeros((1, h.shape[1])), h[:-1]])
    da = dh * h_prev
    dg = dh * x
    dx += dh * g
    dza = da * a * (1.0 - a)
    dx += dza @ wa.T + dg @ wb.T
    grads = (x.T @ dza, dza.sum(axis=0), x.T @ dg, dg.sum(axis=0), dc, dd)
    return dx, grads


# -- model ---------------------------------------------------------------------

def forward(tokens, params: dict, pattern=None):
    """Return ``(probabilities, caches)``; caches feed :func:`loss_and_gradient`."""
    x = np.asarray(tokens, dtype=np.float64)
    pattern = _check_pattern(pattern if pattern is not None else pattern_from_params(params))
    caches = []
    for i, kind in enumerate(pattern):
        if kind == ATTENTION:
            eq, ek, ev, eo = (params[f"{i}.attn.{n}"] for n in _ATTN_NAMES)
            att, cache = _attention(x, eq, ek, ev)
            caches.append((kind, x, att, cache))
            x = x + att @ eo
        else:
            wa, ba, wb, bb, c, d = (params[f"{i}.ssm.{n}"] for n in _SSM_NAMES)
            y, cache = _ssm(x, wa, ba, wb, bb, c, d)
            caches.append((kind, x, None, cache))
            x = x + y
    probs = softmax(x @ params["head.W"] + params["head.b"])
    return probs, (caches, x)


def classify(tokens, params: dict, pattern=None) -> np.ndarray:
    """Class probabilities per token, M x C."""
    return forward(tokens, params, pattern)[0]


def loss_and_gradient(tokens, params: dict, labels: SoftLabelMatrix, sst: float = 0.0,
                      pattern=None, loss_scale: float = 1.0):
    """Total objective ``CE + sst`` and its gradient for every parameter.

    ``sst`` is the separation loss of the fixed clustering; it shifts the
    objective but has no parameter gradient here.
    """
    pattern = _check_pattern(pattern if pattern is not None else pattern_from_params(params))
    probs, (caches, top) = forward(tokens, params, pattern)
    valid = labels.valid
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateInputError("no token has labeled pixels")
    lab = labels.values
    ce = -np.sum(lab[valid] * np.log(np.maximum(probs[valid], LOG_FLOOR))) / n_valid
    loss = loss_scale * (ce + sst)

    grads = {}
    dlogits = np.zeros_like(probs)
    dlogits[valid] = probs[valid] * lab[valid].sum(axis=1, keepdims=True) - lab[valid]
    dlogits *= loss_scale / n_valid
    grads["head.W"] = top.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dx = dlogits @ params["head.W"].T
    for i in range(len(pattern) - 1, -1, -1):
        kind, x_in, att, cache = caches[i]
        if kind == ATTENTION:
            eq, ek, ev, eo = (params[f"{i}.attn.{n}"] for n in _ATTN_NAMES)
            grads[f"{i}.attn.Eo"] = att.T @ dx
            dblock, (geq, gek, gev) = _attention_backward(dx @ eo.T, x_in, eq, ek, ev, cache)
            grads[f"{i}.attn.Eq"], grads[f"{i}.attn.Ek"], grads[f"{i}.attn.Ev"] = geq, gek, gev
        else:
            wa, _, wb, _, c, d = (params[f"{i}.ssm.{n}"] for n in _SSM_NAMES)
            dblock, g = _ssm_backward(dx, x_in, wa, wb, c, d, cache)
            for n, v in zip(_SSM_NAMES, g):
                grads[f"{i}.ssm.{n}"] = v
        dx = dx + dblock
    return float(loss), {name: grads[name] for name in params}


def gradient_descent(tokens, params: dict, labels: SoftLabelMatrix, steps: int, lr: float,
                     sst: float = 0.0, pattern=None):
    """Plain gradient descent; returns ``(final_params, per-step losses)``.

    Loss ``i`` of the trace is evaluated before update ``i``.
    """
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    params = {k: v.copy() for k, v in params.items()}
    trace = []
    for step in range(steps):
        # overflow surfaces as a non-finite loss, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_gradient(tokens, params, labels, sst, pattern)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}")
        trace.append(loss)
        for k in params:
            params[k] -= lr * grads[k]
    return params, trace
