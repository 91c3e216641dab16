"""Small differentiable vision policy, written directly in numpy.

Fixed topology (version 1): two 3x3 same-padding conv layers with relu and
2x2 average pooling, then the flattened features are concatenated with a
one-hot instruction vector and pushed through two dense layers to produce
one logit per discrete action.  Forward, backward, and the SGD loop are
all hand-rolled so input gradients (needed by the patch optimizer) come
from the same code path as parameter gradients.

Backward passes here are exact transposes of the forward ops; the test
suite checks every parameter block and the input gradient against central
finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .imgcore import SeededRng, write_bytes_atomic

NET_MAGIC = b"PVEPNET1"

PARAM_ORDER = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
)


@dataclass(frozen=True)
class PolicyArch:
    """Shape constants for the version-1 policy network."""

    height: int = 32
    width: int = 32
    in_channels: int = 3
    conv1_channels: int = 8
    conv2_channels: int = 16
    hidden: int = 64
    num_instructions: int = 6
    num_actions: int = 32
    version: int = 1

    @property
    def flat_dim(self) -> int:
        return (self.height // 4) * (self.width // 4) * self.conv2_channels

    @property
    def feat_dim(self) -> int:
        return self.flat_dim + self.num_instructions


def param_shapes(arch: PolicyArch) -> dict[str, tuple[int, ...]]:
    return {
        "conv1_w": (3, 3, arch.in_channels, arch.conv1_channels),
        "conv1_b": (arch.conv1_channels,),
        "conv2_w": (3, 3, arch.conv1_channels, arch.conv2_channels),
        "conv2_b": (arch.conv2_channels,),
        "fc1_w": (arch.feat_dim, arch.hidden),
        "fc1_b": (arch.hidden,),
        "fc2_w": (arch.hidden, arch.num_actions),
        "fc2_b": (arch.num_actions,),
    }


def init_params(arch: PolicyArch, rng: SeededRng) -> dict[str, np.ndarray]:
    """Glorot-uniform weights (conv fans count the full 3x3 window), zero
    biases.  Draw order follows PARAM_ORDER, so a given seed always yields
    the same network.

    Blocks are float32 — the same precision the checkpoint format stores —
    which roughly halves training time.  Upcast copies when float64 is
    wanted (the finite-difference tests do)."""
    params = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        if len(shape) == 4:
            fan_in = 9 * shape[2]
            fan_out = 9 * shape[3]
        else:
            fan_in, fan_out = shape
        s = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-s, s, size=shape).astype(np.float32)
    return params


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def _im2col3(xp: np.ndarray, h: int, wd: int) -> np.ndarray:
    """Unfold padded (B, H+2, W+2, C) into (B*H*W, 9*C) rows, one per
    output pixel, columns ordered (dr, dc, channel) to match a reshaped
    (3, 3, Cin, Cout) kernel."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        xp.shape[0] * h * wd, -1
    )


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, return_cols=False):
    """3x3 convolution with zero 'same' padding, stride 1.

    x: (B, H, W, Cin); w: (3, 3, Cin, Cout); b: (Cout,).  Unfolds the
    input windows (im2col) so the whole layer is one matmul.  With
    return_cols the unfolded matrix is handed back so backward can reuse
    it instead of unfolding again.
    """
    bsz, h, wd, cin = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = _im2col3(xp, h, wd)
    out = (cols @ w.reshape(9 * cin, -1) + b).reshape(bsz, h, wd, -1)
    if return_cols:
        return out, cols
    return out


def conv3x3_backward(
    x: np.ndarray, w: np.ndarray, g: np.ndarray, cols: np.ndarray | None = None, want_dx=True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv3x3_forward: returns (dx, dw, db) given upstream g.

    cols, if given, is the unfolded input from the forward pass.  want_dx
    = False skips the input gradient (dx comes back None) — the training
    loop never needs it at the first layer.
    """
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    if cols is None:
        cols = _im2col3(np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0))), h, wd)
    gflat = g.reshape(bsz * h * wd, cout)
    dw = (cols.T @ gflat).reshape(3, 3, cin, cout)
    db = g.sum(axis=(0, 1, 2))
    if not want_dx:
        return None, dw, db
    # accumulate the input gradient one kernel offset at a time, adding
    # into the padded position each forward window read from
    gp = np.zeros((bsz, h + 2, wd + 2, cin), dtype=np.result_type(g, w))
    for dr in range(3):
        for dc in range(3):
            gp[:, dr : dr + h, dc : dc + wd, :] += g @ w[dr, dc].T
    return gp[:, 1 : h + 1, 1 : wd + 1, :], dw, db


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    bsz, h, w, c = x.shape
    return x.reshape(bsz, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2_backward(g: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    bsz, h, w, c = in_shape
    spread = np.broadcast_to(
        (g / 4.0)[:, :, None, :, None, :], (bsz, h // 2, 2, w // 2, 2, c)
    )
    return spread.reshape(bsz, h, w, c)


def one_hot(indices, depth: int, dtype=np.float64) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.ndim == 0:
        idx = idx[None]
    if idx.min() < 0 or idx.max() >= depth:
        raise ValueError(f"index outside [0, {depth}): {idx.min()}..{idx.max()}")
    out = np.zeros((idx.shape[0], depth), dtype=dtype)
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------


def forward(
    params: dict, arch: PolicyArch, images: np.ndarray, onehots: np.ndarray, want_cache=False
):
    """Batched forward pass: images (B, H, W, 3), onehots (B, K) -> logits
    (B, A).  With want_cache the intermediate activations are returned for
    backward()."""
    # center pixels at 0 so the flat mid-gray background contributes nothing;
    # without this, a shared DC term dominates every conv unit and SGD stalls
    # at the label prior (the shift is slope-1, so pixel gradients are the
    # same either way)
    x = images - 0.5
    z1, cols1 = conv3x3_forward(x, params["conv1_w"], params["conv1_b"], return_cols=True)
    a1 = np.maximum(z1, 0.0)
    p1 = avgpool2_forward(a1)
    z2, cols2 = conv3x3_forward(p1, params["conv2_w"], params["conv2_b"], return_cols=True)
    a2 = np.maximum(z2, 0.0)
    p2 = avgpool2_forward(a2)
    flat = p2.reshape(p2.shape[0], -1)
    feat = np.concatenate([flat, onehots], axis=1)
    z3 = feat @ params["fc1_w"] + params["fc1_b"]
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ params["fc2_w"] + params["fc2_b"]
    if not want_cache:
        return logits
    cache = {"x": x, "z1": z1, "p1": p1, "z2": z2, "a2": a2, "feat": feat,
             "z3": z3, "a3": a3, "cols1": cols1, "cols2": cols2}
    return logits, cache


def backward(params: dict, arch: PolicyArch, cache: dict, dlogits: np.ndarray, want_dx=True):
    """Backprop through forward(); returns (param grads, image grads).

    want_dx=False skips the image gradient (None comes back) — training
    only needs parameter gradients, and the first conv layer's input
    gradient is the single most expensive piece of the pass.
    """
    a3, z3, feat = cache["a3"], cache["z3"], cache["feat"]
    grads = {}
    grads["fc2_w"] = a3.T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    dz3 = (dlogits @ params["fc2_w"].T) * (z3 > 0.0)
    grads["fc1_w"] = feat.T @ dz3
    grads["fc1_b"] = dz3.sum(axis=0)
    dfeat = dz3 @ params["fc1_w"].T
    dflat = dfeat[:, : arch.flat_dim]
    bsz = dflat.shape[0]
    h4, w4 = arch.height // 4, arch.width // 4
    dp2 = dflat.reshape(bsz, h4, w4, arch.conv2_channels)
    da2 = avgpool2_backward(dp2, cache["a2"].shape)
    dz2 = da2 * (cache["z2"] > 0.0)
    dp1, grads["conv2_w"], grads["conv2_b"] = conv3x3_backward(
        cache["p1"], params["conv2_w"], dz2, cols=cache["cols2"]
    )
    da1 = avgpool2_backward(dp1, cache["z1"].shape)
    dz1 = da1 * (cache["z1"] > 0.0)
    dimages, grads["conv1_w"], grads["conv1_b"] = conv3x3_backward(
        cache["x"], params["conv1_w"], dz1, cols=cache["cols1"], want_dx=want_dx
    )
    return grads, dimages


def loss_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its logit gradient."""
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    bsz = logits.shape[0]
    rows = np.arange(bsz)
    # floor at the dtype's smallest normal: a confidently-wrong float32
    # softmax can underflow to exactly 0, and the scalar report should
    # stay finite (dlogits below is computed from probs and unaffected)
    tiny = np.finfo(probs.dtype).tiny
    loss = float(-np.log(np.maximum(probs[rows, labels], tiny)).mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= bsz
    return loss, dlogits


def input_gradient(
    params: dict, arch: PolicyArch, images: np.ndarray, onehots: np.ndarray, targets: np.ndarray
):
    """Loss and d(loss)/d(images) for cross-entropy toward target actions.

    This is the gradient the patch optimizer descends: lowering it makes
    the network prefer the target action on these inputs.
    """
    logits, cache = forward(params, arch, images, onehots, want_cache=True)
    loss, dlogits = loss_ce(logits, np.asarray(targets))
    _, dimages = backward(params, arch, cache, dlogits)
    return loss, dimages


def sgd_step(params: dict, grads: dict, lr: float) -> None:
    for name in params:
        params[name] -= lr * grads[name]


# ---------------------------------------------------------------------------
# Convenience wrapper + training loop
# ---------------------------------------------------------------------------


class PolicyNet:
    """Parameters plus arch, with single-sample helpers used by the env."""

    def __init__(self, arch: PolicyArch, params: dict):
        self.arch = arch
        self.params = params

    @classmethod
    def init(cls, arch: PolicyArch, rng: SeededRng) -> "PolicyNet":
        return cls(arch, init_params(arch, rng))

    def logits_batch(self, images: np.ndarray, instr_idx: np.ndarray) -> np.ndarray:
        dtype = self.params["conv1_w"].dtype
        onehots = one_hot(instr_idx, self.arch.num_instructions, dtype=dtype)
        return forward(self.params, self.arch, np.asarray(images, dtype=dtype), onehots)

    def action(self, image: np.ndarray, instr_idx: int) -> int:
        """Greedy action for one observation; ties break to the lowest
        action index (np.argmax semantics)."""
        logits = self.logits_batch(image[None], np.asarray([instr_idx]))
        return int(np.argmax(logits[0]))

    def save(self, path) -> None:
        save_checkpoint(self, path)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.arch, {k: v.copy() for k, v in self.params.items()})


def predict_batch(net: PolicyNet, images: np.ndarray, instrs: np.ndarray, chunk=256):
    """Greedy actions over a dataset, evaluated in chunks to bound memory."""
    out = np.empty(len(instrs), dtype=np.int64)
    for start in range(0, len(instrs), chunk):
        sl = slice(start, start + chunk)
        out[sl] = np.argmax(net.logits_batch(images[sl], instrs[sl]), axis=1)
    return out


def accuracy(net: PolicyNet, images: np.ndarray, instrs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict_batch(net, images, instrs) == np.asarray(labels)))


def train(
    net: PolicyNet,
    images: np.ndarray,
    instrs: np.ndarray,
    labels: np.ndarray,
    *,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SeededRng,
    log=None,
) -> list[tuple[int, float, float]]:
    """Plain minibatch SGD on cross-entropy.

    Shuffles with rng each epoch, so the whole trajectory is a function of
    (initial params, data, hyperparameters, seed).  Returns per-epoch
    (epoch, mean loss, accuracy); the accuracy is accumulated from the
    training-step logits (pre-update predictions), which costs nothing —
    call accuracy() afterwards for a fresh full pass.
    """
    n = len(labels)
    labels = np.asarray(labels)
    dtype = net.params["conv1_w"].dtype
    images = np.ascontiguousarray(images, dtype=dtype)
    onehots = one_hot(instrs, net.arch.num_instructions, dtype=dtype)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        hits = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits, cache = forward(
                net.params, net.arch, images[idx], onehots[idx], want_cache=True
            )
            loss, dlogits = loss_ce(logits, labels[idx])
            grads, _ = backward(net.params, net.arch, cache, dlogits, want_dx=False)
            sgd_step(net.params, grads, lr)
            total += loss * len(idx)
            hits += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
        acc = hits / n
        history.append((epoch, total / n, acc))
        if log is not None:
            log(f"epoch {epoch:3d}  loss {total / n:.4f}  acc {acc:.4f}")
    return history


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version/K/A header, then float32 parameters
# ---------------------------------------------------------------------------


def save_checkpoint(net: PolicyNet, path) -> None:
    """8-byte magic, three u32 (version, instruction count, action count),
    then every parameter block in PARAM_ORDER as little-endian float32."""
    header = NET_MAGIC + struct.pack(
        "<III", net.arch.version, net.arch.num_instructions, net.arch.num_actions
    )
    body = b"".join(net.params[name].astype("<f4").tobytes() for name in PARAM_ORDER)
    write_bytes_atomic(path, header + body)


def load_checkpoint(path) -> PolicyNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:8] != NET_MAGIC:
        raise ValueError(f"not a policy checkpoint (expected magic {NET_MAGIC.decode()}): {path}")
    version, k, a = struct.unpack("<III", data[8:20])
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}: {path}")
    arch = PolicyArch(num_instructions=k, num_actions=a)
    shapes = param_shapes(arch)
    total = sum(int(np.prod(s)) for s in shapes.values())
    body = data[20:]
    if len(body) != total * 4:
        raise ValueError(f"checkpoint payload length {len(body)} != expected {total * 4}: {path}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32)
    params = {}
    pos = 0
    for name in PARAM_ORDER:
        size = int(np.prod(shapes[name]))
        params[name] = flat[pos : pos + size].reshape(shapes[name]).copy()
        pos += size
    return PolicyNet(arch, params)
