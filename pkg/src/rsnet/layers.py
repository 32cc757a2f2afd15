"""RS-Net building blocks on top of :mod:`rsnet.autodiff`.

Feature tensors follow the sample-major batch layout ``(B*N, F)``. Graph
propagation matrices (``A_check^k``) are passed in as tensors so that the
adjacency modulation ``Q`` owned by the model receives gradients.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


class Module:
    """Parameter bookkeeping: ``params`` holds own tensors, ``children`` submodules."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.children: dict[str, Module] = {}

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self.children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, child in self.children.items():
            out.update(child.buffers(f"{prefix}{name}."))
        return out

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.named_parameters().values()]))


def _diag_mask(n: int) -> tuple[Tensor, Tensor]:
    eye = np.eye(n)
    return Tensor(eye), Tensor(1.0 - eye)


class RSNetConv(Module):
    """Higher-order graph convolution with weight/adjacency modulation and skip input.

    For each hop ``k`` the layer computes ``A^k ((H W_k) * M_k) + X0 Wt_k`` and
    concatenates the ``K`` results column-wise, so the output width is
    ``K * hop_width``. No nonlinearity is applied here.

    With ``decouple_self=True`` the diagonal of ``A^k`` uses its own weight
    ``Ws_k`` while off-diagonal entries use ``W_k``; both share ``M_k``.
    """

    def __init__(self, in_dim: int, hop_width: int, num_joints: int, K: int, skip_dim: int,
                 rng: np.random.Generator, use_skip: bool = True, decouple_self: bool = False):
        super().__init__()
        if hop_width < 1 or K < 1:
            raise ValueError(f"need hop_width >= 1 and K >= 1 (got {hop_width}, {K})")
        self.in_dim, self.hop_width, self.K = in_dim, hop_width, K
        self.num_joints, self.skip_dim = num_joints, skip_dim
        self.use_skip, self.decouple_self = use_skip, decouple_self
        for k in range(1, K + 1):
            self.params[f"W{k}"] = xavier(rng, in_dim, hop_width)
            self.params[f"M{k}"] = Tensor(np.ones((num_joints, hop_width)), requires_grad=True)
            if use_skip:
                self.params[f"Wt{k}"] = xavier(rng, skip_dim, hop_width)
            if decouple_self:
                self.params[f"Ws{k}"] = xavier(rng, in_dim, hop_width)

    @property
    def out_dim(self) -> int:
        return self.K * self.hop_width

    def __call__(self, H: Tensor, X0: Tensor | None, powers: Sequence[Tensor]) -> Tensor:
        if H.shape[1] != self.in_dim or H.shape[0] % self.num_joints:
            raise ad.ShapeError("rsnet_conv", H.shape, (f"*x{self.num_joints}", self.in_dim))
        if len(powers) < self.K:
            raise ValueError(f"need {self.K} adjacency powers, got {len(powers)}")
        p, K, hw = self.params, self.K, self.hop_width
        batch = H.shape[0] // self.num_joints

        def cat(name):
            ts = [p[f"{name}{k}"] for k in range(1, K + 1)]
            return ts[0] if K == 1 else ad.concat_cols(ts)

        # all hops share one product with the column-stacked weights
        M = cat("M")
        M = ad.tile_rows(M, batch) if batch > 1 else M
        Z = ad.mul(H @ cat("W"), M)
        Zs = ad.mul(H @ cat("Ws"), M) if self.decouple_self else None
        if self.decouple_self:
            eye, off = _diag_mask(self.num_joints)
        hops = []
        for k in range(K):
            Zk = Z if K == 1 else ad.slice_cols(Z, k * hw, (k + 1) * hw)
            A_k = powers[k]
            if self.decouple_self:
                Zsk = Zs if K == 1 else ad.slice_cols(Zs, k * hw, (k + 1) * hw)
                hops.append(ad.graph_matmul(ad.mul(A_k, off), Zk)
                            + ad.graph_matmul(ad.mul(A_k, eye), Zsk))
            else:
                hops.append(ad.graph_matmul(A_k, Zk))
        out = hops[0] if K == 1 else ad.concat_cols(hops)
        if self.use_skip:
            out = out + X0 @ cat("Wt")
        return out


def rsnet_conv(H, X0, layer: RSNetConv, powers, sigma=None) -> Tensor:
    """Functional form; ``sigma`` wraps the concatenation when given."""
    out = layer(ad.as_tensor(H), None if X0 is None else ad.as_tensor(X0),
                [ad.as_tensor(P) for P in powers])
    return sigma(out) if sigma is not None else out


def rsnet_conv_loops(H: np.ndarray, X0: np.ndarray | None, layer: RSNetConv,
                     powers: Sequence[np.ndarray]) -> np.ndarray:
    """Per-node loop evaluation of one sample, written straight from the row-wise rule.

    ``h_i = sum_j a_ij h_j (W (*) m_j) + x_i Wt`` for every hop, then concatenation.
    Only used as an independent oracle for the matrix form.
    """
    p = {k: v.data for k, v in layer.params.items()}
    n = layer.num_joints
    blocks = []
    for k in range(1, layer.K + 1):
        A = np.asarray(powers[k - 1])
        out = np.zeros((n, layer.hop_width))
        for i in range(n):
            acc = np.zeros(layer.hop_width)
            for j in range(n):
                Wj = p[f"W{k}"] * p[f"M{k}"][j][None, :]
                if layer.decouple_self and i == j:
                    Wj = p[f"Ws{k}"] * p[f"M{k}"][j][None, :]
                acc += A[i, j] * (H[j] @ Wj)
            if layer.use_skip:
                acc += X0[i] @ p[f"Wt{k}"]
            out[i] = acc
        blocks.append(out)
    return np.concatenate(blocks, axis=1)


class UnsharedConv(Module):
    """Pre-aggregation weight unsharing: a separate ``W_j`` for each neighbour ``j``.

    ``h_i = sum_j a_ij h_j W_j + x_i Wt``. Kept only as an ablation baseline.
    """

    def __init__(self, in_dim: int, out_dim: int, num_joints: int, skip_dim: int,
                 rng: np.random.Generator, weights: Sequence[np.ndarray] | None = None):
        super().__init__()
        self.num_joints, self.in_dim, self.out_dim = num_joints, in_dim, out_dim
        if weights is not None:
            if len(weights) != num_joints:
                raise ValueError(f"expected {num_joints} per-node weights, got {len(weights)}")
            for j, w in enumerate(weights):
                self.params[f"W{j}"] = Tensor(w, requires_grad=True)
        else:
            for j in range(num_joints):
                self.params[f"W{j}"] = xavier(rng, in_dim, out_dim)
        self.params["Wt"] = xavier(rng, skip_dim, out_dim)

    def __call__(self, H: Tensor, X0: Tensor, A_hat) -> Tensor:
        A = np.asarray(A_hat.data if isinstance(A_hat, Tensor) else A_hat)
        out = X0 @ self.params["Wt"]
        for j in range(self.num_joints):
            col = np.zeros_like(A)
            col[:, j] = A[:, j]
            if not col.any():
                continue
            out = out + ad.graph_matmul(Tensor(col), H @ self.params[f"W{j}"])
        return out


def rsnet_conv_unshared(H, X0, weights: Sequence[np.ndarray], W_skip: np.ndarray,
                        A_hat: np.ndarray) -> Tensor:
    n = len(A_hat)
    if len(weights) != n:
        raise ValueError(f"expected {n} per-node weight matrices, got {len(weights)}")
    w0 = np.asarray(weights[0])
    layer = UnsharedConv(w0.shape[0], w0.shape[1], n, np.asarray(W_skip).shape[0],
                         np.random.default_rng(0), weights=weights)
    layer.params["Wt"] = Tensor(W_skip, requires_grad=True)
    return layer(ad.as_tensor(H), ad.as_tensor(X0), A_hat)


def weight_modulated_equivalence_check(layer: RSNetConv, A: np.ndarray,
                                       rng: np.random.Generator | None = None,
                                       tol: float = 1e-12) -> dict:
    """Compare the per-node modulation rule with the matrix rule on random inputs."""
    rng = rng or np.random.default_rng(0)
    n = layer.num_joints
    H = rng.standard_normal((n, layer.in_dim))
    X0 = rng.standard_normal((n, layer.skip_dim))
    powers = [A]
    for _ in range(layer.K - 1):
        powers.append(A @ powers[-1])
    with ad.no_grad():
        matrix = layer(Tensor(H), Tensor(X0), [Tensor(P) for P in powers]).data
    loops = rsnet_conv_loops(H, X0, layer, powers)
    dev = float(np.max(np.abs(matrix - loops)))
    scale = max(1.0, float(np.max(np.abs(loops))))
    return {"max_deviation": dev, "passed": dev <= tol * scale, "tolerance": tol * scale}


class NonLocal(Module):
    """Embedded-Gaussian non-local layer over the joints of each sample.

    ``Z = H + softmax((H theta)(H phi)^T / sqrt(Fb)) (H g) Wz`` with ``Wz`` zero at
    init, so a fresh layer is the identity.
    """

    def __init__(self, width: int, num_joints: int, rng: np.random.Generator,
                 bottleneck: int | None = None):
        super().__init__()
        self.num_joints = num_joints
        self.bottleneck = bottleneck or -(-width // 2)
        fb = self.bottleneck
        self.params["theta"] = xavier(rng, width, fb)
        self.params["phi"] = xavier(rng, width, fb)
        self.params["g"] = xavier(rng, width, fb)
        self.params["Wz"] = Tensor(np.zeros((fb, width)), requires_grad=True)

    def attention(self, H: Tensor) -> Tensor:
        p, n = self.params, self.num_joints
        logits = ad.block_matmul_nt(H @ p["theta"], H @ p["phi"], n)
        return ad.softmax_rows(ad.scale(logits, 1.0 / math.sqrt(self.bottleneck)))

    def __call__(self, H: Tensor) -> Tensor:
        att = self.attention(H)
        y = ad.block_matmul(att, H @ self.params["g"], self.num_joints)
        return H + y @ self.params["Wz"]


class Norm(Module):
    """LayerNorm, batch-statistics BatchNorm, or identity."""

    def __init__(self, kind: str, width: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        if kind not in ("layernorm", "batchnorm", "none"):
            raise ValueError(f"unknown norm {kind!r}")
        self.kind, self.eps, self.momentum = kind, eps, momentum
        if kind != "none":
            self.params["gain"] = Tensor(np.ones((1, width)), requires_grad=True)
            self.params["bias"] = Tensor(np.zeros((1, width)), requires_grad=True)
        if kind == "batchnorm":
            self.running_mean = np.zeros((1, width))
            self.running_var = np.ones((1, width))

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        if self.kind != "batchnorm":
            return {}
        return {prefix + "running_mean": self.running_mean, prefix + "running_var": self.running_var}

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if self.kind == "none":
            return x
        g, b = self.params["gain"], self.params["bias"]
        if self.kind == "layernorm":
            return ad.layer_norm(x, g, b, self.eps)
        out, mu, var = ad.batch_norm(x, g, b, self.eps, training,
                                     (self.running_mean, self.running_var))
        if training:
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * var
        return out


ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu}


class ResidualBlock(Module):
    """Two RS-Net convolutions wrapped in an additive residual.

    ``norm_between`` layout: ``H + act(conv2(norm(conv1(H))))``.
    ``act_between`` layout: ``H + act(conv2(act(conv1(H))))`` (activation after every conv).
    Dropout follows each convolution stage when training.
    """

    def __init__(self, width: int, hop_width: int, num_joints: int, K: int, skip_dim: int,
                 rng: np.random.Generator, layout: str = "norm_between", norm: str = "layernorm",
                 activation: str = "gelu", use_skip: bool = True, decouple_self: bool = False,
                 dropout: float = 0.0):
        super().__init__()
        if layout not in ("norm_between", "act_between"):
            raise ValueError(f"unknown block layout {layout!r}")
        if K * hop_width != width:
            raise ValueError(f"residual block needs K*hop_width == width ({K}*{hop_width} != {width})")
        self.layout, self.dropout = layout, dropout
        self.act = ACTIVATIONS[activation]
        kw = dict(use_skip=use_skip, decouple_self=decouple_self)
        self.conv1 = RSNetConv(width, hop_width, num_joints, K, skip_dim, rng, **kw)
        self.conv2 = RSNetConv(width, hop_width, num_joints, K, skip_dim, rng, **kw)
        self.norm = Norm(norm if layout == "norm_between" else "none", width)
        self.children.update(conv1=self.conv1, conv2=self.conv2, norm=self.norm)

    def __call__(self, H: Tensor, X0: Tensor | None, powers, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        y = self.conv1(H, X0, powers)
        y = self.norm(y, training) if self.layout == "norm_between" else self.act(y)
        y = ad.dropout(y, self.dropout, training, rng)
        y = self.act(self.conv2(y, X0, powers))
        y = ad.dropout(y, self.dropout, training, rng)
        if y.shape != H.shape:
            raise ad.ShapeError("residual_block", H.shape, y.shape)
        return H + y


def residual_block_forward(H, X0, block: ResidualBlock, powers, training=False, rng=None) -> Tensor:
    return block(ad.as_tensor(H), None if X0 is None else ad.as_tensor(X0),
                 [ad.as_tensor(P) for P in powers], training, rng)
