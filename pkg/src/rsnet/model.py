"""Full RS-Net lifting network: 2-D joints in, 3-D joints out."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import SkeletonTopology, build_adjacency, init_modulation, load_topology, normalize_adjacency
from .layers import Module, NonLocal, ResidualBlock, RSNetConv, xavier

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_joints: int = 17
    K: int = 3
    filter_size: int = 64
    num_blocks: int = 4
    dropout_rate: float = 0.2
    use_nonlocal: bool = True
    use_refinement: bool = True
    block_layout: str = "norm_between"
    block_norm: str = "layernorm"
    block_activation: str = "gelu"
    use_skip: bool = True
    decouple_self: bool = False
    refine_hidden: int = 64
    q_init: float = 0.01
    # 3-D outputs are produced in units of ``output_scale_mm`` millimetres (metres by default)
    output_scale_mm: float = 1000.0
    skeleton: str | dict = "h36m17"

    @property
    def hop_width(self) -> int:
        hw = self.filter_size // self.K
        if hw < 1:
            raise ValueError(f"filter_size {self.filter_size} too small for K={self.K}")
        return hw

    @property
    def width(self) -> int:
        return self.K * self.hop_width

    @property
    def num_conv_layers(self) -> int:
        return 2 + 2 * self.num_blocks

    def topology(self) -> SkeletonTopology:
        if isinstance(self.skeleton, dict):
            return SkeletonTopology.from_dict(self.skeleton)
        return load_topology(self.skeleton)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class RSNet(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = c = config
        topo = c.topology()
        if topo.num_joints != c.num_joints:
            raise ValueError(f"skeleton has {topo.num_joints} joints, config says {c.num_joints}")
        self.topology = topo
        n, K, hw, F = c.num_joints, c.K, c.hop_width, c.width
        rng = np.random.default_rng(seed)
        A_hat, _ = normalize_adjacency(build_adjacency(topo))
        self.A_hat = Tensor(A_hat)
        self.params["Q"] = Tensor(init_modulation(n, rng, c.q_init), requires_grad=True)

        self.embed = RSNetConv(2, hw, n, K, 2, rng, use_skip=c.use_skip,
                               decouple_self=c.decouple_self)
        self.children["embed"] = self.embed
        self.blocks = []
        for b in range(c.num_blocks):
            blk = ResidualBlock(F, hw, n, K, F, rng, layout=c.block_layout, norm=c.block_norm,
                                activation=c.block_activation, use_skip=c.use_skip,
                                decouple_self=c.decouple_self, dropout=c.dropout_rate)
            self.blocks.append(blk)
            self.children[f"block{b}"] = blk
        self.nonlocal_layer = NonLocal(F, n, rng) if c.use_nonlocal else None
        if self.nonlocal_layer is not None:
            self.children["nonlocal"] = self.nonlocal_layer
        self.head = RSNetConv(F, 3, n, K, F, rng, use_skip=c.use_skip,
                              decouple_self=c.decouple_self)
        self.children["head"] = self.head
        # hop outputs (3 columns each) are mixed down to x, y, z; zero so the net starts at 0
        self.params["head_proj"] = Tensor(np.zeros((3 * K, 3)), requires_grad=True)
        if c.use_refinement:
            d = 3 * n
            self.params["refine_w1"] = xavier(rng, d, c.refine_hidden)
            self.params["refine_b1"] = Tensor(np.zeros((1, c.refine_hidden)), requires_grad=True)
            self.params["refine_w2"] = Tensor(np.zeros((c.refine_hidden, d)), requires_grad=True)
            self.params["refine_b2"] = Tensor(np.zeros((1, d)), requires_grad=True)

    # ------------------------------------------------------------------ graph

    def modulated_adjacency(self) -> Tensor:
        Q = self.params["Q"]
        return self.A_hat + ad.scale(Q + Q.T, 0.5)

    def adjacency_powers(self) -> list[Tensor]:
        A = self.modulated_adjacency()
        powers = [A]
        for _ in range(self.config.K - 1):
            powers.append(A @ powers[-1])
        return powers

    # ---------------------------------------------------------------- forward

    def _as_input(self, X) -> Tensor:
        if isinstance(X, Tensor):
            t = X
        else:
            arr = np.asarray(X, dtype=np.float64)
            if arr.ndim == 2:
                arr = arr[None]
            if arr.ndim != 3 or arr.shape[2] != 2:
                raise ValueError(f"expected 2-D poses shaped (N, 2) or (B, N, 2), got {arr.shape}")
            t = Tensor(arr.reshape(-1, 2))
        n = self.config.num_joints
        if t.shape[1] != 2 or t.shape[0] % n:
            raise ValueError(f"input with {t.shape[0]} rows does not match a {n}-joint skeleton")
        return t

    def forward(self, X, training: bool = False, rng: np.random.Generator | None = None,
                trace: list | None = None) -> Tensor:
        """Predict 3-D joints in model units, returned as a ``(B*N, 3)`` tensor."""
        c = self.config
        X = self._as_input(X)
        n = c.num_joints
        batch = X.shape[0] // n

        def rec(name, t):
            if trace is not None:
                trace.append((name, t.shape))
            return t

        rec("input", X)
        powers = self.adjacency_powers()
        h = ad.gelu(self.embed(X, X, powers))
        h = rec("embed", ad.dropout(h, c.dropout_rate, training, rng))
        X0 = h if c.use_skip else None
        for b, blk in enumerate(self.blocks):
            h = rec(f"block{b}", blk(h, X0, powers, training, rng))
        if self.nonlocal_layer is not None:
            h = rec("nonlocal", self.nonlocal_layer(h))
        y = rec("head", self.head(h, X0, powers))
        y = rec("head_proj", y @ self.params["head_proj"])
        if c.use_refinement:
            y = rec("refine", self.refine(y, batch))
        return y

    __call__ = forward

    def refine(self, y: Tensor, batch: int) -> Tensor:
        """Residual correction from a two-layer MLP on the flattened pose."""
        p, n = self.params, self.config.num_joints
        flat = ad.reshape(y, batch, 3 * n)
        hid = ad.gelu(flat @ p["refine_w1"] + p["refine_b1"])
        corr = hid @ p["refine_w2"] + p["refine_b2"]
        return y + ad.reshape(corr, batch * n, 3)

    def predict(self, X) -> np.ndarray:
        """Evaluation-mode prediction in millimetres, shaped ``(B, N, 3)``."""
        with ad.no_grad():
            out = self.forward(X, training=False).data
        return out.reshape(-1, self.config.num_joints, 3) * self.config.output_scale_mm

    # ------------------------------------------------------------- persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.named_parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing, extra = set(own) - set(state), set(state) - set(own)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != own[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {own[k].shape}")
            own[k][...] = arr


def save_checkpoint(model: RSNet, path: str | Path, extra: dict | None = None) -> None:
    cfg = model.config.to_dict()
    if not isinstance(cfg["skeleton"], dict):
        cfg["skeleton"] = model.topology.to_dict()
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                    for k, v in model.state_dict().items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> RSNet:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    model = RSNet(ModelConfig.from_dict(doc["config"]))
    state = {}
    for k, t in doc["tensors"].items():
        arr = np.asarray(t["data"], dtype=np.float64)
        if arr.size != int(np.prod(t["shape"])):
            raise ValueError(f"tensor {k}: {arr.size} values for shape {t['shape']}")
        state[k] = arr.reshape(t["shape"])
    model.load_state_dict(state)
    return model
