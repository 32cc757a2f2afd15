"""Central finite-difference checks for the autodiff engine and the network layers."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """``max|a - b| / max(max|a|, max|b|, floor)``."""
    num = np.max(np.abs(a - b), initial=0.0)
    den = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(num / den)


def check(build: Callable[..., Tensor], inputs: Mapping[str, np.ndarray], seed: int = 0,
          h: float = 1e-5) -> dict[str, float]:
    """Compare backprop against finite differences for ``build(**tensors)``.

    Non-scalar outputs are reduced with a fixed random projection so every
    output entry contributes. Returns the relative error per input name.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    probe = build(**{k: Tensor(v) for k, v in arrays.items()})
    R = np.random.default_rng(seed + 7919).standard_normal(probe.shape)

    def scalar() -> float:
        out = build(**{k: Tensor(v) for k, v in arrays.items()})
        return float(np.sum(out.data * R))

    leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    out = build(**leaves)
    ad.sum(ad.mul(out, Tensor(R))).backward()
    return {k: relative_error(leaves[k].grad, numeric_grad(scalar, arrays[k], h)) for k in arrays}


def check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                 h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of a scalar ``loss_fn`` against named parameter tensors.

    ``loss_fn`` must rebuild its graph from the current parameter data on every call.
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {k: p.grad.copy() for k, p in params.items()}
    errors = {}
    with ad.no_grad():
        for k, p in params.items():
            num = numeric_grad(lambda: loss_fn().item(), p.data, h)
            errors[k] = relative_error(analytic[k], num)
    return errors


LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


def _randomize(module, rng, scale=0.7):
    for p in module.named_parameters().values():
        p.data[...] = scale * rng.standard_normal(p.data.shape)


def _primitive_cases(rng):
    n = 3
    r = rng.standard_normal
    return {
        "matmul": (lambda a, b: ad.matmul(a, b), dict(a=r((4, 3)), b=r((3, 5)))),
        "add": (lambda a, b: ad.add(a, b), dict(a=r((4, 3)), b=r((1, 3)))),
        "mul": (lambda a, b: ad.mul(a, b), dict(a=r((4, 3)), b=r((4, 3)))),
        "concat_slice": (lambda a, b: ad.slice_cols(ad.concat_cols([a, b]), 1, 5),
                         dict(a=r((4, 3)), b=r((4, 2)))),
        "scale_sum_mean": (lambda a: ad.scale(ad.sum(a), 0.5) + ad.mean(a), dict(a=r((4, 3)))),
        "abs_square": (lambda a: ad.abs(a) + ad.square(a), dict(a=r((4, 3)))),
        "transpose": (lambda a: ad.transpose(a), dict(a=r((4, 3)))),
        "gelu": (lambda a: ad.gelu(a), dict(a=r((4, 3)))),
        "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b), dict(x=r((4, 8)), g=r((1, 8)), b=r((1, 8)))),
        "softmax_rows": (lambda a: ad.softmax_rows(a), dict(a=r((4, 5)))),
        "graph_matmul": (lambda A, H: ad.graph_matmul(A, H), dict(A=r((n, n)), H=r((2 * n, 4)))),
        "block_matmul": (lambda P, V: ad.block_matmul(P, V, n), dict(P=r((2 * n, n)), V=r((2 * n, 4)))),
    }


def run_suite(num_seeds: int = 5) -> list[dict]:
    """Finite-difference check of every primitive, every layer and a toy end-to-end model.

    Returns one row per check with the worst relative error over ``num_seeds`` seeds.
    """
    from .graph import build_adjacency, hop_powers, normalize_adjacency, path_graph
    from .layers import NonLocal, ResidualBlock, RSNetConv, UnsharedConv
    from .model import ModelConfig, RSNet
    from .training import elastic_loss

    A_hat = normalize_adjacency(build_adjacency(path_graph(3)))[0]
    worst: dict[str, float] = {}

    def record(name, errors):
        worst[name] = max(worst.get(name, 0.0), max(errors.values()))

    for seed in range(num_seeds):
        rng = np.random.default_rng(seed)
        for name, (build, inputs) in _primitive_cases(rng).items():
            record(name, check(build, inputs, seed=seed))

        powers = [Tensor(P) for P in hop_powers(A_hat, 3)]
        H = Tensor(rng.standard_normal((6, 6)), requires_grad=True)
        X0 = Tensor(rng.standard_normal((6, 2)))
        R6 = Tensor(rng.standard_normal((6, 6)))
        for decouple in (False, True):
            conv = RSNetConv(6, 2, 3, 3, 2, rng, decouple_self=decouple)
            _randomize(conv, rng)
            name = "rsnet_conv_decoupled" if decouple else "rsnet_conv"
            record(name, check_params(lambda: ad.sum(ad.mul(conv(H, X0, powers), R6)),
                                      dict(conv.named_parameters(), H=H)))
        un = UnsharedConv(6, 2, 3, 2, rng)
        R2 = Tensor(rng.standard_normal((6, 2)))
        record("rsnet_conv_unshared", check_params(lambda: ad.sum(ad.mul(un(H, X0, A_hat), R2)),
                                                   dict(un.named_parameters(), H=H)))
        nl = NonLocal(6, 3, rng)
        _randomize(nl, rng)
        record("nonlocal", check_params(lambda: ad.sum(ad.mul(nl(H), R6)), dict(nl.named_parameters(), H=H)))
        for layout, norm, act in (("norm_between", "layernorm", "gelu"), ("norm_between", "batchnorm", "relu"),
                                  ("act_between", "layernorm", "gelu")):
            blk = ResidualBlock(6, 2, 3, 3, 2, rng, layout=layout, norm=norm, activation=act)
            _randomize(blk, rng)
            record(f"residual_block_{layout}_{norm}_{act}",
                   check_params(lambda: ad.sum(ad.mul(blk(H, X0, powers, training=True), R6)),
                                dict(blk.named_parameters(), H=H)))

    for seed in range(num_seeds):
        rng = np.random.default_rng(seed)
        skel = {"joints": list("abcde"), "edges": [[0, 1], [1, 2], [1, 3], [3, 4]], "root": 0,
                "flip_pairs": [[2, 3]]}
        model = RSNet(ModelConfig(num_joints=5, filter_size=8, num_blocks=2, refine_hidden=4,
                                  skeleton=skel), seed=seed)
        _randomize(model, rng, 0.5)
        X = rng.standard_normal((2, 5, 2))
        Y = Tensor(rng.standard_normal((10, 3)))
        record("model_end_to_end", check_params(
            lambda: elastic_loss(Y, model.forward(X, training=True, rng=np.random.default_rng(seed))),
            model.named_parameters()))

    return [{"name": k, "max_rel_error": v, "tolerance": MODEL_TOL if k == "model_end_to_end" else LAYER_TOL,
             "passed": v < (MODEL_TOL if k == "model_end_to_end" else LAYER_TOL)} for k, v in worst.items()]
