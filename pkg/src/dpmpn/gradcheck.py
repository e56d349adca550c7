"""Central finite-difference checks of tape gradients (run in float64)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, record_branches
from .config import Config
from .graph import build_graph, mask_for_batch
from .params import ModelParams
from .synthetic import random_kg
from .training import batch_loss, forward_batch

# entries where both gradients are below this are treated as exact zeros
ZERO_FLOOR = 1e-9


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = ZERO_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n) / np.maximum(scale, floor)
    return np.where(scale < floor, 0.0, err)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-3,
                     indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (modified in place and restored)."""
    grad, _ = numeric_gradient_smooth(lambda: (f(), None), x, h, indices)
    return grad


def numeric_gradient_smooth(f: Callable[[], tuple[float, object]], x: np.ndarray, h: float,
                            indices=None, base_signature=None) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`numeric_gradient` for an ``f`` that also returns a branch
    signature.  Entries whose +h or -h evaluation lands on a different branch
    than ``base_signature`` are flagged in the returned boolean array."""
    grad = np.zeros_like(x, dtype=np.float64)
    crossed = np.zeros(x.shape, dtype=bool)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    cflat = crossed.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        up, sig_up = f()
        flat[i] = old - h
        down, sig_down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
        if base_signature is not None:
            cflat[i] = sig_up != base_signature or sig_down != base_signature
    return grad, crossed


@dataclass
class GradcheckReport:
    max_rel_error: float
    n_checked: int
    worst: str
    per_param: dict[str, float]
    n_kink_skipped: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol and self.n_checked > 0

    def line(self, tol: float = 1e-4) -> str:
        status = "PASS" if self.passed(tol) else "FAIL"
        return (f"{status} gradcheck max_rel_error={self.max_rel_error:.3e} "
                f"entries={self.n_checked} kink_skipped={self.n_kink_skipped} worst={self.worst}")


def check_tensors(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor], h: float = 1e-3,
                  max_entries: int | None = None, rng: np.random.Generator | None = None
                  ) -> GradcheckReport:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    Finite differences are meaningless across a kink, so entries whose
    perturbation switches any activation side or top-k choice are skipped
    and counted instead of compared.
    """
    with Tape() as tape, record_branches() as base_sig:
        loss = loss_fn()
        grads = tape.backward(loss, dict(tensors))
    base_sig = list(base_sig)

    def value():
        with record_branches() as sig:
            v = float(loss_fn().data)
        return v, list(sig)

    worst, worst_name, total, skipped = 0.0, "", 0, 0
    per = {}
    for name, t in tensors.items():
        idx = None
        if max_entries is not None and t.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(t.data.size, size=max_entries, replace=False)
        num, crossed = numeric_gradient_smooth(value, t.data, h, idx, base_sig)
        ana = np.asarray(grads[name], dtype=np.float64)
        if idx is not None:
            num, ana, crossed = num.reshape(-1)[idx], ana.reshape(-1)[idx], crossed.reshape(-1)[idx]
        keep = ~crossed.reshape(-1)
        skipped += int((~keep).sum())
        err = float(relative_errors(ana.reshape(-1)[keep], num.reshape(-1)[keep]).max(initial=0.0))
        per[name] = err
        total += int(keep.sum())
        if err >= worst:
            worst, worst_name = err, name
    return GradcheckReport(worst, total, worst_name, per, skipped)


def model_gradcheck(seed: int = 0, n_entities: int = 10, n_dims: int = 8, n_dims_att: int = 4,
                    n_steps: int = 2, h: float = 1e-3, init_scale: float = 0.05) -> GradcheckReport:
    """Gradient of one query's loss through IGNN, attention and AGNN on a
    random 10-node KG, every parameter entry checked in float64."""
    rng = np.random.default_rng(seed)
    train = random_kg(n_entities, 2, 2 * n_entities, seed=seed)
    g = build_graph(train)
    cfg = Config(batch_size=1, n_dims=n_dims, n_dims_att=n_dims_att, max_attending_from_per_step=3,
                 max_sampling_per_node=4, max_attending_to_per_step=4, n_steps_in_IGNN=2,
                 n_steps_in_AGNN=n_steps, mask_mode="none", seed=seed)
    params = ModelParams.init(g.n_entities, g.n_relations, n_dims, n_dims_att, rng,
                              init_scale=init_scale, dtype=np.float64)
    # pick a query whose tail the subgraph reaches, otherwise the loss is flat
    batch = None
    for h_, r_, t_ in train.triples.tolist():
        q = np.array([[h_, r_, t_]])
        state = forward_batch(params, g, q, cfg, None, np.random.default_rng(seed + 1))
        if state.lookup([0], [t_])[0] >= 0:
            batch = q
            break
    if batch is None:
        raise RuntimeError("no reachable query in the random KG")
    mask = mask_for_batch(g, batch, "none")

    def loss_fn() -> Tensor:
        state = forward_batch(params, g, batch, cfg, mask, np.random.default_rng(seed + 1))
        return batch_loss(state, batch[:, 2])[0]

    return check_tensors(loss_fn, params.tensors, h)
