"""Batching, loss, and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ignn
from .agnn import SubgraphState, run_agnn
from .attention import AttentionError, AttentionVector
from .autodiff import Tape, Tensor
from .config import Config
from .graph import KnowledgeGraph, TripleSet, mask_for_batch, triples_with_inverse
from .optim import AdamState, adam_step, clip_grad_norm
from .params import ModelParams

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)

    def append(self, **entry) -> None:
        self.entries.append(entry)

    @property
    def losses(self) -> list[float]:
        return [e["loss"] for e in self.entries]

    def epoch_means(self) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for e in self.entries:
            out.setdefault(e["epoch"], []).append(e["loss"])
        return {k: float(np.mean(v)) for k, v in out.items()}

    def moving_average(self, window: int = 20) -> np.ndarray:
        x = np.asarray(self.losses, dtype=np.float64)
        if len(x) == 0:
            return x
        w = min(window, len(x))
        return np.convolve(x, np.ones(w) / w, mode="valid")

    @staticmethod
    def format(e: dict) -> str:
        return f"step={e['step']} loss={e['loss']:.6f} gnorm={e['gnorm']:.6f} ms={e['ms']}"


def training_queries(train: TripleSet | np.ndarray, g: KnowledgeGraph) -> np.ndarray:
    """Train triples as (head, rel, tail) queries, plus inverse queries when
    the graph carries inverse relations."""
    triples = train.triples if isinstance(train, TripleSet) else np.asarray(train)
    if g.add_inverse:
        return triples_with_inverse(triples, g.n_base_relations)
    return triples.copy()


def make_batches(queries: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    queries = np.asarray(queries)
    perm = rng.permutation(len(queries))
    return [queries[perm[i:i + batch_size]] for i in range(0, len(queries), batch_size)]


def loss_fn(pred: AttentionVector, tail: int, eps: float = 1e-20) -> Tensor:
    """-log of the predicted probability of ``tail`` (floored at eps)."""
    hit = np.flatnonzero(pred.nodes == tail)
    if hit.size == 0:
        return ad.constant(-math.log(eps), dtype=pred.scores.dtype)
    return ad.reshape(ad.neg_log_clamped(ad.gather(pred.scores, hit[:1]), eps), ())


def batch_loss(state: SubgraphState, tails, eps: float = 1e-20) -> tuple[Tensor, int]:
    """Mean loss over the batch; also returns how many tails were reached."""
    tails = np.asarray(tails, dtype=np.int64)
    B = len(tails)
    rows = state.lookup(np.arange(B), tails)
    hit = rows >= 0
    dtype = state.attention.dtype
    miss_total = float((~hit).sum()) * -math.log(eps)
    if hit.any():
        per = ad.neg_log_clamped(ad.gather(state.attention, rows[hit]), eps)
        total = ad.add(ad.sum_all(per), miss_total)
    else:
        total = ad.constant(miss_total, dtype=dtype)
    return ad.scale(total, 1.0 / B), int(hit.sum())


def forward_batch(params: ModelParams, g: KnowledgeGraph, batch: np.ndarray, cfg: Config,
                  mask: np.ndarray | None, rng: np.random.Generator, record: bool = False):
    """IGNN once for the whole batch, then AGNN per query."""
    full = ignn.run_ignn(g, params, cfg.n_steps_in_IGNN, cfg.max_sampling_per_step, rng, mask,
                         cfg.leaky_slope)
    return run_agnn(g, full.states, params, batch[:, 0], batch[:, 1], cfg.horizons, mask, rng,
                    cfg.leaky_slope, record)


def train_step(params: ModelParams, g: KnowledgeGraph, batch: np.ndarray, cfg: Config,
               opt: AdamState, rng: np.random.Generator) -> dict:
    t0 = time.perf_counter()
    mask = mask_for_batch(g, batch, cfg.mask_mode)
    with Tape() as tape:
        try:
            state = forward_batch(params, g, batch, cfg, mask, rng)
        except AttentionError as exc:
            raise NumericError(f"attention broke down at optimizer step {opt.step + 1}: {exc}") from exc
        loss, n_hit = batch_loss(state, batch[:, 2], cfg.loss_eps)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at optimizer step {opt.step + 1}")
        grads = tape.backward(loss, params.tensors)
    grads, gnorm = clip_grad_norm(grads, cfg.grad_clipnorm)
    if not math.isfinite(gnorm):
        raise NumericError(f"non-finite gradient norm at optimizer step {opt.step + 1}")
    adam_step(params.arrays(), grads, opt, cfg.learning_rate)
    ms = int(round((time.perf_counter() - t0) * 1000))
    return {"loss": value, "gnorm": gnorm, "ms": ms, "hits": n_hit, "size": len(batch)}


def train_epoch(params: ModelParams, g: KnowledgeGraph, queries: np.ndarray, cfg: Config,
                rng: np.random.Generator, opt: AdamState | None = None, log_: TrainLog | None = None,
                epoch: int = 0, on_step: Callable[[dict], None] | None = None,
                max_steps: int | None = None) -> TrainLog:
    opt = opt if opt is not None else AdamState()
    log_ = log_ if log_ is not None else TrainLog()
    for batch in make_batches(queries, cfg.batch_size, rng):
        if max_steps is not None and opt.step >= max_steps:
            break
        entry = train_step(params, g, batch, cfg, opt, rng)
        entry["step"] = opt.step
        entry["epoch"] = epoch
        log_.append(**entry)
        if on_step is not None:
            on_step(entry)
    return log_


def train(params: ModelParams, g: KnowledgeGraph, queries: np.ndarray, cfg: Config,
          rng: np.random.Generator | None = None, on_step: Callable[[dict], None] | None = None,
          max_steps: int | None = None, n_epochs: int | None = None) -> tuple[TrainLog, AdamState]:
    """Run ``cfg.n_epochs`` epochs (or stop after ``max_steps`` optimizer steps)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    opt = AdamState()
    tlog = TrainLog()
    epochs = n_epochs if n_epochs is not None else cfg.n_epochs
    if max_steps is not None:
        epochs = max(epochs, math.ceil(max_steps / max(1, math.ceil(len(queries) / cfg.batch_size))))
    for epoch in range(epochs):
        train_epoch(params, g, queries, cfg, rng, opt, tlog, epoch, on_step, max_steps)
        if max_steps is not None and opt.step >= max_steps:
            break
    return tlog, opt
