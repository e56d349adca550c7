"""Trainable parameter container and the small MLP building blocks."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class ModelParams:
    """Every trainable array, keyed by a dotted name.

    Layout (D = n_dims, A = n_dims_att):

    * ``ent_emb`` (n_entities x D), ``rel_emb`` (n_relations x D)
    * ``ignn.msg`` / ``ignn.upd``: two-layer MLPs, 3D -> D -> D
    * ``agnn.msg``: 5D -> D -> D over [H_src, e_r, q_head, q_rel, H_dst]
    * ``agnn.upd``: 5D -> D -> D over [H, M, H~, q_head, q_rel]
    * ``agnn.W``: D x D projection of IGNN states into AGNN
    * ``att.{src1,dst1,src2,dst2}``: one-layer MLPs 4D -> A; ``att.W1``, ``att.W2``: A x A
    """

    def __init__(self, n_entities: int, n_relations: int, n_dims: int, n_dims_att: int,
                 tensors: "OrderedDict[str, Tensor] | None" = None):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.n_dims = n_dims
        self.n_dims_att = n_dims_att
        self.tensors: OrderedDict[str, Tensor] = tensors if tensors is not None else OrderedDict()

    @classmethod
    def init(cls, n_entities: int, n_relations: int, n_dims: int, n_dims_att: int,
             rng: np.random.Generator, init_scale: float = 0.05, dtype=np.float32) -> "ModelParams":
        D, A = n_dims, n_dims_att
        arrays: list[tuple[str, np.ndarray]] = [
            ("ent_emb", rng.uniform(-init_scale, init_scale, size=(n_entities, D))),
            ("rel_emb", rng.uniform(-init_scale, init_scale, size=(n_relations, D))),
        ]

        def mlp2(prefix, fan_in):
            arrays.extend([
                (f"{prefix}.w1", _glorot(rng, fan_in, D)),
                (f"{prefix}.b1", np.zeros(D)),
                (f"{prefix}.w2", _glorot(rng, D, D)),
                (f"{prefix}.b2", np.zeros(D)),
            ])

        mlp2("ignn.msg", 3 * D)
        mlp2("ignn.upd", 3 * D)
        mlp2("agnn.msg", 5 * D)
        mlp2("agnn.upd", 5 * D)
        arrays.append(("agnn.W", _glorot(rng, D, D)))
        for side in ("src1", "dst1", "src2", "dst2"):
            arrays.append((f"att.{side}.w", _glorot(rng, 4 * D, A)))
            arrays.append((f"att.{side}.b", np.zeros(A)))
        arrays.append(("att.W1", _glorot(rng, A, A)))
        arrays.append(("att.W2", _glorot(rng, A, A)))
        tensors = OrderedDict(
            (name, Tensor(np.asarray(a, dtype=dtype), requires_grad=True, name=name)) for name, a in arrays
        )
        return cls(n_entities, n_relations, n_dims, n_dims_att, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors["ent_emb"].dtype

    def astype(self, dtype) -> "ModelParams":
        tensors = OrderedDict(
            (k, Tensor(v.data.astype(dtype), requires_grad=True, name=k)) for k, v in self.tensors.items()
        )
        return ModelParams(self.n_entities, self.n_relations, self.n_dims, self.n_dims_att, tensors)

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.tensors.items())

    def n_parameters(self) -> int:
        return sum(v.data.size for v in self.tensors.values())


def mlp2(x: Tensor, params: ModelParams, prefix: str, slope: float) -> Tensor:
    """leaky_relu layer followed by a tanh layer."""
    h = ad.leaky_relu(_affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]), slope)
    return ad.tanh(_affine(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))


def mlp1(x: Tensor, params: ModelParams, prefix: str, slope: float) -> Tensor:
    return ad.leaky_relu(_affine(x, params[f"{prefix}.w"], params[f"{prefix}.b"]), slope)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add_bias(ad.matmul(x, w), b)
