"""In-memory tensor datasets and deterministic batch order."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import DatasetEmpty, ShapeMismatch
from ..synthdata import ShadowTuple, read_dataset


@dataclass
class TensorSet:
    ids: list[str]
    comp: torch.Tensor  # N x 3 x R x R
    m_fo: torch.Tensor  # N x 1 x R x R
    m_fs: torch.Tensor
    m_bo: torch.Tensor
    m_bs: torch.Tensor
    gt: torch.Tensor
    B_s: torch.Tensor  # N x 4

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def resolution(self) -> int:
        return self.comp.shape[-1]

    def batch(self, idx) -> dict:
        idx = torch.as_tensor(idx, dtype=torch.long)
        out = {k: getattr(self, k)[idx] for k in ("comp", "m_fo", "m_fs", "m_bo", "m_bs", "gt", "B_s")}
        out["ids"] = [self.ids[i] for i in idx.tolist()]
        return out


def _img(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.asarray(a, np.float32).transpose(2, 0, 1)))


def _msk(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(a, np.float32))[None]


def stack_tuples(tuples: Sequence[ShadowTuple], resolution: int | None = None) -> TensorSet:
    if not tuples:
        raise DatasetEmpty("no tuples to stack")
    sizes = {t.resolution for t in tuples}
    if len(sizes) != 1 or (resolution is not None and sizes != {resolution}):
        raise ShapeMismatch(f"tuple resolutions {sorted(sizes)} do not match the configured {resolution}")
    return TensorSet(
        ids=[t.tuple_id for t in tuples],
        comp=torch.stack([_img(t.comp) for t in tuples]),
        m_fo=torch.stack([_msk(t.m_fo) for t in tuples]),
        m_fs=torch.stack([_msk(t.m_fs) for t in tuples]),
        m_bo=torch.stack([_msk(t.m_bo) for t in tuples]),
        m_bs=torch.stack([_msk(t.m_bs) for t in tuples]),
        gt=torch.stack([_img(t.gt) for t in tuples]),
        B_s=torch.tensor([t.meta["B_s"] for t in tuples], dtype=torch.float32),
    )


def load_tuples(directory) -> list[ShadowTuple]:
    tuples = list(read_dataset(directory))
    if not tuples:
        raise DatasetEmpty(f"{directory}: dataset holds no tuples")
    return tuples


class BatchOrder:
    """Maps a global step to a batch of indices.

    Each epoch uses a permutation drawn from a generator seeded by
    ``(seed, epoch)``, so any step's batch is recomputable without replaying
    earlier ones; this is what makes resumed runs follow the original
    trajectory.
    """

    def __init__(self, n: int, batch_size: int, seed: int):
        if n <= 0:
            raise DatasetEmpty("cannot batch an empty dataset")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seed = seed
        self.per_epoch = math.ceil(n / self.batch_size)
        self._cache: tuple[int, torch.Tensor] | None = None

    def _perm(self, epoch: int) -> torch.Tensor:
        if self._cache is None or self._cache[0] != epoch:
            g = torch.Generator().manual_seed(self.seed * 1_000_003 + epoch)
            self._cache = (epoch, torch.randperm(self.n, generator=g))
        return self._cache[1]

    def epoch_of(self, step: int) -> int:
        return step // self.per_epoch

    def __call__(self, step: int) -> torch.Tensor:
        epoch, k = divmod(step, self.per_epoch)
        return self._perm(epoch)[k * self.batch_size:(k + 1) * self.batch_size]
