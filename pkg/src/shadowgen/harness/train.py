"""Adam training loop, resumable checkpoints and parameter-only finetuning."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from ..errors import ConfigError, NonFiniteLoss
from ..losses import compute_losses
from ..network import ShadowNet, load_checkpoint, network_from_checkpoint, save_checkpoint
from ..synthdata import ShadowTuple
from .config import RunConfig
from .data import BatchOrder, load_tuples, stack_tuples
from .evaluate import evaluate

log = logging.getLogger("shadowgen.train")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    loss_history: list[dict] = field(default_factory=list)
    best: dict | None = None  # {"step": ..., "s_ber": ...}
    rng_state: list[int] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(**d)


@dataclass
class TrainResult:
    net: ShadowNet
    state: TrainState
    checkpoint: Path | None

    @property
    def losses(self) -> list[float]:
        return [h["l_total"] for h in self.state.loss_history]


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def make_optimizer(net: ShadowNet, cfg: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))


def total_steps(cfg: RunConfig, n: int) -> int:
    if cfg.epochs is not None:
        return cfg.epochs * math.ceil(n / min(cfg.batch_size, n))
    return cfg.steps


def _save(path: Path, net, opt, state: TrainState, cfg: RunConfig, phase: str) -> Path:
    state.rng_state = torch.get_rng_state().tolist()
    save_checkpoint(path, net, opt, state.step,
                    extra={"train_state": state.to_dict(), "run_config": cfg.to_dict(), "phase": phase})
    return path


def _fit(net: ShadowNet, opt, cfg: RunConfig, tuples: Sequence[ShadowTuple], state: TrainState, phase: str,
         eval_tuples: Sequence[ShadowTuple] | None) -> TrainResult:
    data = stack_tuples(tuples, net.cfg.resolution)
    order = BatchOrder(len(data), cfg.batch_size, cfg.seed)
    n_steps = total_steps(cfg, len(data))
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    refine = not cfg.no_refine
    last = None
    net.train()
    with (ckpt_dir / f"{phase}_losses.jsonl").open("a") as loss_log:
        while state.step < n_steps:
            b = data.batch(order(state.step))
            out = net(b["comp"], b["m_fo"], b["m_bo"], b["m_bs"], refine=refine)
            parts = compute_losses(out, b, cfg.rec_norm)
            if not torch.isfinite(parts.l_total):
                dump = {"step": state.step, "batch_ids": b["ids"], "losses": parts.as_floats()}
                (ckpt_dir / "nonfinite_batch.json").write_text(json.dumps(dump, indent=1))
                raise NonFiniteLoss(f"non-finite loss at step {state.step}: {parts.as_floats()}", b["ids"])
            opt.zero_grad(set_to_none=True)
            parts.l_total.backward()
            opt.step()

            row = {"step": state.step, **parts.as_floats()}
            state.loss_history.append(row)
            loss_log.write(json.dumps(row) + "\n")
            state.step += 1
            state.epoch = order.epoch_of(state.step)
            if cfg.log_every and state.step % cfg.log_every == 0:
                log.info("%s step %d  total %.4f  reg %.4f  shape %.4f  mask %.4f  rec %.5f", phase, state.step,
                         row["l_total"], row["l_reg"], row["l_shape"], row["l_mask"], row["l_rec"])
            if cfg.eval_every and eval_tuples and state.step % cfg.eval_every == 0:
                rep, _ = evaluate(net, eval_tuples, refine=refine, batch_size=cfg.batch_size)
                s_ber = rep.aggregate["s_ber"]
                if state.best is None or s_ber < state.best["s_ber"]:
                    state.best = {"step": state.step, "s_ber": s_ber}
                    _save(ckpt_dir / f"{phase}_best.pt", net, opt, state, cfg, phase)
                net.train()
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                last = _save(ckpt_dir / f"{phase}_step{state.step:06d}.pt", net, opt, state, cfg, phase)
    last = _save(ckpt_dir / f"{phase}_last.pt", net, opt, state, cfg, phase)
    net.eval()
    return TrainResult(net, state, last)


def _tuples(given, path, what: str) -> list[ShadowTuple]:
    if given is not None:
        return list(given)
    if path is None:
        raise ConfigError(f"no {what} dataset configured")
    return load_tuples(path)


def train(cfg: RunConfig, tuples: Sequence[ShadowTuple] | None = None, *, resume=None,
          eval_tuples: Sequence[ShadowTuple] | None = None) -> TrainResult:
    """Train from scratch (or continue the run stored in ``resume``) on the train set."""
    set_determinism(cfg.seed)
    tuples = _tuples(tuples, cfg.train_data, "training")
    if eval_tuples is None and cfg.eval_every and cfg.test_data:
        eval_tuples = load_tuples(cfg.test_data)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        net = network_from_checkpoint(ckpt, refine=not cfg.no_refine)
        opt = make_optimizer(net, cfg)
        opt.load_state_dict(ckpt["optimizer"])
        state = TrainState.from_dict(ckpt["extra"]["train_state"])
        if state.rng_state is not None:
            torch.set_rng_state(torch.tensor(state.rng_state, dtype=torch.uint8))
        phase = ckpt["extra"].get("phase", "train")
    else:
        net = ShadowNet(cfg.network_config())
        opt = make_optimizer(net, cfg)
        state = TrainState()
        phase = "train"
    return _fit(net, opt, cfg, tuples, state, phase, eval_tuples)


def finetune(cfg: RunConfig, base_checkpoint, tuples: Sequence[ShadowTuple] | None = None, *,
             eval_tuples: Sequence[ShadowTuple] | None = None) -> TrainResult:
    """Continue from the parameters in ``base_checkpoint`` with a fresh optimizer."""
    set_determinism(cfg.seed)
    ckpt = load_checkpoint(base_checkpoint)
    tuples = _tuples(tuples, cfg.finetune_data, "finetuning")
    if eval_tuples is None and cfg.eval_every and cfg.test_data:
        eval_tuples = load_tuples(cfg.test_data)
    net = network_from_checkpoint(ckpt, refine=not cfg.no_refine, literal_mean=cfg.literal_mean,
                                  fallback_scale=cfg.fallback_scale)
    opt = make_optimizer(net, cfg)
    return _fit(net, opt, cfg, tuples, TrainState(), "finetune", eval_tuples)
