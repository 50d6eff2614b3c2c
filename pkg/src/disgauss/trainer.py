"""End-to-end training: batching, the encode->sample->fold->triplane->decode->
render->loss loop, optimization schedule, checkpointing, metric logging."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .autodiff import (Adam, Tensor, backward, clip_global_norm, no_grad, ops)
from .autodiff.serialize import CheckpointError, load_blob, save_blob
from .config import ModelConfig, TrainConfig, config_from_json, config_to_json
from .datagen import Dataset, load_dataset, mig
from .drl import kl_divergence, kl_per_dim, mi_loss, reparameterize
from .losses import LossWeights, emd, mse, render_loss, ssim, total_loss
from .model import DisGaussModel

PSNR_CAP = 99.0


@dataclass
class TrainState:
    model: DisGaussModel
    optimizer: Adam
    cfg: TrainConfig
    step: int = 0
    epoch: int = 0
    best_psnr: float = float("-inf")
    kl_dims: np.ndarray | None = None


def lr_schedule(step: int, total_steps: int, warmup_steps: int,
                base_lr: float) -> float:
    """Linear warmup to base_lr, then cosine annealing to a 1% floor."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    floor = 0.01 * base_lr
    return floor + (base_lr - floor) * 0.5 * (1.0 + np.cos(np.pi * progress))


def psnr(pred: np.ndarray, gt: np.ndarray, cap: float = PSNR_CAP) -> float:
    err = float(np.mean((np.asarray(pred, dtype=np.float64)
                         - np.asarray(gt, dtype=np.float64)) ** 2))
    if err <= 0:
        return cap
    return min(10.0 * np.log10(1.0 / err), cap)


def build_state(cfg: TrainConfig) -> TrainState:
    model = DisGaussModel(cfg.model, seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    return TrainState(model=model, optimizer=opt, cfg=cfg)


def _subsample_cloud(points: np.ndarray, k: int) -> np.ndarray:
    if k >= len(points):
        return points
    idx = kernels.farthest_point_sample(points.astype(np.float64), k, start=0)
    return points[idx]


class NonFiniteLoss(RuntimeError):
    pass


def train_step(state: TrainState, batch: dict, rng: np.random.Generator,
               lr: float) -> dict[str, float]:
    """One optimization step over a batch dict; returns loss components.

    A non-finite total loss rejects the step (parameters untouched) and
    raises NonFiniteLoss carrying the component breakdown.
    """
    model = state.model
    cfg = state.cfg
    w = cfg.weights
    model.train(True)
    model.zero_grad()

    images = Tensor(batch["input"].transpose(0, 3, 1, 2))  # (B,3,H,W)
    lat = model.latents(images, rng)
    points = model.fold_points(lat.c_pcd)
    attrs = model.appearance(points, lat.c_apr)
    preds = model.render_views(attrs, batch["novel_cameras"])  # (B,V,H,W,3)
    gt = Tensor(batch["novel"])

    l_render = render_loss(preds, gt, attrs.opacities, w)
    gt_cloud = Tensor(batch["clouds"])  # pre-subsampled to emd_points
    pred_cloud = points
    if cfg.emd_points < points.shape[1]:
        sel = np.linspace(0, points.shape[1] - 1, cfg.emd_points).astype(np.int64)
        pred_cloud = ops.getitem(points, (slice(None), sel))
    l_pc = emd(pred_cloud, gt_cloud, iters=cfg.emd_iters)

    l_kl = ops.add(kl_divergence(lat.posterior_apr), kl_divergence(lat.posterior_pcd))
    if w.alpha > 0:
        first_view = ops.transpose(preds[:, 0], (0, 3, 1, 2))
        q_post = model.light_enc(first_view)
        l_mi = mi_loss(lat.z_apr, q_post)
    else:
        l_mi = ops.const_like(0.0, l_kl)
    l_drl = ops.add(ops.mul(l_kl, ops.const_like(w.beta, l_kl)),
                    ops.mul(l_mi, ops.const_like(w.alpha, l_mi)))
    total = total_loss(l_render, l_pc, l_drl)

    components = {
        "render": l_render.item(), "pc": l_pc.item(), "kl": l_kl.item(),
        "mi": l_mi.item(), "drl": l_drl.item(), "total": total.item(),
    }
    if not np.isfinite(components["total"]):
        raise NonFiniteLoss(f"non-finite loss, components: {components}")

    backward(total)
    grads = {k: p.grad for k, p in state.optimizer.params.items()
             if p.grad is not None}
    norm = clip_global_norm(grads, cfg.grad_clip)
    components["grad_norm"] = norm
    state.optimizer.lr = lr
    state.optimizer.step(grads)
    model.zero_grad()
    state.step += 1
    return components


def _batches(ds: Dataset, indices: list[int], batch_size: int,
             rng: np.random.Generator, clouds: np.ndarray):
    order = rng.permutation(len(indices))
    for s in range(0, len(order), batch_size):
        sel = [indices[i] for i in order[s:s + batch_size]]
        if not sel:
            continue
        yield {
            "input": ds.input_images[sel],
            "novel": ds.novel_images[sel],
            "novel_cameras": [ds.novel_cameras[i] for i in sel],
            "clouds": clouds[sel],
            "indices": sel,
        }


def encode_means(state: TrainState, images: np.ndarray,
                 batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means (z_apr || z_pcd) and per-dim KL over a stack of images."""
    model = state.model
    model.eval()
    zs = []
    kl_accum = None
    count = 0
    with no_grad():
        for s in range(0, len(images), batch_size):
            imgs = Tensor(images[s:s + batch_size].transpose(0, 3, 1, 2))
            post_apr, post_pcd = model.encode(imgs)
            zs.append(np.concatenate([post_apr.mean.data, post_pcd.mean.data],
                                     axis=1))
            k = np.concatenate([kl_per_dim(post_apr), kl_per_dim(post_pcd)])
            n = imgs.shape[0]
            kl_accum = k * n if kl_accum is None else kl_accum + k * n
            count += n
    return np.concatenate(zs), kl_accum / max(count, 1)


def evaluate(state: TrainState, ds: Dataset, split: str = "val",
             max_scenes: int | None = None) -> dict:
    """Deterministic metrics over a split: PSNR/SSIM on novel views, EMD on
    clouds, MIG over all scenes, per-dim KL; uses posterior means."""
    model = state.model
    model.eval()
    idx = ds.split(split)
    if max_scenes:
        idx = idx[:max_scenes]
    psnrs, ssims, emds = [], [], []
    with no_grad():
        for s in range(0, len(idx), 16):
            sel = idx[s:s + 16]
            imgs = Tensor(ds.input_images[sel].transpose(0, 3, 1, 2))
            lat = model.latents(imgs, rng=None)
            points = model.fold_points(lat.c_pcd)
            attrs = model.appearance(points, lat.c_apr)
            preds = model.render_views(attrs, [ds.novel_cameras[i] for i in sel])
            gt = ds.novel_images[sel]
            for b in range(len(sel)):
                for v in range(gt.shape[1]):
                    psnrs.append(psnr(preds.data[b, v], gt[b, v]))
                ssims.append(1.0 - ssim(Tensor(preds.data[b]), Tensor(gt[b])).item())
            gt_c = np.stack([_subsample_cloud(ds.point_clouds[i], 256) for i in sel])
            pr_idx = kernels.farthest_point_sample(
                points.data.mean(axis=0).astype(np.float64), 256, start=0)
            pred_c = points.data[:, pr_idx] if len(pr_idx) < points.shape[1] \
                else points.data
            emds.append(emd(Tensor(pred_c), Tensor(gt_c)).item())
    zs, kl_dims = encode_means(state, ds.input_images)
    mig_score = mig(zs, ds.factors)
    state.kl_dims = kl_dims
    collapsed = int(np.sum(kl_dims < 0.01))
    return {
        "psnr": float(np.mean(psnrs)) if psnrs else 0.0,
        "ssim": float(np.mean(ssims)) if ssims else 0.0,
        "emd": float(np.mean(emds)) if emds else 0.0,
        "mig": float(mig_score),
        "kl_per_dim": [float(v) for v in kl_dims],
        "collapsed_dims": collapsed,
        "split": split,
        "scenes": len(idx),
    }


# -- checkpointing -------------------------------------------------------------

def checkpoint_save(state: TrainState, path):
    tensors: dict[str, np.ndarray] = {}
    for name, p in state.model.parameters().items():
        tensors["param/" + name] = p.data
    for name, b in state.model.buffers().items():
        tensors["buffer/" + name] = b.data
    opt = state.optimizer
    if opt.state:
        for name, m in opt.state["m"].items():
            tensors["opt_m/" + name] = m
        for name, v in opt.state["v"].items():
            tensors["opt_v/" + name] = v
        tensors["meta/opt_t"] = np.array([opt.state["t"]], dtype=np.float32)
    tensors["meta/step"] = np.array([state.step], dtype=np.float32)
    tensors["meta/epoch"] = np.array([state.epoch], dtype=np.float32)
    if state.kl_dims is not None:
        tensors["meta/kl_per_dim"] = np.asarray(state.kl_dims, dtype=np.float32)
    cfg_bytes = config_to_json(state.cfg).encode("utf-8")
    tensors["meta/config_json"] = np.frombuffer(cfg_bytes, dtype=np.uint8
                                                ).astype(np.float32)
    save_blob(path, tensors)


def checkpoint_load(path) -> TrainState:
    tensors = load_blob(path)
    if "meta/config_json" not in tensors:
        raise CheckpointError("checkpoint missing embedded config")
    cfg_json = bytes(tensors["meta/config_json"].astype(np.uint8)).decode("utf-8")
    cfg = config_from_json(cfg_json)
    state = build_state(cfg)
    params = state.model.parameters()
    buffers = state.model.buffers()
    for name, p in params.items():
        key = "param/" + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing parameter '{name}'")
        if tuple(tensors[key].shape) != tuple(p.data.shape):
            raise CheckpointError(f"shape mismatch for '{name}'")
        p.data = tensors[key].astype(p.data.dtype)
    for name, b in buffers.items():
        key = "buffer/" + name
        if key in tensors:
            b.data = tensors[key].astype(b.data.dtype)
    if "meta/opt_t" in tensors:
        state.optimizer.state = {
            "m": {k: tensors["opt_m/" + k].astype(np.float32) for k in params},
            "v": {k: tensors["opt_v/" + k].astype(np.float32) for k in params},
            "t": int(tensors["meta/opt_t"][0]),
        }
    state.step = int(tensors["meta/step"][0])
    state.epoch = int(tensors["meta/epoch"][0])
    if "meta/kl_per_dim" in tensors:
        state.kl_dims = tensors["meta/kl_per_dim"]
    return state


def model_from_checkpoint(path) -> TrainState:
    return checkpoint_load(path)


# -- the full loop ---------------------------------------------------------------

def train(cfg: TrainConfig, ds: Dataset | None = None,
          log=print, steps_limit: int | None = None) -> TrainState:
    """Run the training loop; writes metrics CSV/JSON + checkpoint to out_dir."""
    if ds is None:
        ds = load_dataset(cfg.data_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = build_state(cfg)
    train_idx = ds.split("train")
    steps_per_epoch = max(len(train_idx) // cfg.batch_size, 1)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = int(steps_per_epoch * cfg.warmup_epochs)

    csv_path = out / "losses.csv"
    csv_file = open(csv_path, "w", newline="")
    writer = csv.writer(csv_file)
    writer.writerow(["step", "lr", "render", "pc", "kl", "mi", "drl",
                     "grad_norm", "total"])
    t_start = time.time()
    done = False
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        rng_epoch = np.random.default_rng([cfg.seed, 0xE0, epoch])
        for batch in _batches(ds, train_idx, cfg.batch_size, rng_epoch):
            lr = lr_schedule(state.step, total_steps, warmup_steps, cfg.lr)
            rng_步 = np.random.default_rng([cfg.seed, 0x57E9, state.step])
            try:
                comps = train_step(state, batch, rng_步, lr)
            except NonFiniteLoss as err:
                log(f"step {state.step}: rejected ({err})")
                state.step += 1
                continue
            writer.writerow([state.step, f"{lr:.3e}"] +
                            [f"{comps[k]:.6f}" for k in
                             ("render", "pc", "kl", "mi", "drl", "grad_norm",
                              "total")])
            if steps_limit and state.step >= steps_limit:
                done = True
                break
        csv_file.flush()
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            metrics = evaluate(state, ds, "val")
            log(f"epoch {epoch}: psnr {metrics['psnr']:.2f} ssim "
                f"{metrics['ssim']:.3f} emd {metrics['emd']:.4f} "
                f"mig {metrics['mig']:.3f}")
            with open(out / f"metrics_epoch{epoch:03d}.json", "w") as f:
                json.dump(metrics, f, indent=1)
        else:
            log(f"epoch {epoch} done ({state.step} steps, "
                f"{time.time() - t_start:.0f}s)")
        if done:
            break
    csv_file.close()
    metrics = evaluate(state, ds, "val")
    with open(out / "metrics_final.json", "w") as f:
        json.dump(metrics, f, indent=1)
    checkpoint_save(state, out / "checkpoint.dgs")
    log(f"final: psnr {metrics['psnr']:.2f} mig {metrics['mig']:.3f} "
        f"emd {metrics['emd']:.4f} ({time.time() - t_start:.0f}s)")
    return state
