"""Training, segmentation, CRF refinement and evaluation."""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from .affinity import cached_affinity
from .config import PipelineConfig
from .crf import CRFParams, map_labels, mean_field
from .evalseg import MetricsReport, merge_clusters
from .losses import SoftNCut, ssim_torch
from .volume import LabelMap, Volume, load_volume, normalize
from .wnet import WNet, init_params, load_params, save_params

log = logging.getLogger(__name__)

LOSS_HEADER = "step,J_soft_ncut,J_rec,J_total\n"


class NonFiniteLossError(RuntimeError):
    pass


def configure_runtime(threads: int = 1) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _finite(step: int, **terms) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite {name} ({value}) at step {step}")


def _tensor(v: Volume, dtype) -> torch.Tensor:
    return torch.from_numpy(v.data.astype(np.float64)).to(dtype).reshape((1, 1) + v.dims)


def train(cfg: PipelineConfig) -> Path:
    """Train on every volume under ``data.train_dir``; returns the checkpoint path.

    Writes ``losses.csv`` and ``model.ckpt`` (refreshed each epoch) into ``data.out_dir``.
    """
    configure_runtime(cfg.runtime.threads)
    torch.manual_seed(cfg.seed)
    dtype = getattr(torch, cfg.runtime.dtype)
    files = sorted(cfg.path(cfg.data.train_dir).glob(cfg.data.pattern))
    if not files:
        raise FileNotFoundError(f"no training volumes matching {cfg.data.pattern!r} in "
                                f"{cfg.path(cfg.data.train_dir)}")
    volumes = [normalize(load_volume(f)) for f in files]
    ncuts = [SoftNCut(cached_affinity(v, cfg.affinity, cfg.cache_dir)) for v in volumes]
    inputs = [_tensor(v, dtype) for v in volumes]

    net = init_params(cfg.network, dtype)
    lc, opt_cfg = cfg.loss, cfg.optimizer
    if lc.freeze_decoder:
        for p in net.decoder.parameters():
            p.requires_grad_(False)
    adam = lambda params: torch.optim.Adam(params, lr=opt_cfg.lr, betas=(opt_cfg.beta1, opt_cfg.beta2))
    trainable = [p for p in net.parameters() if p.requires_grad]
    opt = adam(trainable)
    enc_opt = adam(list(net.encoder.parameters())) if lc.mode == "alternating" else None

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    order_rng = np.random.default_rng(cfg.seed)
    step = 0
    with open(out / "losses.csv", "w", newline="") as logf:
        logf.write(LOSS_HEADER)
        for epoch in range(opt_cfg.epochs):
            order = order_rng.permutation(len(volumes)) if opt_cfg.shuffle else range(len(volumes))
            for i in order:
                if opt_cfg.max_steps and step >= opt_cfg.max_steps:
                    break
                step += 1
                x = inputs[i]
                if enc_opt is None:
                    p, rec = net(x)
                    j_ncut = ncuts[i](p[0])
                    j_rec = 1.0 - ssim_torch(x[0, 0], rec[0, 0], cfg.ssim)
                    total = lc.lambda_ncut * j_ncut + lc.lambda_rec * j_rec
                    _finite(step, J_soft_ncut=j_ncut.item(), J_rec=j_rec.item())
                    opt.zero_grad()
                    total.backward()
                    opt.step()
                else:
                    j_ncut = ncuts[i](net.encoder(x)[0])
                    _finite(step, J_soft_ncut=j_ncut.item())
                    enc_opt.zero_grad()
                    (lc.lambda_ncut * j_ncut).backward()
                    enc_opt.step()
                    p, rec = net(x)
                    j_rec = 1.0 - ssim_torch(x[0, 0], rec[0, 0], cfg.ssim)
                    _finite(step, J_rec=j_rec.item())
                    opt.zero_grad()
                    (lc.lambda_rec * j_rec).backward()
                    opt.step()
                    total = lc.lambda_ncut * j_ncut + lc.lambda_rec * j_rec
                jn, jr, jt = j_ncut.item(), j_rec.item(), total.item()
                logf.write(f"{step},{jn!r},{jr!r},{jt!r}\n")
                log.info("step %d  ncut %.5f  rec %.5f  total %.5f", step, jn, jr, jt)
            logf.flush()
            save_params(net, ckpt)
    return ckpt


def segment(net: WNet | str | Path, volume: Volume) -> tuple[np.ndarray, LabelMap]:
    """Encoder-only inference on a normalized copy of ``volume``."""
    if not isinstance(net, WNet):
        net = load_params(net)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        p = net.segment(_tensor(normalize(volume), dtype))[0].to(torch.float64).numpy()
    return p, map_labels(p)


def refine(assignment, volume: Volume, params: CRFParams | None = None) -> tuple[np.ndarray, LabelMap]:
    q = mean_field(assignment, normalize(volume), params)
    return q, map_labels(q)


def evaluate(pred: LabelMap, clusters, truth_mask, volume_id: str = "0",
             report: MetricsReport | None = None) -> MetricsReport:
    report = report if report is not None else MetricsReport()
    report.add(volume_id, merge_clusters(pred, clusters), truth_mask)
    return report
