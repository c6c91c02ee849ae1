"""Training loop for the occupancy predictor.

One sample per step (batch size 1): the sample's pyramid supplies
teacher-forced sub-code targets for every scale, the cross-entropies of all
heads are summed, and Adam updates shared weights.  Pyramids, kernel maps
and parent links are static per sample, so they are compiled once up front.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import CodecError, EmptyInputError
from .kernelmap import build_kernel_map
from .model import TopModel, parent_links
from .occupancy import build_pyramid
from .voxel import SparseGeometry


@dataclass
class TrainConfig:
    steps: int = 5000
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    channels: int = 32
    kernel_size: int = 3
    eval_every: int = 500
    holdout: int = 4
    train_one_stage: bool = True  # keep the 255-ary head comparable to the 16-ary pair


@dataclass
class _ScaleData:
    layer: object
    children: SparseGeometry
    kmap_parent: object
    kmap_child: object
    links: tuple
    s1: np.ndarray
    s2: np.ndarray
    sym: np.ndarray


@dataclass
class CompiledSample:
    scales: list[_ScaleData]
    n_points: int
    n_codes: int


def compile_sample(geom: SparseGeometry) -> CompiledSample:
    """Precompute everything about a sample that does not depend on weights."""
    pyr = build_pyramid(geom)
    kmaps = [build_kernel_map(layer.parents) for layer in pyr.layers]
    scales = []
    n_codes = 0
    for d in range(1, pyr.depth):
        layer = pyr.layers[d - 1]
        children = pyr.layers[d].parents
        codes = pyr.layers[d].codes.astype(np.int64)
        scales.append(_ScaleData(
            layer=layer, children=children,
            kmap_parent=kmaps[d - 1], kmap_child=kmaps[d],
            links=parent_links(layer.parents, children),
            s1=codes >> 4, s2=codes & 15, sym=codes - 1,
        ))
        n_codes += len(codes)
    return CompiledSample(scales=scales, n_points=len(geom), n_codes=n_codes)


def _scale_losses(model: TopModel, sc: _ScaleData, backward: bool):
    feats = model.trunk(sc.layer, sc.children, sc.kmap_parent, sc.kmap_child, sc.links)
    l1, _, d1 = nn.softmax_xent_bits(model.head_s1.forward(feats), sc.s1)
    f2 = feats + model.s1_embedding.forward(sc.s1)
    l2, _, d2 = nn.softmax_xent_bits(model.head_s2.forward(f2), sc.s2)
    l3, _, d3 = nn.softmax_xent_bits(model.head_code.forward(feats), sc.sym)
    if backward:
        d_feats = model.head_s1.backward(d1) + model.head_code.backward(d3)
        d_feats_s2 = model.head_s2.backward(d2)
        model.backward_scale(d_feats, d_feats_s2)
    return l1 + l2, l3


def sample_bits(model: TopModel, sample: CompiledSample, backward: bool = False):
    """(two-stage bits, one-stage bits) of one sample under the current weights."""
    bits2 = 0.0
    bits1 = 0.0
    for sc in sample.scales:
        b2, b1 = _scale_losses(model, sc, backward)
        bits2 += b2
        bits1 += b1
    return bits2, bits1


def evaluate(model: TopModel, samples: list[CompiledSample]) -> dict:
    """Bits-per-point of a sample set, against the 8-bit uniform baseline."""
    bits2 = bits1 = 0.0
    points = codes = 0
    for s in samples:
        b2, b1 = sample_bits(model, s)
        bits2 += b2
        bits1 += b1
        points += s.n_points
        codes += s.n_codes
    uniform_bpp = 8.0 * codes / points
    return {
        "bpp": bits2 / points,
        "bpp_one_stage": bits1 / points,
        "uniform_bpp": uniform_bpp,
        "ratio": bits2 / points / uniform_bpp,
    }


def train(dataset: list[SparseGeometry], config: TrainConfig):
    """Train a fresh model; returns (model, history).

    The last `config.holdout` samples are held out for periodic bpp
    evaluation; the rest are visited in reshuffled epochs.
    """
    if not dataset:
        raise EmptyInputError("training dataset is empty")
    holdout = min(config.holdout, max(0, len(dataset) - 1))
    train_geoms = dataset[: len(dataset) - holdout] if holdout else list(dataset)
    eval_geoms = dataset[len(dataset) - holdout:] if holdout else []

    train_samples = [compile_sample(g) for g in train_geoms]
    eval_samples = [compile_sample(g) for g in eval_geoms]

    model = TopModel(channels=config.channels, kernel_size=config.kernel_size)
    model.init_params(config.seed)
    adam = nn.Adam(model.parameters(), lr=config.lr, beta1=config.beta1,
                   beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(np.uint64(config.seed) ^ np.uint64(0x5EED))

    history = {"steps": [], "train_bits_per_code": [], "eval": []}
    order = np.array([], dtype=np.int64)
    for step in range(1, config.steps + 1):
        if len(order) == 0:
            order = rng.permutation(len(train_samples))
        idx, order = order[0], order[1:]
        sample = train_samples[idx]

        adam.zero_grad()
        bits2, bits1 = sample_bits(model, sample, backward=True)
        loss = bits2 + (bits1 if config.train_one_stage else 0.0)
        if not np.isfinite(loss):
            raise CodecError(f"non-finite training loss at step {step} (sample {idx})")
        adam.step()

        history["steps"].append(step)
        history["train_bits_per_code"].append(bits2 / max(sample.n_codes, 1))
        if eval_samples and (step % config.eval_every == 0 or step == config.steps):
            ev = evaluate(model, eval_samples)
            ev["step"] = step
            history["eval"].append(ev)
    return model, history
