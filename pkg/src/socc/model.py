"""Target occupancy predictor: cross-scale context features and symbol heads.

The trunk embeds the lower scale's occupancy codes, runs a ResNet block on
the parent geometry, replicates each parent feature to its children, adds an
octant embedding, and runs a second ResNet block on the child geometry.
Three heads share the trunk feature: a 16-way first-nibble head, a 16-way
second-nibble head conditioned on the first nibble, and a 255-way
whole-code head used by the one-stage mode.  Weights are shared across all
scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import morton, nn
from .errors import InvalidInputError, MissingParentError
from .kernelmap import KernelMap, build_kernel_map
from .occupancy import ScaleLayer
from .voxel import SparseGeometry

S1_CLASSES = 16
S2_CLASSES = 16
CODE_CLASSES = 255  # codes 1..255 map to symbols 0..254


def parent_links(parents: SparseGeometry, children: SparseGeometry):
    """Row index of each child's parent, plus the child's octant."""
    pk = children.keys >> 3
    rows = np.searchsorted(parents.keys, pk)
    if len(pk):
        if rows.max(initial=0) >= len(parents) or not np.array_equal(parents.keys[rows], pk):
            raise MissingParentError("child voxel without a parent in the lower scale")
    octants = morton.REV3[children.keys & 7]
    return rows, octants


@dataclass
class ScalePrediction:
    """Per-child probability rows for the two 16-ary sub-code stages."""

    p_s1: np.ndarray
    p_s2: np.ndarray


def _floor_probs(p: np.ndarray) -> np.ndarray:
    np.maximum(p, nn.PROB_EPS, out=p)
    return p


class TopModel:
    """All learnable parameters plus the forward/backward passes."""

    def __init__(self, channels: int = 32, kernel_size: int = 3):
        if kernel_size != 3:
            raise InvalidInputError("only kernel size 3 is supported")
        c = int(channels)
        self.channels = c
        self.kernel_size = 3
        self.code_embedding = nn.Embedding("code_embedding", 256, c)  # row 0 unused
        self.octant_embedding = nn.Embedding("octant_embedding", 8, c)
        self.s1_embedding = nn.Embedding("s1_embedding", S1_CLASSES, c)
        self.extraction_resnet = nn.ResBlock("extraction_resnet", c)
        self.target_resnet = nn.ResBlock("target_resnet", c)
        self.head_s1 = nn.Mlp("head_s1", c, S1_CLASSES)
        self.head_s2 = nn.Mlp("head_s2", c, S2_CLASSES)
        self.head_code = nn.Mlp("head_code", c, CODE_CLASSES)
        self._modules = [
            self.code_embedding, self.octant_embedding, self.s1_embedding,
            self.extraction_resnet, self.target_resnet,
            self.head_s1, self.head_s2, self.head_code,
        ]
        self._links = None
        self._parent_shape = None

    # -- parameter plumbing --------------------------------------------------

    def parameters(self) -> list[nn.Parameter]:
        out = []
        for m in self._modules:
            out.extend(m.params())
        return out

    def init_params(self, seed: int) -> None:
        """Deterministic initialization from a 64-bit seed."""
        rng = np.random.default_rng(np.uint64(seed))
        for emb in (self.code_embedding, self.octant_embedding, self.s1_embedding):
            emb.init(rng)
        self.extraction_resnet.init(rng)
        self.target_resnet.init(rng)
        self.head_s1.init(rng)
        self.head_s2.init(rng)
        self.head_code.init(rng)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def named_tensors(self):
        return [(p.name, p.value) for p in self.parameters()]

    def serialize(self) -> bytes:
        return nn.serialize_tensors(self.named_tensors())

    def model_id(self) -> int:
        """Truncated FNV-1a of the serialized parameter file."""
        return nn.fnv1a64(self.serialize())

    def save(self, path) -> None:
        nn.save_tensors(path, self.named_tensors())

    def load_state(self, named) -> None:
        table = dict(named)
        for p in self.parameters():
            if p.name not in table:
                raise InvalidInputError(f"parameter {p.name} missing from file")
            arr = table.pop(p.name)
            if tuple(arr.shape) != tuple(p.value.shape):
                raise InvalidInputError(
                    f"parameter {p.name} has shape {arr.shape}, expected {p.value.shape}")
            p.value[...] = arr
        if table:
            raise InvalidInputError(f"unknown parameters in file: {sorted(table)}")

    @classmethod
    def load(cls, path) -> "TopModel":
        named = nn.load_tensors(path)
        shapes = dict(named)
        channels = shapes["code_embedding"].shape[1]
        model = cls(channels=channels)
        model.load_state(named)
        return model

    # -- forward -------------------------------------------------------------

    def extract_features(self, layer: ScaleLayer, kmap: KernelMap | None = None) -> np.ndarray:
        """Embed occupancy codes and aggregate neighborhoods on the parent geometry."""
        if kmap is None:
            kmap = build_kernel_map(layer.parents)
        e = self.code_embedding.forward(layer.codes.astype(np.int64))
        return self.extraction_resnet.forward(e, kmap)

    def target_embed(self, parent_feats: np.ndarray, parents: SparseGeometry,
                     children: SparseGeometry, kmap: KernelMap | None = None,
                     links=None) -> np.ndarray:
        """Replicate parent features to children, add octant embeddings, refine."""
        if links is None:
            links = parent_links(parents, children)
        rows, octants = links
        self._links = links
        self._parent_shape = parent_feats.shape
        f0 = parent_feats[rows] + self.octant_embedding.forward(octants)
        if kmap is None:
            kmap = build_kernel_map(children)
        return self.target_resnet.forward(f0, kmap)

    def trunk(self, layer: ScaleLayer, children: SparseGeometry,
              kmap_parent: KernelMap | None = None,
              kmap_child: KernelMap | None = None, links=None) -> np.ndarray:
        pf = self.extract_features(layer, kmap_parent)
        return self.target_embed(pf, layer.parents, children, kmap_child, links)

    def predict_s1(self, feats: np.ndarray) -> np.ndarray:
        return _floor_probs(nn.softmax(self.head_s1.forward(feats)))

    def predict_s2(self, feats: np.ndarray, s1: np.ndarray) -> np.ndarray:
        conditioned = feats + self.s1_embedding.forward(np.asarray(s1, dtype=np.int64))
        return _floor_probs(nn.softmax(self.head_s2.forward(conditioned)))

    def predict_code(self, feats: np.ndarray) -> np.ndarray:
        return _floor_probs(nn.softmax(self.head_code.forward(feats)))

    def predict(self, layer: ScaleLayer, children: SparseGeometry,
                s1: np.ndarray, kmap_parent=None, kmap_child=None) -> ScalePrediction:
        """Both stage probabilities with the given (true or decoded) first nibbles."""
        feats = self.trunk(layer, children, kmap_parent, kmap_child)
        return ScalePrediction(self.predict_s1(feats), self.predict_s2(feats, s1))

    # -- backward (training path; call in this order after the forward) ------

    def backward_scale(self, d_feats: np.ndarray, d_feats_s2: np.ndarray | None = None) -> None:
        """Backprop through the trunk given head gradients w.r.t. the trunk feature.

        d_feats collects gradients flowing straight from heads into F;
        d_feats_s2 is the gradient at the s2 head input (F + Emb(s1)), which
        also feeds the s1 embedding table.
        """
        total = d_feats
        if d_feats_s2 is not None:
            self.s1_embedding.backward(d_feats_s2)
            total = total + d_feats_s2
        d_f0 = self.target_resnet.backward(total)
        rows, _ = self._links
        self.octant_embedding.backward(d_f0)
        d_parent = np.zeros(self._parent_shape, dtype=d_f0.dtype)
        np.add.at(d_parent, rows, d_f0)
        d_e = self.extraction_resnet.backward(d_parent)
        self.code_embedding.backward(d_e)
