"""Realize a genome as a concrete network over a :class:`ParamStore`.

Layout: stem -> blocks -> global average pool -> dense classifier. Block
``k`` reads the outputs of blocks ``k-2`` and ``k-1`` (the stem stands in
for missing ones) through 1x1 preprocessors + ReLU, sums two edge ops per
hidden node, and projects the concatenated hidden nodes back to its width.
In vector mode every convolution becomes a dense layer and pooling is
skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .genome import HIDDEN, OUTPUT, BlockGenome, NetworkGenome, SkeletonSpec
from .numkernel import ParamKey, ParamStore
from .space import OpSet, Widths


def stem_keys(widths: Widths) -> dict[ParamKey, tuple[int, ...]]:
    if widths.mode == "vector":
        w = (widths.input_dim, widths.base)
    else:
        w = (3, 3, widths.in_channels, widths.base)
    return {ParamKey(-1, -1, -1, 0, "stem.w"): w, ParamKey(-1, -1, -1, 0, "stem.b"): (widths.base,)}


def block_fixed_keys(k: int, skeleton: SkeletonSpec, widths: Widths) -> dict[ParamKey, tuple[int, ...]]:
    p = widths.plan(skeleton)[k]
    vec = widths.mode == "vector"
    out = {}
    for j, cin in enumerate(p.in_widths):
        out[ParamKey(k, j, -1, 0, "pre.w")] = (cin, p.width) if vec else (1, 1, cin, p.width)
        out[ParamKey(k, j, -1, 0, "pre.b")] = (p.width,)
    out[ParamKey(k, OUTPUT, -1, 0, "proj.w")] = (4 * p.width, p.width) if vec else (1, 1, 4 * p.width, p.width)
    out[ParamKey(k, OUTPUT, -1, 0, "proj.b")] = (p.width,)
    return out


def edge_keys(k: int, dst: int, src: int, op: int, opset: OpSet, width: int) -> dict[ParamKey, tuple[int, ...]]:
    return {ParamKey(k, dst, src, op, f"edge.{role}"): shape for role, shape in opset[op].param_shapes(width).items()}


def classifier_keys(skeleton: SkeletonSpec, widths: Widths) -> dict[ParamKey, tuple[int, ...]]:
    w = widths.plan(skeleton)[-1].width
    B = skeleton.B
    return {
        ParamKey(B, -1, -1, 0, "cls.w"): (w, widths.n_classes),
        ParamKey(B, -1, -1, 0, "cls.b"): (widths.n_classes,),
    }


def block_edge_keys(k: int, block: BlockGenome, opset: OpSet, width: int) -> dict[ParamKey, tuple[int, ...]]:
    out = {}
    for dst, src, op in block.edges():
        out.update(edge_keys(k, dst, src, op, opset, width))
    return out


def path_keys(genome: NetworkGenome, widths: Widths, opset: OpSet) -> dict[ParamKey, tuple[int, ...]]:
    """Every parameter a complete genome's path reads, with its shape."""
    sk = genome.skeleton
    plans = widths.plan(sk)
    out = stem_keys(widths)
    for k, block in enumerate(genome.blocks):
        out.update(block_fixed_keys(k, sk, widths))
        out.update(block_edge_keys(k, block, opset, plans[k].width))
    out.update(classifier_keys(sk, widths))
    return out


@dataclass
class Tape:
    genome: NetworkGenome
    stem: tuple
    blocks: list
    head: tuple


def _lin(store: ParamStore, key_w: ParamKey, key_b: ParamKey, x, vector: bool, stride: int = 1):
    w, b = store[key_w], store[key_b]
    if vector:
        return nk.dense_forward(x, w, b)
    return nk.conv2d_forward(x, w, b, stride)


def _lin_back(g, cache, vector: bool):
    return nk.dense_backward(g, cache) if vector else nk.conv2d_backward(g, cache)


def forward(genome: NetworkGenome, store: ParamStore, x: np.ndarray, widths: Widths, opset: OpSet):
    """Run a complete genome. Returns ``(logits, tape)``."""
    if not genome.complete:
        raise ValueError("forward needs a complete genome")
    vec = widths.mode == "vector"
    if vec:
        x = x.reshape(x.shape[0], -1)
    plans = widths.plan(genome.skeleton)
    skey = list(stem_keys(widths))
    h, stem_cache = _lin(store, skey[0], skey[1], x, vec)
    outs = [nk.check_finite(h, "stem")]
    block_tapes = []
    for k, (block, plan) in enumerate(zip(genome.blocks, plans)):
        ins = (outs[k - 1] if k >= 1 else outs[0], outs[k])
        nodes: list = [None] * OUTPUT
        pre = []
        for j in (0, 1):
            z, lc = _lin(store, ParamKey(k, j, -1, 0, "pre.w"), ParamKey(k, j, -1, 0, "pre.b"), ins[j], vec, plan.strides[j])
            a, ac = nk.activation_forward("relu", z)
            nodes[j] = a
            pre.append((lc, ac))
        edges = []
        for dst in HIDDEN:
            acc = None
            for src in range(dst):
                code = block.codes[dst * 7 + src]
                if not code:
                    continue
                spec = opset[code]
                params = None
                if spec.parametric:
                    params = {
                        "w": store[ParamKey(k, dst, src, code, "edge.w")],
                        "b": store[ParamKey(k, dst, src, code, "edge.b")],
                    }
                y, c = nk.op_forward(spec, nodes[src], params)
                edges.append((dst, src, code, c))
                acc = y if acc is None else acc + y
            nodes[dst] = acc
        cat = np.concatenate([nodes[i] for i in HIDDEN], axis=-1)
        out, proj_cache = _lin(
            store, ParamKey(k, OUTPUT, -1, 0, "proj.w"), ParamKey(k, OUTPUT, -1, 0, "proj.b"), cat, vec
        )
        outs.append(nk.check_finite(out, f"block {k}"))
        block_tapes.append((pre, edges, proj_cache, plan.width))
    last = outs[-1]
    pooled = last if vec else last.mean(axis=(1, 2))
    ckey = list(classifier_keys(genome.skeleton, widths))
    logits, cls_cache = nk.dense_forward(pooled, store[ckey[0]], store[ckey[1]])
    nk.check_finite(logits, "classifier")
    return logits, Tape(genome, (skey, stem_cache), block_tapes, (ckey, cls_cache, last.shape))


def backward(tape: Tape, glogits: np.ndarray, widths: Widths, opset: OpSet) -> dict[ParamKey, np.ndarray]:
    """Gradients for exactly the parameters the taped path used."""
    vec = widths.mode == "vector"
    grads: dict[ParamKey, np.ndarray] = {}
    ckey, cls_cache, last_shape = tape.head
    gpool, gw, gb = nk.dense_backward(glogits, cls_cache)
    grads[ckey[0]], grads[ckey[1]] = gw, gb
    B = len(tape.blocks)
    gouts: list = [None] * (B + 1)
    if vec:
        gouts[B] = gpool
    else:
        hw = last_shape[1] * last_shape[2]
        gouts[B] = np.broadcast_to(gpool[:, None, None, :] / hw, last_shape).astype(gpool.dtype)

    def add(i, g):
        gouts[i] = g if gouts[i] is None else gouts[i] + g

    for k in range(B - 1, -1, -1):
        pre, edges, proj_cache, width = tape.blocks[k]
        if gouts[k + 1] is None:
            continue  # no signal reaches this block's output
        gcat, gw, gb = _lin_back(gouts[k + 1], proj_cache, vec)
        grads[ParamKey(k, OUTPUT, -1, 0, "proj.w")] = gw
        grads[ParamKey(k, OUTPUT, -1, 0, "proj.b")] = gb
        gnodes: list = [None] * OUTPUT
        for i, dst in enumerate(HIDDEN):
            gnodes[dst] = gcat[..., i * width : (i + 1) * width]
        for dst, src, code, cache in reversed(edges):
            spec = opset[code]
            if spec.kind == "zero":
                continue
            gx, gp = nk.op_backward(spec, gnodes[dst], cache)
            for role, g in gp.items():
                grads[ParamKey(k, dst, src, code, f"edge.{role}")] = g
            gnodes[src] = gx if gnodes[src] is None else gnodes[src] + gx
        for j in (1, 0):
            g = gnodes[j]
            if g is None:
                continue
            lc, ac = pre[j]
            gz = nk.activation_backward("relu", g, ac)
            gx, gw, gb = _lin_back(gz, lc, vec)
            grads[ParamKey(k, j, -1, 0, "pre.w")] = gw
            grads[ParamKey(k, j, -1, 0, "pre.b")] = gb
            add(k if j == 1 else max(k - 1, 0), gx)
    skey, stem_cache = tape.stem
    if gouts[0] is None:
        return grads
    _, gw, gb = _lin_back(gouts[0], stem_cache, vec)
    grads[skey[0]], grads[skey[1]] = gw, gb
    return grads


def predict(genome: NetworkGenome, store: ParamStore, x: np.ndarray, widths: Widths, opset: OpSet) -> np.ndarray:
    logits, _ = forward(genome, store, x, widths, opset)
    return logits.argmax(axis=1)
