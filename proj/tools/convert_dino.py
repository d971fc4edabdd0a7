#!/usr/bin/env python3
"""Convert a DINO ViT checkpoint (timm naming) into a TFGU weight archive.

Expected source names and how they map, for block i:

    cls_token                 (1, 1, D)      -> cls_token            (1, D)
    pos_embed                 (1, 1+N, D)    -> pos_embed            (1+N, D)
    patch_embed.proj.weight   (D, 3, p, p)   -> patch_embed          (3*p*p, D)
    patch_embed.proj.bias     (D,)           -> patch_embed_bias     (1, D)
    blocks.i.norm1.weight/.bias              -> blocks.i.norm1.gamma/.beta   (1, D)
    blocks.i.attn.qkv.weight  (3A, D)        -> blocks.i.qkv         (D, 3A)
    blocks.i.attn.qkv.bias    (3A,)          -> blocks.i.qkv_bias    (1, 3A)
    blocks.i.attn.proj.weight (D, A)         -> blocks.i.proj        (A, D)
    blocks.i.attn.proj.bias                  -> blocks.i.proj_bias   (1, D)
    blocks.i.norm2.weight/.bias              -> blocks.i.norm2.gamma/.beta   (1, D)
    blocks.i.mlp.fc1.weight   (M, D)         -> blocks.i.fc1         (D, M)
    blocks.i.mlp.fc1.bias                    -> blocks.i.fc1_bias    (1, M)
    blocks.i.mlp.fc2.weight   (D, M)         -> blocks.i.fc2         (M, D)
    blocks.i.mlp.fc2.bias                    -> blocks.i.fc2_bias    (1, D)
    norm.weight/.bias                        -> norm.gamma/.beta     (1, D)

Linear weights are stored input-major (x @ W), hence the transposes. Patch
pixels are flattened channel, then row, then column, which matches a plain
reshape of the convolution kernel. Pair the archive with an encoder config
whose image_size, patch_size, depth, embed_dim, attn_dim, heads and mlp_dim
match the checkpoint (ViT-S/8: 224, 8, 12, 384, 384, 6, 1536).

Numerical parity with the reference implementation has not been tested.

Usage: convert_dino.py checkpoint.pth out.tfgu [--f16]
"""

import argparse
import re
import struct
import sys

import numpy as np


def map_tensor(name, value):
    """Returns (archive name, 2-D array) or None for tensors the encoder does not use."""
    if name == "cls_token":
        return name, value.reshape(1, -1)
    if name == "pos_embed":
        return name, value.reshape(value.shape[-2], value.shape[-1])
    if name == "patch_embed.proj.weight":
        return "patch_embed", value.reshape(value.shape[0], -1).T
    if name == "patch_embed.proj.bias":
        return "patch_embed_bias", value.reshape(1, -1)
    if name in ("norm.weight", "norm.bias"):
        return "norm." + ("gamma" if name.endswith("weight") else "beta"), value.reshape(1, -1)
    m = re.fullmatch(r"blocks\.(\d+)\.(norm1|norm2|attn\.qkv|attn\.proj|mlp\.fc1|mlp\.fc2)\.(weight|bias)", name)
    if not m:
        return None
    block, layer, kind = m.groups()
    prefix = f"blocks.{block}."
    if layer in ("norm1", "norm2"):
        return prefix + layer + (".gamma" if kind == "weight" else ".beta"), value.reshape(1, -1)
    short = layer.split(".")[1]
    if kind == "weight":
        return prefix + short, value.T
    return prefix + short + "_bias", value.reshape(1, -1)


def write_archive(path, tensors, f16=False):
    dtype, code = (np.float16, 1) if f16 else (np.float32, 0)
    table, payload, offset = [], [], 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=dtype).astype(np.dtype(dtype).newbyteorder("<")).tobytes()
        raw = name.encode()
        entry = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", code, arr.ndim)
        entry += b"".join(struct.pack("<Q", d) for d in arr.shape) + struct.pack("<Q", offset)
        table.append(entry)
        payload.append(data)
        offset += len(data)
    with open(path, "wb") as f:
        f.write(b"TFGU" + struct.pack("<II", 1, len(tensors)))
        f.write(b"".join(table))
        f.write(struct.pack("<Q", offset))
        f.write(b"".join(payload))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("output")
    ap.add_argument("--f16", action="store_true", help="store half-precision values")
    args = ap.parse_args(argv)

    import torch

    state = torch.load(args.checkpoint, map_location="cpu")
    for key in ("teacher", "student", "state_dict", "model"):
        if isinstance(state, dict) and key in state and isinstance(state[key], dict):
            state = state[key]
            break
    tensors, skipped = [], []
    for name, value in state.items():
        name = re.sub(r"^(module\.)?(backbone\.)?", "", name)
        mapped = map_tensor(name, value.detach().cpu().numpy().astype(np.float64))
        if mapped is None:
            skipped.append(name)
        else:
            tensors.append(mapped)
    if not tensors:
        sys.exit("no encoder tensors found in " + args.checkpoint)
    write_archive(args.output, tensors, args.f16)
    print(f"wrote {len(tensors)} tensors to {args.output}; skipped {len(skipped)}")


if __name__ == "__main__":
    main()
