#!/usr/bin/env python3
"""Convert published normalized VGG-19 conv weights into a .gramwt container.

Input: an .npz archive holding, for each conv layer `conv1_1` .. `conv5_4`,
two arrays:

    <layer>/kernel   float32 [out, in, 3, 3]
    <layer>/bias     float32 [out]

Most published copies of the normalized VGG-19 weights (Caffe, Lasagne
pickle, Torch t7) can be re-exported to that .npz layout with a few lines
of numpy once loaded with their native reader, e.g.:

    np.savez("vgg19_normalized.npz",
             **{f"{name}/kernel": kernel, f"{name}/bias": bias, ...})

Kernels must follow the cross-correlation convention (no flip) and expect
BGR input with the training mean pixel given below; both facts are recorded
in the container manifest so the engine treats them as data.

Container layout (all integers little-endian):

    offset 0   8 bytes   magic "GRAMWT01"
    offset 8   u32       manifest length N
    offset 12  N bytes   UTF-8 JSON manifest
    ...        payload   raw float32 tensors back to back
    last 4     u32       CRC32 (IEEE) of the payload bytes

Manifest schema:

    {
      "architecture": "vgg19_normalized",
      "mean_pixel": [104.006, 116.669, 122.679],
      "channel_order": "bgr",
      "entries": [
        {"name": "conv1_1", "kind": "kernel", "shape": [64, 3, 3, 3],
         "dtype": "f32", "byte_offset": 0, "byte_length": 6912},
        ...
      ]
    }
"""

import argparse
import json
import struct
import sys
import zlib

import numpy as np

MAGIC = b"GRAMWT01"

CHANNELS = [64, 64, 128, 128, 256, 256, 256, 256,
            512, 512, 512, 512, 512, 512, 512, 512]
BLOCK_SIZES = [2, 2, 4, 4, 4]

DEFAULT_MEAN = [104.006, 116.669, 122.679]


def layer_table():
    layers = []
    index = 0
    in_channels = 3
    for block, size in enumerate(BLOCK_SIZES, start=1):
        for i in range(1, size + 1):
            out_channels = CHANNELS[index]
            index += 1
            layers.append((f"conv{block}_{i}", in_channels, out_channels))
            in_channels = out_channels
    return layers


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("npz", help="input .npz with <layer>/kernel and <layer>/bias arrays")
    parser.add_argument("out", help="output .gramwt container path")
    parser.add_argument("--mean-pixel", type=float, nargs=3, default=DEFAULT_MEAN,
                        metavar=("C0", "C1", "C2"),
                        help="training mean pixel in container channel order")
    parser.add_argument("--channel-order", choices=["bgr", "rgb"], default="bgr")
    args = parser.parse_args()

    archive = np.load(args.npz)
    payload = bytearray()
    entries = []

    for name, in_ch, out_ch in layer_table():
        kernel = np.asarray(archive[f"{name}/kernel"], dtype="<f4")
        bias = np.asarray(archive[f"{name}/bias"], dtype="<f4")
        if kernel.shape != (out_ch, in_ch, 3, 3):
            sys.exit(f"{name}: kernel shape {kernel.shape}, expected {(out_ch, in_ch, 3, 3)}")
        if bias.shape != (out_ch,):
            sys.exit(f"{name}: bias shape {bias.shape}, expected {(out_ch,)}")
        if not (np.isfinite(kernel).all() and np.isfinite(bias).all()):
            sys.exit(f"{name}: non-finite values")
        for kind, array in (("kernel", kernel), ("bias", bias)):
            raw = array.tobytes(order="C")
            entries.append({
                "name": name,
                "kind": kind,
                "shape": list(array.shape),
                "dtype": "f32",
                "byte_offset": len(payload),
                "byte_length": len(raw),
            })
            payload.extend(raw)

    manifest = json.dumps({
        "architecture": "vgg19_normalized",
        "mean_pixel": args.mean_pixel,
        "channel_order": args.channel_order,
        "entries": entries,
    }).encode("utf-8")

    with open(args.out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))

    print(f"wrote {args.out}: {len(entries)} entries, {len(payload)} payload bytes")


if __name__ == "__main__":
    main()
