#!/usr/bin/env python3
"""Convert a torchvision VGG19 state dict (.pth) to an NSTW1 weight file.

    python3 tools/convert_vgg19.py vgg19-dcbb9e9d.pth vgg19.nstw

Only the convolutions up to conv5_1 are kept. Preprocessing is torchvision's
(RGB in [0,1], ImageNet mean/std).
"""

import argparse
import struct

import numpy as np
import torch

NAMES = [
    "conv1_1", "conv1_2",
    "conv2_1", "conv2_2",
    "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4",
    "conv5_1",
]

F32, F64 = 1, 2


def record(out, name, dtype, array):
    array = np.ascontiguousarray(array, dtype="<f4" if dtype == F32 else "<f8")
    encoded = name.encode()
    out.write(struct.pack("<I", len(encoded)))
    out.write(encoded)
    out.write(struct.pack("<BI", dtype, array.ndim))
    out.write(struct.pack("<%dI" % array.ndim, *array.shape))
    out.write(array.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("state_dict")
    ap.add_argument("output")
    args = ap.parse_args()

    state = torch.load(args.state_dict, map_location="cpu")
    if "state_dict" in state:
        state = state["state_dict"]
    convs = sorted(
        (k for k, v in state.items() if k.startswith("features.") and k.endswith(".weight") and v.dim() == 4),
        key=lambda k: int(k.split(".")[1]),
    )
    if len(convs) < len(NAMES):
        raise SystemExit("expected at least %d conv layers, found %d" % (len(NAMES), len(convs)))

    pre = np.array([1.0, 0.485, 0.456, 0.406, 0.229, 0.224, 0.225, 0.0])
    with open(args.output, "wb") as out:
        out.write(b"NSTW1")
        out.write(struct.pack("<I", 1 + 2 * len(NAMES)))
        record(out, "__preprocess__", F64, pre)
        for name, key in zip(NAMES, convs):
            record(out, name + ".weight", F32, state[key].numpy())
            record(out, name + ".bias", F32, state[key[: -len("weight")] + "bias"].numpy())


if __name__ == "__main__":
    main()
