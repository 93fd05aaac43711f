#!/usr/bin/env python3
# Copyright 2026 The commsched Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regenerates data/profiles/*.json from the published layer shapes.

Parameter counts follow the torchvision definitions (conv weights + biases,
batch-norm scale/shift folded into the owning layer). Compute times are
FLOP-proportional at a fixed effective throughput plus a small per-layer
launch cost; BP is charged at twice the FP cost.
"""

import json
import os
import sys

BYTES_PER_PARAM = 4
EFFECTIVE_FLOPS = 8e12
LAUNCH_MS = 0.05


def conv(cin, cout, k, hout, bias=True, bn=False):
    params = cin * cout * k * k + (cout if bias else 0) + (2 * cout if bn else 0)
    flops = 2 * cin * cout * k * k * hout * hout
    return params, flops


def fc(cin, cout):
    return cin * cout + cout, 2 * cin * cout


def alexnet():
    return [
        ("conv1", *conv(3, 64, 11, 55)),
        ("conv2", *conv(64, 192, 5, 27)),
        ("conv3", *conv(192, 384, 3, 13)),
        ("conv4", *conv(384, 256, 3, 13)),
        ("conv5", *conv(256, 256, 3, 13)),
        ("fc6", *fc(256 * 6 * 6, 4096)),
        ("fc7", *fc(4096, 4096)),
        ("fc8", *fc(4096, 1000)),
    ]


def vgg16():
    cfg = [(3, 64, 224), (64, 64, 224),
           (64, 128, 112), (128, 128, 112),
           (128, 256, 56), (256, 256, 56), (256, 256, 56),
           (256, 512, 28), (512, 512, 28), (512, 512, 28),
           (512, 512, 14), (512, 512, 14), (512, 512, 14)]
    layers = [(f"conv{i + 1}", *conv(cin, cout, 3, h)) for i, (cin, cout, h) in enumerate(cfg)]
    layers += [("fc6", *fc(512 * 7 * 7, 4096)), ("fc7", *fc(4096, 4096)), ("fc8", *fc(4096, 1000))]
    return layers


def resnet50():
    layers = [("conv1", *conv(3, 64, 7, 112, bias=False, bn=True))]
    cin = 64
    for stage, (mid, blocks, hw) in enumerate([(64, 3, 56), (128, 4, 28), (256, 6, 14), (512, 3, 7)]):
        cout = mid * 4
        for b in range(blocks):
            parts = [conv(cin, mid, 1, hw if (b > 0 or stage == 0) else hw, bias=False, bn=True),
                     conv(mid, mid, 3, hw, bias=False, bn=True),
                     conv(mid, cout, 1, hw, bias=False, bn=True)]
            if b == 0:
                parts.append(conv(cin, cout, 1, hw, bias=False, bn=True))
            layers.append((f"layer{stage + 1}.{b}",
                           sum(p for p, _ in parts), sum(f for _, f in parts)))
            cin = cout
    layers.append(("fc", *fc(2048, 1000)))
    return layers


def to_profile(name, batch, layers):
    out = []
    for _, params, flops in layers:
        fp_ms = flops * batch / EFFECTIVE_FLOPS * 1e3 + LAUNCH_MS
        out.append({"param_bytes": params * BYTES_PER_PARAM,
                    "fp_time_ms": round(fp_ms, 4),
                    "bp_time_ms": round(2 * fp_ms, 4)})
    return {"name": name, "batch_size": batch, "layers": out}


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "profiles")
    for name, batch, layers in [("alexnet", 128, alexnet()), ("vgg16", 32, vgg16()), ("resnet50", 64, resnet50())]:
        total = sum(p for _, p, _ in layers)
        print(f"{name}: {len(layers)} layers, {total} params, largest {max(p for _, p, _ in layers) * 4 / 1e6:.1f} MB")
        with open(os.path.join(root, f"{name}.json"), "w") as f:
            json.dump(to_profile(name, batch, layers), f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    main()
