#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write small PDNW1 models and forward-pass fixture bundles with PyTorch.

The Rust predictor is checked against these: each bundle carries normalized
input windows and the logits PyTorch computes for them. The models are
scaled down (input side 30, narrow convs) so the files can live in the repo;
the layer chain is the same as the full-size network.

    python3 tools/make_fixtures.py crates/core/tests/fixtures
"""

import json
import struct
import sys
from pathlib import Path

import torch
from torch import nn

MAGIC = b"PDNW1"
VERSION = 1
CONV = [  # kernel, stride, padding, pool, pool stride
    (5, 1, 2, 3, 3),
    (3, 1, 1, 2, 2),
    (3, 1, 1, 2, 2),
    (3, 1, 1, 2, 2),
]


class Net(nn.Module):
    def __init__(self, in_ch, widths, side, hidden, classes):
        super().__init__()
        layers = []
        ch = in_ch
        for w, (k, s, p, pool, ps) in zip(widths, CONV):
            layers += [nn.Conv2d(ch, w, k, s, p), nn.ReLU(), nn.MaxPool2d(pool, ps)]
            ch = w
            side = ((side + 2 * p - k) // s + 1 - pool) // ps + 1
        self.features = nn.Sequential(*layers)
        self.fc1 = nn.Linear(ch * side * side, hidden)
        self.fc2 = nn.Linear(hidden, classes)

    def forward(self, x):
        x = self.features(x).flatten(1)
        return self.fc2(torch.relu(self.fc1(x)))


def record(name, kind, tensor, bias=None):
    t = tensor.detach().to(torch.float32).contiguous()
    out = struct.pack("<I", len(name)) + name.encode()
    out += struct.pack("<BB", kind, t.dim())
    out += b"".join(struct.pack("<I", d) for d in t.shape)
    out += t.numpy().astype("<f4").tobytes()
    if bias is not None:
        out += bias.detach().to(torch.float32).numpy().astype("<f4").tobytes()
    return out


def container(meta, records):
    text = json.dumps(meta).encode()
    head = MAGIC + struct.pack("<H", VERSION) + struct.pack("<I", len(text)) + text
    return head + struct.pack("<I", len(records)) + b"".join(records)


def export(net, meta):
    recs = []
    convs = [m for m in net.features if isinstance(m, nn.Conv2d)]
    for i, c in enumerate(convs):
        recs.append(record(f"conv{i + 1}", 0, c.weight, c.bias))
    recs.append(record("fc1", 1, net.fc1.weight, net.fc1.bias))
    recs.append(record("fc2", 1, net.fc2.weight, net.fc2.bias))
    return container(meta, recs)


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(20240611)
    side, classes, count = 30, 9, 24
    for stage, ch in (("floorplan", 4), ("placement", 5)):
        net = Net(ch, (8, 16, 16, 16), side, 32, classes).eval()
        mean = torch.randn(ch).tolist()
        std = (torch.rand(ch) + 0.5).tolist()
        meta = {
            "stage": stage,
            "channels": ch,
            "classes": classes,
            "input_side": side,
            "norm": {"mean": mean, "std": std, "degenerate": [False] * ch},
            "conv": [
                {"stride": s, "padding": p, "pool": pool, "pool_stride": ps}
                for (_, s, p, pool, ps) in CONV
            ],
            "technology": "fixture",
            "provenance": "tools/make_fixtures.py seed 20240611",
        }
        (out / f"{stage}_model.pdnw").write_bytes(export(net, meta))
        xs = torch.randn(count, ch, side, side)
        with torch.no_grad():
            ys = net(xs)
        recs = []
        for i in range(count):
            recs.append(record(f"input/{i}", 2, xs[i]))
            recs.append(record(f"logits/{i}", 2, ys[i]))
        fmeta = {"kind": "fixtures", "stage": stage, "count": count}
        (out / f"{stage}_fixtures.pdnw").write_bytes(container(fmeta, recs))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures")
