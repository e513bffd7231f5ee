"""Checkpoint container: a ``key = value`` text header, then raw little-endian float64 arrays.

Layout::

    VAEAC-CHECKPOINT
    version = 1
    kind = vaeac | um
    mask = <mask spec>
    best_epoch = <int>
    image_shape = <rows,cols>          (image data only)
    config.<field> = <value>
    feature.<i> = <json: name, kind, labels, mean, std>
    target = <index or empty>
    history.<i> = <json record>
    param.<group>.<i> = <comma-separated shape>
    END
    <parameter bytes in the order of the param.* lines>
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import Feature, FeatureSchema

MAGIC = "VAEAC-CHECKPOINT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _model_classes():
    from .marginalizer import UmModel
    from .model import VaeacModel

    return {"vaeac": VaeacModel, "um": UmModel}


def dumps(ckpt) -> bytes:
    model = ckpt.model
    lines = [MAGIC, f"version = {VERSION}", f"kind = {model.kind}", f"mask = {ckpt.mask}",
             f"best_epoch = {ckpt.best_epoch}"]
    if ckpt.image_shape is not None:
        lines.append(f"image_shape = {','.join(str(s) for s in ckpt.image_shape)}")
    lines += [f"config.{k} = {v}" for k, v in model.config.to_items()]
    for i, f in enumerate(model.schema.features):
        rec = {"name": f.name, "kind": f.kind, "labels": f.labels, "mean": f.mean, "std": f.std}
        lines.append(f"feature.{i} = {json.dumps(rec)}")
    target = model.schema.target
    lines.append(f"target = {'' if target is None else target}")
    lines += [f"history.{i} = {json.dumps(rec, sort_keys=True)}" for i, rec in enumerate(ckpt.history)]
    blobs = []
    for group, arrays in model.params.items():
        for i, arr in enumerate(arrays):
            lines.append(f"param.{group}.{i} = {','.join(str(s) for s in arr.shape)}")
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(blobs)


def loads(raw: bytes):
    from .model import Checkpoint

    stream = io.BytesIO(raw)
    first = stream.readline().decode("utf-8").strip()
    if first != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic line)")
    header: dict[str, str] = {}
    order: list[str] = []
    while True:
        line = stream.readline()
        if not line:
            raise CheckpointError("truncated checkpoint header (no END line)")
        text = line.decode("utf-8").rstrip("\n")
        if text == "END":
            break
        key, _, value = text.partition(" = ")
        header[key] = value
        order.append(key)
    if int(header.get("version", -1)) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")

    config = TrainConfig.from_items({k[7:]: v for k, v in header.items() if k.startswith("config.")})
    feats = []
    i = 0
    while f"feature.{i}" in header:
        feats.append(Feature(**json.loads(header[f"feature.{i}"])))
        i += 1
    target = header.get("target", "")
    schema = FeatureSchema(feats, int(target) if target else None)
    history = []
    i = 0
    while f"history.{i}" in header:
        history.append(json.loads(header[f"history.{i}"]))
        i += 1

    params: dict[str, list[np.ndarray]] = {}
    for key in order:
        if not key.startswith("param."):
            continue
        _, group, _ = key.split(".")
        shape = tuple(int(s) for s in header[key].split(",") if s)
        count = int(np.prod(shape)) if shape else 1
        buf = stream.read(8 * count)
        if len(buf) != 8 * count:
            raise CheckpointError(f"truncated parameter data for {key}")
        params.setdefault(group, []).append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
    if stream.read(1):
        raise CheckpointError("trailing bytes after parameter data")

    kind = header.get("kind")
    classes = _model_classes()
    if kind not in classes:
        raise CheckpointError(f"unknown model kind {kind!r}")
    model = classes[kind](schema, config, params)
    shape = header.get("image_shape")
    image_shape = tuple(int(s) for s in shape.split(",")) if shape else None
    return Checkpoint(model, header.get("mask", ""), int(header.get("best_epoch", -1)), history, image_shape)


def save(ckpt, path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path):
    return loads(Path(path).read_bytes())
