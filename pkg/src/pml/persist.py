"""Model checkpointing as a single .npz archive (arrays + config text)."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig, parse_config
from .errors import DataError
from .nn import ClassifierHead, DenseLayer, DenseNet
from .trainer import PmlModel


def _pack_net(prefix: str, net: DenseNet, out: dict) -> None:
    out[f"{prefix}_depth"] = np.array(len(net.layers))
    for i, layer in enumerate(net.layers):
        out[f"{prefix}_w_{i}"] = layer.weight
        out[f"{prefix}_b_{i}"] = layer.bias
        out[f"{prefix}_act_{i}"] = np.array(layer.activation)


def _unpack_net(prefix: str, archive) -> DenseNet:
    depth = int(archive[f"{prefix}_depth"])
    layers = [
        DenseLayer(
            archive[f"{prefix}_w_{i}"],
            archive[f"{prefix}_b_{i}"],
            str(archive[f"{prefix}_act_{i}"]),
        )
        for i in range(depth)
    ]
    return DenseNet(layers)


def save_model(path, model: PmlModel, config: TrainConfig, train_class_counts: np.ndarray) -> None:
    from .config import serialize

    payload: dict = {
        "head_w": model.head.weight,
        "train_class_counts": np.asarray(train_class_counts, dtype=np.int64),
        "config_text": np.array(serialize(config)),
    }
    _pack_net("backbone", model.backbone, payload)
    _pack_net("ordinal", model.ordinal_net, payload)
    _pack_net("variational", model.variational_net, payload)
    np.savez(path, **payload)


def load_model(path) -> tuple[PmlModel, TrainConfig, np.ndarray]:
    try:
        archive = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    try:
        model = PmlModel(
            backbone=_unpack_net("backbone", archive),
            head=ClassifierHead(archive["head_w"]),
            ordinal_net=_unpack_net("ordinal", archive),
            variational_net=_unpack_net("variational", archive),
        )
        config = parse_config(str(archive["config_text"]), source=str(path))
        counts = np.asarray(archive["train_class_counts"], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"model file {path} is missing entry {exc}") from exc
    return model, config, counts
