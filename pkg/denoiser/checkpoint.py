import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from config.config import PARAMS_BLOB, PARAMS_MANIFEST, TRAINER_STATE, VOCAB_FILE
from config.interfaces import CheckpointError
from config.sections import RunConfig
from denoiser.model import Denoiser, build_denoiser
from textcodec.vocab import Vocab

logger = logging.getLogger("diffcap.checkpoint")

BLOB_DTYPE = "<f4"


def save_params(model: torch.nn.Module, directory: Path, meta: dict = None):
    """
    Write every named tensor as little-endian float32 into one blob, plus a JSON manifest.

    Args:
        model: module whose state_dict is stored
        directory: checkpoint directory, created if missing
        meta: extra JSON-serialisable fields stored next to the tensor table
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    tensors = []
    offset = 0
    with open(directory / PARAMS_BLOB, "wb") as blob:
        for name in sorted(state):
            array = state[name].detach().cpu().numpy().astype(BLOB_DTYPE)
            blob.write(array.tobytes(order="C"))
            tensors.append({"name": name, "shape": list(array.shape), "offset": offset})
            offset += array.nbytes
    manifest = {"dtype": BLOB_DTYPE, "size": offset, "tensors": tensors, "meta": meta or {}}
    (directory / PARAMS_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def read_manifest(directory: Path) -> dict:
    try:
        return json.loads((Path(directory) / PARAMS_MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint manifest in {directory}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint manifest in {directory}: {e}")


def load_params(model: torch.nn.Module, directory: Path) -> dict:
    """Fill model parameters from a blob written by save_params; returns the manifest."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        raw = (directory / PARAMS_BLOB).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no parameter blob in {directory}")
    if len(raw) != manifest["size"]:
        raise CheckpointError(f"parameter blob has {len(raw)} bytes, manifest says {manifest['size']}")

    state = model.state_dict()
    loaded = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in state:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        array = np.frombuffer(raw, dtype=BLOB_DTYPE, count=count, offset=entry["offset"]).reshape(entry["shape"])
        if tuple(array.shape) != tuple(state[name].shape):
            raise CheckpointError(f"shape mismatch for {name}: {array.shape} vs {tuple(state[name].shape)}")
        loaded[name] = torch.from_numpy(array.copy()).to(dtype=state[name].dtype)
    missing = sorted(set(state) - set(loaded))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {missing}")
    model.load_state_dict(loaded)
    return manifest


def save_checkpoint(directory: Path, model: Denoiser, config: RunConfig, vocab: Vocab,
                    trainer_state: Optional[dict] = None, meta: dict = None):
    directory = Path(directory)
    save_params(model, directory, meta={"config": config.model_dump(mode="json"), **(meta or {})})
    vocab.save(directory / VOCAB_FILE)
    if trainer_state is not None:
        torch.save(trainer_state, directory / TRAINER_STATE)
    logger.debug(f"Saved checkpoint to {directory}")


def load_checkpoint(directory: Path) -> tuple[Denoiser, RunConfig, Vocab, dict]:
    """
    Rebuild the denoiser described by a checkpoint directory.

    Returns:
        tuple: (model, run config, vocab, manifest meta)
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    meta = manifest.get("meta", {})
    try:
        config = RunConfig.model_validate(meta["config"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint config unreadable: {e}")
    vocab = Vocab.load(directory / VOCAB_FILE)
    use_text = config.guidance.enabled and config.guidance.use_text
    model = build_denoiser(config.model, config.embedding, use_text=use_text)
    load_params(model, directory)
    model.eval()
    return model, config, vocab, meta


def load_trainer_state(directory: Path) -> Optional[dict]:
    path = Path(directory) / TRAINER_STATE
    if not path.exists():
        return None
    return torch.load(path, weights_only=False)
