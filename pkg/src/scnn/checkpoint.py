"""Checkpoint directory format: manifest.json plus one blob per array.

Blobs are always little-endian float64 regardless of the training
precision, so a round trip is lossless and checkpoints reload across
precision settings.  Saving is deterministic byte-for-byte: re-running
an identical experiment overwrites a checkpoint with identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

import scnn
from scnn.network import NetworkSpec, Parameters, ShortcutIndicator, spec_from_dict, spec_to_dict

FORMAT_VERSION = 1
BLOB_SUFFIX = ".f64"


class CheckpointError(ValueError):
    """Raised when a checkpoint directory cannot be saved or loaded."""


def save_checkpoint(
    params: Parameters,
    spec: NetworkSpec,
    si: ShortcutIndicator,
    out_dir,
    iteration: int = 0,
    precision: str | None = None,
) -> Path:
    """Write ``params`` and a manifest into ``out_dir`` (created if needed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, arr in params.named_arrays():
        arrays[name] = list(arr.shape)
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        (out_dir / (name + BLOB_SUFFIX)).write_bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "network": spec_to_dict(spec),
        "si": str(si),
        "iteration": int(iteration),
        "precision": precision or np.dtype(params.output_weight.dtype).name,
        "arrays": arrays,
        "created_by": f"scnn {scnn.__version__}",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def load_checkpoint(
    ckpt_dir,
    expected_spec: NetworkSpec | None = None,
    expected_si: ShortcutIndicator | None = None,
) -> tuple[Parameters, dict]:
    """Read a checkpoint directory back into Parameters and its manifest.

    Arrays are cast to the precision recorded in the manifest, so
    evaluation before save and after load agrees exactly.  A mismatch
    against ``expected_spec``/``expected_si`` is refused.
    """
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{ckpt_dir}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {version!r}")
    spec = spec_from_dict(manifest["network"])
    si = ShortcutIndicator.from_string(manifest["si"])
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError("checkpoint network does not match the requested spec")
    if expected_si is not None and str(si) != str(expected_si):
        raise CheckpointError(
            f"checkpoint shortcut indicator {si} does not match requested {expected_si}"
        )
    dtype = np.dtype(manifest.get("precision", "float64"))

    def read(name: str) -> np.ndarray:
        path = ckpt_dir / (name + BLOB_SUFFIX)
        if not path.exists():
            raise CheckpointError(f"checkpoint blob missing: {path.name}")
        shape = tuple(manifest["arrays"][name])
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
        if flat.size != int(np.prod(shape)):
            raise CheckpointError(
                f"{path.name}: blob has {flat.size} values, manifest says {shape}"
            )
        return flat.reshape(shape).astype(dtype)

    conv_w, conv_b = [], []
    for k in range(1, spec.r + 1):
        for suffix, target in (("weight", conv_w), ("bias", conv_b)):
            name = f"conv{k}.{suffix}"
            if name not in manifest["arrays"]:
                raise CheckpointError(f"manifest missing array {name}")
            target.append(read(name))
    params = Parameters(conv_w, conv_b, read("output.weight"), read("output.bias"))
    return params, manifest
