"""Versioned checkpoint container.

A single .npz holds every state array by name (module parameters and buffers,
optimizer moments, RNG state) plus a JSON header with the version, iteration
counter and the full config echo. Writes go to a temp file in the same
directory followed by an atomic rename, so a killed writer can never leave a
loadable-but-corrupt file behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .training import TrainState, config_from_dict, config_to_dict, init_state

FORMAT_VERSION = 1


def _flatten_optimizer(opt: torch.optim.Optimizer, prefix: str, arrays: dict) -> list[dict]:
    sd = opt.state_dict()
    for pid, entry in sd["state"].items():
        for key, value in entry.items():
            name = f"{prefix}.{pid}.{key}"
            if isinstance(value, torch.Tensor):
                arrays[name] = value.detach().cpu().numpy()
            else:
                arrays[name] = np.asarray(value)
    return sd["param_groups"]


def _restore_optimizer(opt: torch.optim.Optimizer, prefix: str, arrays, groups: list[dict]):
    state: dict[int, dict] = {}
    plen = len(prefix) + 1
    for name in arrays.files:
        if not name.startswith(prefix + "."):
            continue
        pid_str, key = name[plen:].split(".", 1)
        entry = state.setdefault(int(pid_str), {})
        value = arrays[name]
        entry[key] = torch.from_numpy(np.asarray(value))
    opt.load_state_dict({"state": state, "param_groups": groups})


def save_checkpoint(path: str | Path, state: TrainState, extra: dict | None = None) -> None:
    """Atomically write the full training state to ``path``."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for mod_name, module in state.modules().items():
        for key, tensor in module.state_dict().items():
            arrays[f"mod.{mod_name}.{key}"] = tensor.detach().cpu().numpy()
    groups_d = _flatten_optimizer(state.opt_d, "opt_d", arrays)
    groups_g = _flatten_optimizer(state.opt_g, "opt_g", arrays)
    arrays["rng"] = state.rng.get_state().numpy()

    header = {
        "version": FORMAT_VERSION,
        "iteration": state.iteration,
        "config": config_to_dict(state.config),
        "opt_d_groups": groups_d,
        "opt_g_groups": groups_g,
    }
    if state.obe is not None:
        header["basis_mode"] = state.obe.basis.mode
        header["assignment"] = {
            "ordering": state.obe.assignment.ordering,
            "indices": [list(ij) for ij in state.obe.assignment.indices],
            "side": state.obe.assignment.side,
        }
    if extra:
        header["extra"] = extra
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_header(path: str | Path) -> dict:
    try:
        with np.load(path) as arrays:
            return json.loads(bytes(arrays["header"]).decode("utf-8"))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[TrainState, dict]:
    """Rebuild a TrainState from a checkpoint; returns (state, header)."""
    path = Path(path)
    try:
        arrays = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    try:
        header = json.loads(bytes(arrays["header"]).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint version {header.get('version')!r} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        config = config_from_dict(header["config"])
        state = init_state(config)
        for mod_name, module in state.modules().items():
            sd = {}
            prefix = f"mod.{mod_name}."
            for name in arrays.files:
                if name.startswith(prefix):
                    sd[name[len(prefix) :]] = torch.from_numpy(np.asarray(arrays[name]))
            module.load_state_dict(sd)
        _restore_optimizer(state.opt_d, "opt_d", arrays, header["opt_d_groups"])
        _restore_optimizer(state.opt_g, "opt_g", arrays, header["opt_g_groups"])
        state.rng.set_state(torch.from_numpy(np.asarray(arrays["rng"])))
        state.iteration = int(header["iteration"])
        return state, header
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    finally:
        arrays.close()
