"""
Sample store checkpoint files.

A checkpoint is a NumPy .npz container (no pickled objects) with:

    magic            "GPSTRUCT-SAMPLES"
    version          format version (FORMAT_VERSION)
    meta             JSON: thin, store metadata, kernel family and jitter
    stamps           int64   (n,)
    samples          float64 (n, total)
    sample_h_p, sample_gamma, sample_log_lik   float64 (n,)
    trace_iteration, trace_h_p, trace_gamma, trace_accepted   hyper trace
    final_f          float64 (total,)
    final            JSON: log_lik, iteration, h_p, gamma, hyper counters
    rng_state        JSON: bit generator state

Files are written to a temporary sibling and moved into place, so a reader
never sees a partially written checkpoint.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CheckpointError
from .kernels import KernelConfig
from .sampler import HyperRecord, SampleStore, SamplerState, restore_rng

MAGIC = "GPSTRUCT-SAMPLES"
FORMAT_VERSION = 1


def _payload(store: SampleStore) -> dict:
    state = store.final_state
    if state is None:
        raise CheckpointError("store has no final state to checkpoint")
    total = state.f.size
    base = state.config
    configs = store.sample_configs
    trace = store.hyper_trace
    return {
        "magic": np.array(MAGIC),
        "version": np.array(FORMAT_VERSION),
        "meta": np.array(json.dumps({
            "thin": store.thin,
            "metadata": store.metadata,
            "input_kernel": base.input_kernel.value,
            "jitter": base.jitter,
        }, sort_keys=True)),
        "stamps": np.array(store.stamps, dtype=np.int64),
        "samples": (np.vstack(store.samples) if store.samples else np.empty((0, total))),
        "sample_h_p": np.array([c.h_p for c in configs], dtype=np.float64),
        "sample_gamma": np.array([c.gamma for c in configs], dtype=np.float64),
        "sample_log_lik": np.array(store.sample_log_liks, dtype=np.float64),
        "trace_iteration": np.array([r.iteration for r in trace], dtype=np.int64),
        "trace_h_p": np.array([r.h_p for r in trace], dtype=np.float64),
        "trace_gamma": np.array([r.gamma for r in trace], dtype=np.float64),
        "trace_accepted": np.array([r.accepted for r in trace], dtype=bool),
        "final_f": state.f,
        "final": np.array(json.dumps({
            "log_lik": state.log_lik,
            "iteration": state.iteration,
            "h_p": base.h_p,
            "gamma": base.gamma,
            "hyper_attempts": state.hyper_attempts,
            "hyper_accepts": state.hyper_accepts,
        })),
        "rng_state": np.array(json.dumps(state.rng_state)),
    }


def save_store(store: SampleStore, path: Union[str, Path]) -> Path:
    """Write the store atomically; returns the final path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload(store)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def load_store(path: Union[str, Path]) -> SampleStore:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"sample store not found: {path}", code="missing-path")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read sample store {path}: {e}")

    if "magic" not in arrays or str(arrays["magic"]) != MAGIC:
        raise CheckpointError(f"{path} is not a gpstruct sample store")
    version = int(arrays["version"])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has store format version {version}, expected {FORMAT_VERSION}",
            code="version-mismatch",
        )

    try:
        meta = json.loads(str(arrays["meta"]))
        final = json.loads(str(arrays["final"]))
        rng_state = json.loads(str(arrays["rng_state"]))
        base = KernelConfig(
            input_kernel=meta["input_kernel"],
            gamma=final["gamma"],
            h_p=final["h_p"],
            jitter=meta["jitter"],
        )
        configs = [
            base.replace(h_p=float(h), gamma=float(g))
            for h, g in zip(arrays["sample_h_p"], arrays["sample_gamma"])
        ]
        state = SamplerState(
            f=arrays["final_f"].astype(np.float64),
            config=base,
            log_lik=float(final["log_lik"]),
            iteration=int(final["iteration"]),
            rng=restore_rng(rng_state),
            hyper_attempts=int(final["hyper_attempts"]),
            hyper_accepts=int(final["hyper_accepts"]),
        )
        trace = [
            HyperRecord(int(i), float(h), float(g), bool(a))
            for i, h, g, a in zip(
                arrays["trace_iteration"], arrays["trace_h_p"],
                arrays["trace_gamma"], arrays["trace_accepted"],
            )
        ]
        return SampleStore(
            thin=int(meta["thin"]),
            stamps=[int(s) for s in arrays["stamps"]],
            samples=[row.copy() for row in arrays["samples"]],
            sample_configs=configs,
            sample_log_liks=[float(v) for v in arrays["sample_log_lik"]],
            hyper_trace=trace,
            final_state=state,
            metadata=meta["metadata"],
        )
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"corrupt sample store {path}: {e}")
