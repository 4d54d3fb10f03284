"""
Run configuration.

Config files are flat JSON objects with dotted keys:

    {
      "data.train": "data/train.txt",
      "kernel.input_kernel": "linear",
      "chain.iterations": 2000,
      "chain.thin": 100,
      "predict.scheme": "fstar_map"
    }

CLI flags override file values. The effective config is echoed to
<output.dir>/effective_config.json (`predict` writes
effective_config_predict.json); loading either gives back an equal RunConfig.
"""

import dataclasses
import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union, get_args, get_origin

from .corpus import Corpus, median_pairwise_distance
from .errors import ConfigError
from .kernels import InputKernel, KernelConfig
from .predict import Loss, Scheme
from .sampler import ChainConfig, HyperSampling, Hyperprior

EFFECTIVE_CONFIG = "effective_config.json"
PREDICT_CONFIG = "effective_config_predict.json"


def _key(name: str, default: Any, **kwargs):
    return field(default=default, metadata={"key": name}, **kwargs)


def _coerce(key: str, value: Any, annotation: Any) -> Any:
    """Check a config value against its field type; ints widen to float."""
    options = get_args(annotation) if get_origin(annotation) is Union else (annotation,)
    if value is None and type(None) in options:
        return value
    if bool in options and isinstance(value, bool):
        return value
    if not isinstance(value, bool):
        if int in options and isinstance(value, numbers.Integral):
            return int(value)
        if float in options and isinstance(value, numbers.Real):
            return float(value)
    if str in options and isinstance(value, str):
        return value
    expected = " or ".join("null" if t is type(None) else t.__name__ for t in options)
    raise ConfigError(f"{key} must be {expected}, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    task: str = _key("task", "gpstruct")
    seed: int = _key("seed", 0)

    train_path: Optional[str] = _key("data.train", None)
    test_path: Optional[str] = _key("data.test", None)
    test_labeled: bool = _key("data.test_labeled", True)
    out_dir: str = _key("output.dir", "gpstruct_out")

    input_kernel: str = _key("kernel.input_kernel", InputKernel.LINEAR.value)
    gamma: Union[float, str] = _key("kernel.gamma", "median")
    h_p: float = _key("kernel.h_p", 1.0)
    jitter: float = _key("kernel.jitter", 1e-4)
    median_max_pairs: int = _key("kernel.median_max_pairs", 100_000)

    iterations: int = _key("chain.iterations", 10_000)
    thin: int = _key("chain.thin", 1000)
    hyper_every: int = _key("chain.hyper_every", 1000)
    burn_in_fraction: float = _key("chain.burn_in_fraction", 1.0 / 3.0)
    hyper_sampling: str = _key("chain.hyper_sampling", HyperSampling.OFF.value)
    hyper_proposal_scale: float = _key("chain.hyper_proposal_scale", 0.1)
    debug: bool = _key("chain.debug", False)

    hp_prior_shape: float = _key("hyperprior.hp_shape", 1.0)
    hp_prior_scale: float = _key("hyperprior.hp_scale", 2.0)
    hp_prior_unit: float = _key("hyperprior.hp_unit", 1e-4)
    gamma_prior_shape: float = _key("hyperprior.gamma_shape", 1.0)
    gamma_prior_scale: float = _key("hyperprior.gamma_scale", 2.0)

    scheme: str = _key("predict.scheme", Scheme.FSTAR_MAP.value)
    n_fstar: int = _key("predict.n_fstar", 1)
    loss: str = _key("predict.loss", Loss.HAMMING.value)
    predict_thin: int = _key("predict.thin", 1)
    write_marginals: bool = _key("predict.write_marginals", False)

    n_splits: int = _key("experiment.n_splits", 5)
    train_size: int = _key("experiment.train_size", 50)
    test_size: int = _key("experiment.test_size", 100)

    record_timing: bool = _key("report.record_timing", False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = _coerce(f.metadata["key"], getattr(self, f.name), f.type)
            object.__setattr__(self, f.name, value)
        try:
            InputKernel(self.input_kernel)
            HyperSampling(self.hyper_sampling)
            Scheme(self.scheme)
            Loss(self.loss)
        except ValueError as e:
            raise ConfigError(str(e))
        if isinstance(self.gamma, str):
            if self.gamma != "median":
                raise ConfigError(f"kernel.gamma must be a number or 'median', got '{self.gamma}'")
        elif not self.gamma > 0:
            raise ConfigError(f"kernel.gamma must be > 0, got {self.gamma}")
        checks = {
            "kernel.h_p": self.h_p > 0,
            "kernel.jitter": self.jitter >= 0,
            "chain.iterations": self.iterations >= 1,
            "chain.thin": self.thin >= 1,
            "chain.hyper_every": self.hyper_every >= 1,
            "chain.burn_in_fraction": 0 <= self.burn_in_fraction < 1,
            "chain.hyper_proposal_scale": self.hyper_proposal_scale > 0,
            "predict.n_fstar": self.n_fstar >= 1,
            "predict.thin": self.predict_thin >= 1,
            "experiment.n_splits": self.n_splits >= 1,
            "experiment.train_size": self.train_size >= 1,
            "experiment.test_size": self.test_size >= 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid value for {key}")

    # ==================== SERIALIZATION ====================

    def to_dict(self) -> Dict[str, Any]:
        return {f.metadata["key"]: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "RunConfig":
        by_key = {f.metadata["key"]: f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(by_key))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{by_key[k]: v for k, v in values.items()})

    def override(self, **changes) -> "RunConfig":
        """Apply CLI overrides; None means 'not given'."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def write(
        self, out_dir: Optional[Union[str, Path]] = None, filename: str = EFFECTIVE_CONFIG
    ) -> Path:
        path = Path(out_dir or self.out_dir) / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    # ==================== DERIVED CONFIGS ====================

    def kernel_config(self, train: Optional[Corpus] = None) -> KernelConfig:
        """KernelConfig with gamma resolved ('median' needs the training corpus)."""
        gamma = self.gamma
        if gamma == "median":
            if InputKernel(self.input_kernel) is InputKernel.LINEAR:
                gamma = 1.0
            elif train is None:
                raise ConfigError("kernel.gamma = 'median' needs training data")
            else:
                gamma = median_pairwise_distance(train, self.median_max_pairs, self.seed)
                if not gamma > 0:
                    raise ConfigError("median pairwise distance is 0; set kernel.gamma explicitly")
        return KernelConfig(self.input_kernel, float(gamma), self.h_p, self.jitter)

    def chain_config(self, seed: Optional[int] = None) -> ChainConfig:
        return ChainConfig(
            n_iterations=self.iterations,
            hyper_every=self.hyper_every,
            thin=self.thin,
            burn_in_fraction=self.burn_in_fraction,
            hyper_sampling=self.hyper_sampling,
            hyper_proposal_scale=self.hyper_proposal_scale,
            seed=self.seed if seed is None else seed,
            hyperprior=Hyperprior(
                self.hp_prior_shape, self.hp_prior_scale, self.hp_prior_unit,
                self.gamma_prior_shape, self.gamma_prior_scale,
            ),
            debug=self.debug,
        )


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a config file (or defaults when path is None)."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            values = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", code="missing-path")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must hold a JSON object of dotted keys")
    return RunConfig.from_dict(values)
