"""
Run Configuration

This module provides the `RunConfig` class holding every setting of a run and the
helpers loading it from a YAML file. Values are resolved with the precedence
flags > config file > defaults.
"""

import os
from pathlib import Path
from typing import Annotated, Any, Literal, Mapping, Optional, Union

from envyaml import EnvYAML
from pydantic import Field, field_validator, model_validator

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel
from equity_collectivity.corr import REFRESH_EVERY, TAU
from equity_collectivity.errors import UsageError
from equity_collectivity.ingest import DROP_FRACTION, GAP_LIMIT
from equity_collectivity.netdiag import BASELINE_DRAWS
from equity_collectivity.parallel import MAX_SEED
from equity_collectivity.sampler import DRAWS, M_RANGE, N_RANGE, Cell
from equity_collectivity.synth import SynthConfig

logger = get_logger(__name__)

RANGE_TYPE = Annotated[
    tuple[int, int], Field(description="Inclusive range, written 'a:b' or [a, b]")
]


def parse_range(value: Union[str, Any]) -> tuple[int, int]:
    """Inclusive integer range from `"a:b"`, `[a, b]` or `(a, b)`.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.config import parse_range
        parse_range("2:10"), parse_range([2, 9])

    """
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ValueError(f"Range '{value}' must be written as 'a:b'")
        try:
            lo, hi = (int(part) for part in parts)
        except ValueError:
            raise ValueError(f"Range '{value}' has non-integer bounds") from None
    else:
        try:
            lo, hi = value
        except (TypeError, ValueError):
            raise ValueError(f"Range {value!r} must hold two bounds") from None
        lo, hi = int(lo), int(hi)
    if lo < 1 or lo > hi:
        raise ValueError(f"Range {lo}:{hi} is empty or has bounds below 1")
    return lo, hi


class RunConfig(CollectivityBaseModel):
    """Settings of a run: inputs, window and grid parameters, seed and outputs.

    Either a pair of input files (`prices` and `sectors`) or a synthetic market
    (`synth`) feeds the run. When neither is given a default synthetic market seeded
    with the master seed is generated.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.config import RunConfig
        config = RunConfig(m_range="2:3", n_range="2:3", draws=10, out="run")
        config.m_range, config.path_end

    """

    model_type: Literal["run", "RUN"] = Field(
        default="run", description="Model type discriminator"
    )
    prices: Optional[Path] = Field(default=None, description="Price CSV")
    sectors: Optional[Path] = Field(default=None, description="Sector map CSV")
    synth: Optional[SynthConfig] = Field(
        default=None, description="Synthetic market replacing the input files"
    )
    tau: int = Field(default=TAU, ge=2, description="Rolling window length")
    m_range: RANGE_TYPE = Field(default=M_RANGE)
    n_range: RANGE_TYPE = Field(default=N_RANGE)
    draws: int = Field(default=DRAWS, ge=1, description="Portfolio draws per cell D")
    seed: int = Field(default=0, ge=0, le=MAX_SEED, description="Master seed")
    out: Path = Field(default=Path("run"), description="Run directory")
    zero_diagonal: bool = Field(
        default=False, description="Remove self-loops from the correlation graph"
    )
    debug_dumps: bool = Field(
        default=False, description="Dump every window correlation matrix"
    )
    threads: int = Field(default=1, ge=1, description="Worker pool width")
    refresh_every: int = Field(
        default=REFRESH_EVERY,
        ge=1,
        description="Windows between full recomputations of the rolling sums",
    )
    baseline_draws: int = Field(
        default=BASELINE_DRAWS,
        ge=0,
        description="Random allocations of the modularity baseline, 0 disables it",
    )
    gap_limit: int = Field(
        default=GAP_LIMIT, ge=0, description="Longest forward-filled gap"
    )
    drop_fraction: float = Field(
        default=DROP_FRACTION,
        ge=0.0,
        le=1.0,
        description="Largest missing fraction of a kept ticker",
    )
    strict: bool = Field(
        default=False, description="Raise instead of dropping tickers while cleaning"
    )
    cluster_k: list[int] = Field(
        default_factory=lambda: [4], description="Dendrogram cut levels"
    )
    cluster_m_range: RANGE_TYPE = Field(default=(2, 9))
    cluster_n_range: RANGE_TYPE = Field(default=(2, 9))
    greedy_start: Optional[Cell] = Field(
        default=None, description="First greedy cell, lower grid corner if unset"
    )
    greedy_end: Optional[Cell] = Field(
        default=None, description="Last greedy cell, upper grid corner if unset"
    )
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="Log level"
    )

    @field_validator(
        "m_range", "n_range", "cluster_m_range", "cluster_n_range", mode="before"
    )
    @classmethod
    def ranges(cls, v):
        return parse_range(v)

    @field_validator("greedy_start", "greedy_end", mode="before")
    @classmethod
    def cells(cls, v):
        if isinstance(v, str):
            parts = v.replace(":", ",").split(",")
            if len(parts) != 2:
                raise ValueError(f"Cell '{v}' must be written as 'm,n'")
            return tuple(int(part) for part in parts)
        return v

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_level(cls, v):
        return v.upper() if isinstance(v, str) else v

    @field_validator("cluster_k")
    @classmethod
    def positive_k(cls, v: list[int]) -> list[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("cluster_k must hold positive cut levels")
        return sorted(set(v))

    @model_validator(mode="after")
    def inputs(self) -> "RunConfig":
        if (self.prices is None) != (self.sectors is None):
            raise ValueError("prices and sectors must be given together")
        if self.prices is not None and self.synth is not None:
            raise ValueError("Give either input files or a synth config, not both")
        return self

    @property
    def path_start(self) -> Cell:
        return self.greedy_start or (self.m_range[0], self.n_range[0])

    @property
    def path_end(self) -> Cell:
        return self.greedy_end or (self.m_range[1], self.n_range[1])

    @property
    def synthetic(self) -> bool:
        return self.prices is None

    def synth_config(self) -> SynthConfig:
        """Synthetic market of the run, the default market under the master seed."""
        if self.synth is not None:
            return self.synth
        return SynthConfig(seed=self.seed)

    def check_output(self) -> Path:
        """Create the run directory and make sure it is writable."""
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise UsageError(f"Cannot create run directory: {err}", out=self.out)
        if not os.access(self.out, os.W_OK):
            raise UsageError("Run directory is not writable", out=self.out)
        return self.out


def load_config(path: Union[str, Path]) -> dict[str, Any]:
    """RunConfig values from a YAML file, `${VAR}` references are substituted.

    Raises
    ------
    UsageError
        The file is missing or holds keys that are not RunConfig fields.

    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"Config file {path} does not exist")
    try:
        env = EnvYAML(str(path))
    except ValueError as err:
        raise UsageError(f"Cannot read config file {path}: {err}") from None
    fields = RunConfig.model_fields
    # The export also holds the process environment
    top_level = [k for k in env.export() if "." not in k and k not in os.environ]
    unknown = sorted(k for k in top_level if k not in fields)
    if unknown:
        raise UsageError(f"Unknown config keys {unknown} in {path}")
    values = {key: env[key] for key in fields if key in env}
    logger.debug(f"Loaded {sorted(values)} from {path}")
    return values


def resolve_config(
    flags: Mapping[str, Any],
    path: Optional[Union[str, Path]] = None,
    synth_flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge command-line flags over the config file over the defaults.

    Parameters
    ----------
    flags: Mapping[str, Any]
        RunConfig values from the command line, None means not given.
    path: str | Path, optional
        YAML config file.
    synth_flags: Mapping[str, Any], optional
        SynthConfig values from the command line, merged over the file's `synth`.

    """
    values = load_config(path) if path is not None else {}
    values.update({k: v for k, v in flags.items() if v is not None})
    synth = {k: v for k, v in (synth_flags or {}).items() if v is not None}
    if synth:
        base = values.get("synth") or {}
        if isinstance(base, SynthConfig):
            base = base.model_dump()
        values["synth"] = {**dict(base), **synth}
    if isinstance(values.get("synth"), dict):
        values["synth"].setdefault("seed", values.get("seed", 0))
    return RunConfig(**values)
