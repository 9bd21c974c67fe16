"""
Command Line Interface

Subcommands run the stages of the analysis on a price panel and write their outputs
under one run directory:

    synth          prices.csv, sectors.csv, removals.json
    collectivity   collectivity/<scope>.csv
    modularity     modularity.csv, modularity_baseline.csv
    sample         sample/mu_table.csv, sample/sigma_table.csv,
                   sample/curves/<m>_<n>.csv, sample/summary.json
    greedy         greedy_path.json, greedy_path_sigma.json
    cluster        cluster/distance_matrix.csv, cluster/dendrogram.json,
                   cluster/dendrogram.csv, cluster/clusters_k<k>.csv
    pipeline       all of the above in order

Every command finishes by writing `manifest.json`. The exit status is 0 on success,
1 for usage or configuration errors, 2 for data errors and 3 for numerical failures.
"""

import argparse
import re
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from pydantic import ValidationError

from rompy.logging import LogLevel, get_logger
from rompy.logging import config as logging_config

from equity_collectivity import __version__
from equity_collectivity.base import log_summary
from equity_collectivity.cluster import (
    average_linkage,
    cluster_table,
    cut_clusters,
    distance_matrix,
)
from equity_collectivity.config import RunConfig, resolve_config
from equity_collectivity.corr import correlation_series
from equity_collectivity.errors import CollectivityError, UsageError
from equity_collectivity.ingest import (
    PricePanel,
    ReturnPanel,
    load_price_panel,
    log_returns,
    write_price_panel,
)
from equity_collectivity.netdiag import modularity_series, random_partition_baseline
from equity_collectivity.output import (
    MANIFEST,
    checksums,
    read_json,
    write_csv,
    write_json,
)
from equity_collectivity.sampler import (
    GridSummary,
    InfeasibleCell,
    PercentileCurves,
    SamplingResult,
    cell_key,
    greedy_path,
    path_records,
    sample_grid,
)
from equity_collectivity.spectral import collectivity_series
from equity_collectivity.synth import generate_factor_market
from equity_collectivity.types import Command, GreedyMetric

logger = get_logger(__name__)

PACKAGES = ("equity-collectivity", "rompy", "numpy", "pandas", "pydantic", "joblib")
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class _Parser(argparse.ArgumentParser):
    """Argument parser exiting with the usage status instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# =====================================================================================
# Arguments
# =====================================================================================
def _common_arguments() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    run = parser.add_argument_group("run")
    run.add_argument("--config", type=Path, help="YAML file with RunConfig values")
    run.add_argument("--out", type=Path, help="Run directory")
    run.add_argument("--threads", type=int, help="Worker pool width")
    run.add_argument("--seed", type=int, help="Master seed")
    run.add_argument("--log-level", type=str.upper, choices=LEVELS)
    data = parser.add_argument_group("data")
    data.add_argument(
        "--prices", type=Path, help="Price CSV, date plus one column per ticker"
    )
    data.add_argument("--sectors", type=Path, help="Sector CSV with ticker,sector")
    data.add_argument("--gap-limit", type=int, help="Longest forward-filled gap")
    data.add_argument("--drop-fraction", type=float, help="Largest missing fraction")
    data.add_argument(
        "--strict",
        action="store_const",
        const=True,
        help="Fail instead of dropping tickers while cleaning",
    )
    synth = parser.add_argument_group("synthetic market")
    synth.add_argument("--n-sectors", type=int)
    synth.add_argument(
        "--equities-per-sector",
        type=int,
        nargs="+",
        help="One size for every sector or one size per sector",
    )
    synth.add_argument("--length", type=int, help="Number of return observations")
    synth.add_argument("--beta-market", type=float)
    synth.add_argument("--beta-sector", type=float)
    synth.add_argument("--sigma-idio", type=float)
    window = parser.add_argument_group("windows")
    window.add_argument("--tau", type=int, help="Window length")
    window.add_argument("--refresh-every", type=int, help="Rolling-sum refresh period")
    window.add_argument(
        "--zero-diagonal",
        action="store_const",
        const=True,
        help="Remove self-loops from the correlation graph",
    )
    window.add_argument(
        "--debug-dumps",
        action="store_const",
        const=True,
        help="Write every window correlation matrix under debug/",
    )
    window.add_argument(
        "--baseline-draws", type=int, help="Random allocations, 0 disables it"
    )
    grid = parser.add_argument_group("grid")
    grid.add_argument("--m-range", help="Sector counts as a:b")
    grid.add_argument("--n-range", help="Equities per sector as a:b")
    grid.add_argument("--draws", type=int, help="Portfolio draws per cell")
    grid.add_argument("--greedy-start", help="First greedy cell as m,n")
    grid.add_argument("--greedy-end", help="Last greedy cell as m,n")
    grid.add_argument("--cluster-k", type=int, nargs="+", help="Dendrogram cut levels")
    grid.add_argument("--cluster-m-range", help="Clustered sector counts as a:b")
    grid.add_argument("--cluster-n-range", help="Clustered equities per sector as a:b")
    grid.add_argument(
        "--sample-dir",
        type=Path,
        help="Sampling output read by greedy and cluster, <out>/sample by default",
    )
    return parser


HELP = {
    Command.SYNTH: "Generate a synthetic sector factor market",
    Command.COLLECTIVITY: "Normalised leading eigenvalue and uniformity per scope",
    Command.MODULARITY: "Sector modularity and its random-allocation baseline",
    Command.SAMPLE: "Monte-Carlo sampling of the (m, n) portfolio grid",
    Command.GREEDY: "Greedy size-growth paths over the sampled tables",
    Command.CLUSTER: "Average-linkage clustering of the median curves",
    Command.PIPELINE: "Every stage in order with a shared seed",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="equity-collectivity",
        description="Collective behaviour and diversification of equity markets",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(
        dest="command", required=True, parser_class=_Parser
    )
    common = _common_arguments()
    for command in Command:
        commands.add_parser(command.value, parents=[common], help=HELP[command])
    return parser


RUN_FLAGS = (
    "out",
    "threads",
    "seed",
    "log_level",
    "prices",
    "sectors",
    "gap_limit",
    "drop_fraction",
    "strict",
    "tau",
    "refresh_every",
    "zero_diagonal",
    "debug_dumps",
    "baseline_draws",
    "m_range",
    "n_range",
    "draws",
    "greedy_start",
    "greedy_end",
    "cluster_k",
    "cluster_m_range",
    "cluster_n_range",
)

SYNTH_FLAGS = (
    "n_sectors",
    "equities_per_sector",
    "length",
    "beta_market",
    "beta_sector",
    "sigma_idio",
)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """RunConfig from parsed arguments, flags > config file > defaults."""
    flags = {flag: getattr(args, flag) for flag in RUN_FLAGS}
    synth = {flag: getattr(args, flag) for flag in SYNTH_FLAGS}
    sizes = synth["equities_per_sector"]
    if sizes is not None and len(sizes) == 1:
        synth["equities_per_sector"] = sizes[0]
    return resolve_config(flags, path=args.config, synth_flags=synth)


# =====================================================================================
# Stages
# =====================================================================================
def _scope_file(scope: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", scope).strip("_") or "scope"


def stage_data(config: RunConfig) -> PricePanel:
    """Generate or load the price panel and write it to the run directory."""
    if config.synthetic:
        synth = config.synth_config()
        log_summary(
            "SYNTHETIC MARKET",
            [
                f"Sectors: {synth.n_sectors} ({synth.n_tickers} equities)",
                f"Length: {synth.length}",
                f"Loadings: market={synth.beta_market} sector={synth.beta_sector} "
                f"idiosyncratic={synth.sigma_idio}",
                f"Seed: {synth.seed}",
            ],
            logger,
        )
        panel = generate_factor_market(synth)
    else:
        panel = load_price_panel(
            config.prices,
            config.sectors,
            gap_limit=config.gap_limit,
            drop_fraction=config.drop_fraction,
            strict=config.strict,
        )
    write_price_panel(panel, config.out)
    return panel


def stage_collectivity(config: RunConfig, returns: ReturnPanel) -> None:
    log_summary(
        "COLLECTIVITY",
        [f"Window: tau={config.tau}", f"Scopes: market + {len(returns.sector_names)}"],
        logger,
    )
    if config.debug_dumps:
        for _ in correlation_series(
            returns,
            config.tau,
            refresh_every=config.refresh_every,
            dump_dir=config.out / "debug",
        ):
            pass
    series = collectivity_series(
        returns,
        tau=config.tau,
        threads=config.threads,
        refresh_every=config.refresh_every,
    )
    for scope in series:
        name = f"{_scope_file(scope.scope)}.csv"
        write_csv(scope.to_frame(), config.out / "collectivity" / name)


def stage_modularity(config: RunConfig, returns: ReturnPanel) -> None:
    log_summary(
        "MODULARITY",
        [
            f"Window: tau={config.tau}",
            f"Sectors: {len(returns.sector_names)}",
            f"Zero diagonal: {config.zero_diagonal}",
            f"Baseline draws: {config.baseline_draws}",
        ],
        logger,
    )
    q = modularity_series(
        returns,
        tau=config.tau,
        zero_diagonal=config.zero_diagonal,
        threads=config.threads,
        refresh_every=config.refresh_every,
    )
    write_csv(q.to_frame(), config.out / "modularity.csv")
    if config.baseline_draws:
        baseline = random_partition_baseline(
            returns,
            tau=config.tau,
            draws=config.baseline_draws,
            seed=config.seed,
            zero_diagonal=config.zero_diagonal,
            threads=config.threads,
            refresh_every=config.refresh_every,
        )
        write_csv(baseline.to_frame(), config.out / "modularity_baseline.csv")


def write_sampling_result(result: SamplingResult, directory: Path) -> None:
    """Emit the tables, the per-cell curves and `summary.json`."""
    summary = result.summary
    write_csv(summary.to_frame("mu"), directory / "mu_table.csv", index=True)
    write_csv(summary.to_frame("sigma"), directory / "sigma_table.csv", index=True)
    for key, curves in result.curves.items():
        write_csv(curves.to_frame(), directory / "curves" / f"{key}.csv")
    first = next(iter(result.curves.values()), None)
    write_json(
        {
            "m_values": summary.m_values,
            "n_values": summary.n_values,
            "draws": summary.draws,
            "master_seed": summary.master_seed,
            "tau": summary.tau,
            "infeasible": [c.model_dump() for c in summary.infeasible],
            "cells": sorted(result.curves),
            "end_indices": first.end_indices if first else [],
            "dates": first.dates if first else [],
        },
        directory / "summary.json",
    )


def read_sampling_result(directory: Path) -> SamplingResult:
    """Load the output of `write_sampling_result`.

    Raises
    ------
    UsageError
        The directory holds no sampling output.

    """
    meta_file = directory / "summary.json"
    if not meta_file.is_file():
        raise UsageError(f"No sampling output in {directory}, run `sample` first")
    meta = read_json(meta_file)
    summary = GridSummary.from_frames(
        pd.read_csv(directory / "mu_table.csv", index_col="m"),
        pd.read_csv(directory / "sigma_table.csv", index_col="m"),
        draws=meta["draws"],
        master_seed=meta["master_seed"],
        tau=meta["tau"],
        infeasible=[InfeasibleCell(**c) for c in meta["infeasible"]],
    )
    curves = {}
    for key in meta["cells"]:
        frame = pd.read_csv(directory / "curves" / f"{key}.csv")
        m, n = (int(part) for part in key.split("_"))
        curves[key] = PercentileCurves(
            cell=(m, n),
            end_indices=meta["end_indices"],
            dates=meta["dates"],
            p05=frame["p05"].to_numpy(),
            p50=frame["p50"].to_numpy(),
            p95=frame["p95"].to_numpy(),
        )
    logger.info(f"Read {len(curves)} cell curves from {directory}")
    return SamplingResult(curves=curves, summary=summary)


def stage_sample(config: RunConfig, returns: ReturnPanel) -> SamplingResult:
    result = sample_grid(
        returns,
        tau=config.tau,
        m_range=config.m_range,
        n_range=config.n_range,
        draws=config.draws,
        master_seed=config.seed,
        threads=config.threads,
        refresh_every=config.refresh_every,
    )
    write_sampling_result(result, config.out / "sample")
    return result


def stage_greedy(config: RunConfig, summary: GridSummary) -> None:
    start, end = config.path_start, config.path_end
    if config.greedy_end is None:
        end = summary.complete_corner(start, end)
        if end != config.path_end:
            logger.warning(
                f"Greedy path end {config.path_end} has infeasible cells, "
                f"ending at {end}"
            )
    log_summary("GREEDY PATH", [f"Start: {start}", f"End: {end}"], logger)
    for metric, name in [
        (GreedyMetric.MU, "greedy_path.json"),
        (GreedyMetric.SIGMA, "greedy_path_sigma.json"),
    ]:
        path = greedy_path(summary, start, end, metric)
        logger.info(f"Greedy {metric.value} path: {path}")
        write_json(
            {
                "metric": metric.value,
                "start": start,
                "end": end,
                "path": path_records(summary, path),
            },
            config.out / name,
        )


def stage_cluster(config: RunConfig, result: SamplingResult) -> None:
    wanted = [
        (m, n)
        for m in range(config.cluster_m_range[0], config.cluster_m_range[1] + 1)
        for n in range(config.cluster_n_range[0], config.cluster_n_range[1] + 1)
    ]
    cells = [cell for cell in wanted if cell_key(cell) in result.curves]
    if len(cells) < len(wanted):
        logger.warning(
            f"Clustering {len(cells)} of {len(wanted)} cells, the others were "
            "not sampled"
        )
    log_summary(
        "CLUSTERING",
        [f"Cells: {len(cells)}", f"Cut levels: {config.cluster_k}"],
        logger,
    )
    dm = distance_matrix(result, cells)
    dendrogram = average_linkage(dm)
    directory = config.out / "cluster"
    write_csv(dm.to_frame(), directory / "distance_matrix.csv", index=True)
    write_json(
        {
            "items": [cell_key(cell) for cell in dm.items],
            "merges": [merge.model_dump() for merge in dendrogram.merges],
        },
        directory / "dendrogram.json",
    )
    write_csv(dendrogram.to_frame(), directory / "dendrogram.csv")
    for k in config.cluster_k:
        labels = cut_clusters(dendrogram, k)
        write_csv(cluster_table(dm, labels), directory / f"clusters_k{k}.csv")


def _versions() -> dict[str, str]:
    versions = {}
    for package in PACKAGES:
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = __version__ if package == PACKAGES[0] else "unknown"
    return versions


def write_manifest(config: RunConfig, command: Command) -> Path:
    """Record the command, config, seed, package versions and file checksums."""
    return write_json(
        {
            "command": command.value,
            "config": config.model_dump(mode="json"),
            "seed": config.seed,
            "versions": _versions(),
            "checksums": checksums(config.out),
        },
        config.out / MANIFEST,
    )


# =====================================================================================
# Execution
# =====================================================================================
def execute(
    command: Command, config: RunConfig, sample_dir: Optional[Path] = None
) -> None:
    """Run command under config and write its outputs to the run directory.

    `greedy` and `cluster` read the sampling output from sample_dir, by default the
    `sample` directory of the run.

    """
    command = Command(command)
    config.check_output()
    sample_dir = sample_dir or config.out / "sample"
    if command in (Command.GREEDY, Command.CLUSTER):
        result = read_sampling_result(sample_dir)
        if command == Command.GREEDY:
            stage_greedy(config, result.summary)
        else:
            stage_cluster(config, result)
    else:
        panel = stage_data(config)
        if command != Command.SYNTH:
            returns = log_returns(panel)
            if command in (Command.COLLECTIVITY, Command.PIPELINE):
                stage_collectivity(config, returns)
            if command in (Command.MODULARITY, Command.PIPELINE):
                stage_modularity(config, returns)
            if command in (Command.SAMPLE, Command.PIPELINE):
                result = stage_sample(config, returns)
            if command == Command.PIPELINE:
                stage_greedy(config, result.summary)
                stage_cluster(config, result)
    write_manifest(config, command)
    logger.info(f"{command.value} finished, outputs in {config.out}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point, returns the process exit status."""
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        logging_config.update(level=LogLevel[config.log_level])
        execute(Command(args.command), config, args.sample_dir)
    except ValidationError as err:
        logger.error(f"Invalid configuration:\n{err}")
        return 1
    except CollectivityError as err:
        logger.error(f"{type(err).__name__}: {err}")
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
