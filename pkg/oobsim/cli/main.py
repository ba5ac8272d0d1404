"""
CLI interface for oobsim.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

import click
from dotenv import load_dotenv, find_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from oobsim.core.decoder import decode_session
from oobsim.core.encoder import frame_count
from oobsim.core.errors import (BatchAborted, ClusterInvalid, ConfigError,
                                DetectionIncomplete, MalformedMessage)
from oobsim.core.framestore import read_frames
from oobsim.core.harness import (attack_experiment, power_estimate, report_table,
                                 simulate as run_simulation, timing_estimate,
                                 write_artifacts)
from oobsim.core.sas_crypto import sas_length
from oobsim.core.taxonomy import AttackStrategy, DetectionConfig, ScenarioConfig
from oobsim.core.transcript import encode_message, read_transcript

console = Console(stderr=True)


class ConfigurationError(click.ClickException):
    """Invalid configuration or parameters."""
    exit_code = 2


class BatchAbortedError(click.ClickException):
    """The batch could not finish its SAS transmission."""
    exit_code = 3


class DetectionError(click.ClickException):
    """The decoder could not find every LED or node display."""
    exit_code = 4


def load_env():
    """Load environment variables from .env file in current directory."""
    env_file = find_dotenv(usecwd=True)
    if env_file:
        load_dotenv(env_file)
        return True
    return False


def output_dir(out: str) -> Path:
    """OOBSIM_OUT (from the environment or a .env file) wins over --out."""
    load_env()
    return Path(os.getenv("OOBSIM_OUT") or out)


def load_config(path: Optional[str], overrides: Dict[str, Any]) -> ScenarioConfig:
    """Read a JSON scenario file and apply the command-line overrides on top."""
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigurationError("Config file must hold a JSON object")
    data.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(str(e))


def echo_json(payload: Dict[str, Any]) -> None:
    click.echo(json.dumps(payload, sort_keys=True))


@click.group()
def cli():
    """oobsim - simulate secure initialization of sensor node batches."""
    pass


@cli.command()
@click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON file")
@click.option("--seed", type=int, help="Seed overriding the config file")
@click.option("--out", "-o", default="out", show_default=True, help="Output directory")
@click.option("--n", "n", type=int, help="Number of nodes")
@click.option("--k", "k", type=int, help="SAS length in bits")
@click.option("--data-leds", type=int, help="Data LEDs per node")
@click.option("--hold-ms", type=int, help="Hold time of each frame in ms")
def simulate(config_path: Optional[str], seed: Optional[int], out: str, n: Optional[int],
             k: Optional[int], data_leds: Optional[int], hold_ms: Optional[int]):
    """Run one initialization batch and write its artifacts."""
    config = load_config(config_path, {
        "seed": seed, "n": n, "k": k, "data_leds": data_leds, "hold_time_ms": hold_ms,
    })
    target = output_dir(out)
    try:
        run = run_simulation(config)
    except BatchAborted as e:
        console.print(f"[red]Error:[/] {e}")
        raise BatchAbortedError(str(e))
    except ConfigError as e:
        raise ConfigurationError(str(e))

    paths = write_artifacts(run, target)
    report = run.report
    console.print(report_table(report))
    tallies = report.tallies
    border = "green" if tallies.failed == 0 else "yellow"
    console.print(Panel(
        f"[green]Passed:[/] {tallies.passed}  [red]Failed:[/] {tallies.failed}\n"
        f"[blue]Frames:[/] {report.frame_count} over {report.duration_ms} ms, "
        f"{report.attempts} attempt(s)\n"
        f"[blue]Artifacts:[/] {target}",
        title="Batch complete",
        border_style=border,
    ))
    echo_json({
        "status": report.status,
        "out": str(target),
        "passed": tallies.passed,
        "failed": tallies.failed,
        "artifacts": sorted(str(p) for p in paths.values()),
    })


@cli.command()
@click.argument("frames_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON file whose detection settings to use")
def decode(frames_dir: str, config_path: Optional[str]):
    """Decode stored frames and print one JSON line per node cluster."""
    detection = DetectionConfig()
    if config_path:
        detection = load_config(config_path, {}).detection
    try:
        frames, sidecar = read_frames(Path(frames_dir))
    except ConfigError as e:
        raise ConfigurationError(str(e))

    if len(frames) != len(sidecar.frame_kinds):
        console.print(
            f"[yellow]Warning:[/] {len(frames)} frames on disk, "
            f"schedule lists {len(sidecar.frame_kinds)}"
        )
    try:
        result = decode_session(frames, sidecar.expected_leds, detection, sidecar.k, sidecar.data_leds)
    except (DetectionIncomplete, ClusterInvalid) as e:
        console.print(f"[red]Error:[/] {e}")
        raise DetectionError(str(e))

    for reading in result.readings:
        echo_json({
            "cluster": reading.cluster,
            "center": [round(c, 2) for c in reading.center],
            "sas": reading.sas.to_hex(),
            "sync_ok": reading.sync_ok,
        })


@cli.command()
@click.option("--n", "n", default=4, show_default=True, type=int, help="Nodes per batch")
@click.option("--k", "k", default=8, show_default=True, type=int, help="SAS length in bits")
@click.option("--trials", default=10_000, show_default=True, type=int, help="Monte Carlo trials")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--strategy", default=AttackStrategy.RANDOM_GUESS.value, show_default=True,
              type=click.Choice([s.value for s in AttackStrategy]), help="How the adversary picks R_B")
def attack(n: int, k: int, trials: int, seed: int, strategy: str):
    """Estimate the success rate of a wireless man-in-the-middle."""
    try:
        result = attack_experiment(n, k, trials, AttackStrategy(strategy), seed)
    except ConfigError as e:
        raise ConfigurationError(str(e))

    table = Table(title="Attack experiment")
    table.add_column("Trials")
    table.add_column("Successes")
    table.add_column("Rate")
    table.add_column("99% CI")
    table.add_column("Bound n/2^k")
    table.add_row(
        str(result.trials),
        str(result.successes),
        f"{result.rate:.6f}",
        f"[{result.ci_low:.6f}, {result.ci_high:.6f}]",
        f"{result.bound:.6f}",
    )
    console.print(table)
    echo_json(result.to_dict())


@cli.command()
@click.option("--k", "k", default=20, show_default=True, type=int, help="SAS length in bits")
@click.option("--data-leds", default=2, show_default=True, type=int, help="Data LEDs per node")
@click.option("--hold-ms", default=250, show_default=True, type=int, help="Hold time of each frame in ms")
@click.option("--volts", default=2.9, show_default=True, type=float)
@click.option("--amps", default=0.0022, show_default=True, type=float)
@click.option("--battery-j", default=30_780.0, show_default=True, type=float, help="Battery energy in joules")
@click.option("--n", "n", type=int, help="Batch size, to report the recommended SAS length")
def analyze(k: int, data_leds: int, hold_ms: int, volts: float, amps: float,
            battery_j: float, n: Optional[int]):
    """Transmission time and LED energy of one batch."""
    if k < 1 or data_leds < 1 or hold_ms < 1:
        raise ConfigurationError("k, data LEDs and hold time must be positive")
    if n is not None and n < 1:
        raise ConfigurationError("n must be at least 1")
    duration = timing_estimate(k, data_leds, hold_ms)
    try:
        power = power_estimate(volts, amps, duration / 1000, data_leds + 1, battery_j)
    except ValueError as e:
        raise ConfigurationError(str(e))

    payload = {
        "k": k,
        "N": data_leds,
        "frame_count": frame_count(k, data_leds),
        "duration_ms": duration,
        "energy_j": round(power.joules, 9),
        "battery_percent": power.battery_percent,
    }
    if n is not None:
        payload["recommended_k"] = sas_length(n)
    console.print(Panel(
        f"[blue]Frames:[/] {payload['frame_count']}\n"
        f"[blue]Duration:[/] {duration} ms\n"
        f"[blue]Energy:[/] {power.joules:.6f} J ({power.battery_percent:.1g}% of the battery)",
        title="Batch estimate",
        border_style="blue",
    ))
    echo_json(payload)


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def transcript(path: str):
    """Print a wireless transcript as JSON lines."""
    try:
        entries = read_transcript(Path(path))
    except MalformedMessage as e:
        raise ConfigurationError(f"Invalid transcript: {e}")
    for entry in entries:
        echo_json({
            "time_ms": entry.time_ms,
            "direction": entry.direction.value,
            "event": entry.event.value,
            "session": entry.message.session_id,
            "round": entry.message.round,
            "message": encode_message(entry.message).hex(),
        })


if __name__ == "__main__":
    cli()
