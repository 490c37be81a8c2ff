#!/usr/bin/env python3
import logging
import sys
from functools import wraps

import click
from dotenv import load_dotenv

from src.modules.pipeline.commands import cmd_evaluate, cmd_plan, cmd_predict, cmd_simulate, cmd_train
from src.modules.pipeline.config import load_scenario
from src.modules.utils.errors import GateFailure, GkaeError
from src.modules.utils.log import setup_logging

logger = logging.getLogger("pipeline")

EXIT_ERROR = 1
EXIT_GATE = 2


def parse_values(text, cast=int):
    """Accept "1..8" (inclusive integer range) or a comma list such as "2,5,10,20"."""
    if text is None:
        return None
    text = text.strip()
    try:
        if ".." in text:
            low, high = text.split("..", 1)
            return list(range(int(low), int(high) + 1))
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter(f"cannot parse {text!r} as a range or list") from e


def exit_codes(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GateFailure as e:
            click.echo(f"FAILED gates: {', '.join(e.gates)}", err=True)
            sys.exit(EXIT_GATE)
        except (GkaeError, OSError) as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_ERROR)
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Scenario JSON file; defaults are used when omitted.")
@click.option("--seed", type=int, default=None, help="Seed for the simulation and training.")
@click.option("--output", "output_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for every artifact.")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
@click.pass_context
def cli(ctx, config_path, seed, output_dir, log_level):
    """UAV swarm prediction and covert ground power planning."""
    load_dotenv()
    setup_logging(log_level)
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, seed=seed, output_dir=output_dir)


def _scenario(ctx):
    return load_scenario(ctx.obj["config_path"], seed=ctx.obj["seed"], output_dir=ctx.obj["output_dir"])


@cli.command()
@click.pass_context
@exit_codes
def simulate(ctx):
    """Fly the swarm and write the trajectory and graph dataset."""
    result = cmd_simulate(_scenario(ctx))
    click.echo(f"Simulated {result['snapshots']} snapshots (seed={result['seed']}) -> {result['dataset']}")


@cli.command()
@click.option("--sweep-b", default=None, help='Latent sizes to train, e.g. "1..8".')
@click.pass_context
@exit_codes
def train(ctx, sweep_b):
    """Train the GKAE on the simulated dataset."""
    for row in cmd_train(_scenario(ctx), sweep_b=parse_values(sweep_b)):
        eps = ", ".join(f"{k}={v:.4g}" for k, v in row.items() if k.startswith("eps_pred"))
        click.echo(f"b={row['b']}: final loss {row['final_loss']:.6g} ({row['wall_clock_seconds']:.1f}s) {eps}")


@cli.command()
@click.option("-p", "--horizon", type=int, default=None, help="Rollout horizon p.")
@click.option("-b", "--latent", type=int, default=None, help="Use the checkpoint from a b sweep.")
@click.pass_context
@exit_codes
def predict(ctx, horizon, latent):
    """Roll the trained model forward on held-out data."""
    result = cmd_predict(_scenario(ctx), p=horizon, b=latent)
    click.echo(f"p={result['p']}: eps_pred = {result['eps_pred']:.6g} ({result['rows']} rows)")


@cli.command()
@click.option("--vary-n", default=None, help='Ground node counts, e.g. "10,15,20,25".')
@click.option("--vary-c", default=None, help='Minimum link counts, e.g. "1..8".')
@click.option("--vary-snr", default=None, help='SNR thresholds in dB, e.g. "0,5,10,15".')
@click.pass_context
@exit_codes
def plan(ctx, vary_n, vary_c, vary_snr):
    """Plan the uniform ground transmit power against the predicted swarm."""
    result = cmd_plan(
        _scenario(ctx),
        vary_n=parse_values(vary_n),
        vary_c=parse_values(vary_c),
        vary_snr=parse_values(vary_snr, cast=float),
    )
    click.echo(
        f"feasible rate {result['feasible_rate']:.3f}, max received {result['max_received_W']:.4g} W, "
        f"min margin {result['min_margin']:.4g}, components {result['components']}"
    )


@cli.command()
@click.option("-b", "--latent", type=int, default=None, help="Use the checkpoint from a b sweep.")
@click.pass_context
@exit_codes
def evaluate(ctx, latent):
    """Check the acceptance gates and write metrics.json."""
    metrics = cmd_evaluate(_scenario(ctx), b=latent)
    for name, ok in metrics["gates"].items():
        click.echo(f"{name}: {'ok' if ok else 'FAILED'}")


if __name__ == "__main__":
    cli(obj={})
