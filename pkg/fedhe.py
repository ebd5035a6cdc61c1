"""Command line entry point.

    python fedhe.py run-grid --config run_configs/default_run.cfg --out-dir results
    python fedhe.py gen-data --config run_configs/default_run.cfg --out-dir data
    python fedhe.py deal-keys --config run_configs/default_run.cfg --out-dir keys
    python fedhe.py serve --config run_configs/default_run.cfg --public-key keys/public.key
    python fedhe.py client --config run_configs/default_run.cfg --client-id 0 --shard data/shard_0.csv \\
        --public-key keys/public.key --secret-key keys/secret.key
"""
from __future__ import annotations

import os
from dataclasses import replace

import click

from bfv import KeyPair, load_public_key, load_secret_key, save_public_key, save_secret_key
from errors import ConfigError, FedHEError
from fed_client import run_client
from fed_config import FederationConfig, RunMode, get_listen_addr, get_output_dir, load_config, split_address
from fed_server import serve
from federation import client_shares, load_data
from harness import ExperimentGrid, run_grid
from protocol import deal_keys
from synthetic_data import load_dataset, save_dataset


def _load(config_path: str | None, seed: int | None = None, **overrides) -> FederationConfig:
    cfg = load_config(config_path) if config_path else FederationConfig()
    changes = {key: value for key, value in overrides.items() if value is not None}
    if seed is not None:
        changes["seed"] = seed
    return replace(cfg, **changes) if changes else cfg


def _int_list(raw: str) -> tuple:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got '{raw}'") from None


def _keys_for(cfg: FederationConfig, public_key: str | None, secret_key: str | None) -> KeyPair | None:
    if not cfg.mode.encrypted:
        return None
    if not public_key or not secret_key:
        raise ConfigError(f"{cfg.mode.value} clients need --public-key and --secret-key")
    keys = KeyPair(load_public_key(public_key), load_secret_key(secret_key))
    if keys.key_pub.level != cfg.mode.level.params or keys.key_priv.level != cfg.mode.level.params:
        raise ConfigError(f"key files do not match mode {cfg.mode.value}")
    return keys


config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                             help="Run description file (key=value).")
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")


@click.group()
def cli():
    """Federated averaging over BFV-encrypted model weights."""


@cli.command("run-grid")
@config_option
@seed_option
@click.option("--out-dir", default=None, help="Output directory (default: $FEDHE_OUTPUT_DIR or 'results').")
@click.option("--clients", default="2,3,5,7", show_default=True, help="Comma-separated client counts.")
@click.option("--modes", default="PLAIN,SEC128,SEC192", show_default=True, help="Comma-separated run modes.")
@click.option("--repetitions", default=3, show_default=True, type=int)
@click.option("--rounds", default=None, type=int, help="Override rounds per federation.")
@click.option("--parallel", is_flag=True, help="Run cells concurrently; timings become non-comparable.")
@click.option("--no-baseline", is_flag=True, help="Skip the centralized baseline (baseline.csv).")
def run_grid_command(config_path, seed, out_dir, clients, modes, repetitions, rounds, parallel, no_baseline):
    try:
        cfg = _load(config_path, rounds=rounds)
        grid = ExperimentGrid(
            client_counts=_int_list(clients),
            modes=tuple(RunMode.from_name(m) for m in modes.split(",") if m.strip()),
            repetitions=repetitions,
            base_seed=cfg.seed if seed is None else seed,
            parallel=parallel,
            baseline=not no_baseline,
        )
        reports = run_grid(grid, cfg, out_dir or get_output_dir())
    except FedHEError as e:
        raise click.ClickException(str(e))
    failed = sum(1 for r in reports if r.error)
    if failed:
        click.echo(f"{failed} of {len(reports)} cells failed; see run-meta.txt", err=True)


@cli.command("gen-data")
@config_option
@seed_option
@click.option("--out-dir", default="data", show_default=True)
def gen_data_command(config_path, seed, out_dir):
    """Write train.csv, test.csv and one shard_<id>.csv per client."""
    try:
        cfg = _load(config_path, seed)
        train, test = load_data(cfg)
        save_dataset(train, os.path.join(out_dir, "train.csv"))
        save_dataset(test, os.path.join(out_dir, "test.csv"))
        for client_id, share in enumerate(client_shares(cfg, train)):
            save_dataset(share, os.path.join(out_dir, f"shard_{client_id}.csv"))
    except FedHEError as e:
        raise click.ClickException(str(e))
    click.echo(f"[fedhe] wrote {len(train)} train / {len(test)} test rows and {cfg.c} shards to {out_dir}")


@cli.command("deal-keys")
@config_option
@seed_option
@click.option("--out-dir", default="keys", show_default=True)
def deal_keys_command(config_path, seed, out_dir):
    """Generate the shared key pair; give public.key to the server, both files to clients."""
    try:
        cfg = _load(config_path)
        if not cfg.mode.encrypted:
            raise ConfigError("PLAIN mode needs no keys")
        keys = deal_keys(cfg.mode.level, cfg.effective_key_seed if seed is None else seed)
        save_public_key(keys.key_pub, os.path.join(out_dir, "public.key"))
        save_secret_key(keys.key_priv, os.path.join(out_dir, "secret.key"))
    except FedHEError as e:
        raise click.ClickException(str(e))
    click.echo(f"[fedhe] {cfg.mode.value} keys written to {out_dir}")


@cli.command("serve")
@config_option
@click.option("--listen", default=None, help="host:port (default: $FEDHE_LISTEN_ADDR or 127.0.0.1:8765).")
@click.option("--public-key", type=click.Path(exists=True, dir_okay=False), default=None)
def serve_command(config_path, listen, public_key):
    try:
        cfg = _load(config_path)
        key_pub = None
        if cfg.mode.encrypted:
            if not public_key:
                raise ConfigError(f"{cfg.mode.value} server needs --public-key")
            key_pub = load_public_key(public_key)
        host, port = split_address(listen or get_listen_addr())
        serve(cfg, key_pub, host, port)
    except FedHEError as e:
        raise click.ClickException(str(e))


@cli.command("client")
@config_option
@seed_option
@click.option("--server", "server_addr", default=None, help="host:port of the aggregation server.")
@click.option("--client-id", type=int, required=True)
@click.option("--shard", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--public-key", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--secret-key", type=click.Path(exists=True, dir_okay=False), default=None)
def client_command(config_path, seed, server_addr, client_id, shard, test_path, public_key, secret_key):
    try:
        cfg = _load(config_path)
        keys = _keys_for(cfg, public_key, secret_key)
        host, port = split_address(server_addr or get_listen_addr())
        test = load_dataset(test_path) if test_path else None
        run_client(host, port, cfg, client_id, load_dataset(shard), keys, seed, test)
    except (FedHEError, ConnectionError) as e:
        raise click.ClickException(str(e))


if __name__ == "__main__":
    cli()
