"""Operator CLI: service launchers, a thin master client, testbed and benches."""

from __future__ import annotations

import json
import os
import sys
import tempfile
from pathlib import Path

import click
import httpx

from ..serving import setup_logging

DEFAULT_MASTER = "http://127.0.0.1:8800"


def _master_url(explicit: str | None) -> str:
    return (explicit or os.environ.get("ECHO_MASTER_URL") or DEFAULT_MASTER).rstrip("/")


def _request(method: str, url: str, **kw) -> dict | list:
    """Exit 2 when the endpoint is unreachable, 1 on an API error."""
    try:
        resp = httpx.request(method, url, timeout=kw.pop("timeout", 120.0), **kw)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach {url}: {type(exc).__name__}", err=True)
        sys.exit(2)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        if not isinstance(detail, str):
            detail = json.dumps(detail)
        click.echo(f"error: {resp.status_code} {detail}", err=True)
        sys.exit(1)
    return resp.json()


@click.group()
@click.option("--log-level", default=lambda: os.environ.get("ECHO_LOG_LEVEL", "INFO"), show_default="INFO")
def main(log_level: str) -> None:
    """Hybrid edge/cloud dataflow orchestration."""
    setup_logging(log_level)


# services -------------------------------------------------------------------------------


@main.command("cat")
@click.option("--listen", default=None, help="host:port (ECHO_CAT_LISTEN, default 127.0.0.1:8700)")
@click.option("--snapshot", default=None, type=click.Path(dir_okay=False), help="persist items to this JSON file")
def cat_cmd(listen, snapshot):
    """Run the resource catalog."""
    from ..catalog.server import run_catalog

    run_catalog(listen, snapshot)


@main.command("master")
@click.option("--listen", default=None, help="host:port (ECHO_MASTER_LISTEN, default 127.0.0.1:8800)")
@click.option("--catalog", default=None, help="catalog URL (ECHO_CAT_URL)")
@click.option("--scheduler", default="first_fit", show_default=True)
def master_cmd(listen, catalog, scheduler):
    """Run the platform master."""
    from ..master.server import run_master

    run_master(listen, catalog, scheduler)


@main.command("agent")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--listen", default=None, help="host:port (ECHO_AGENT_LISTEN)")
@click.option("--catalog", default=None, help="catalog URL (ECHO_CAT_URL)")
def agent_cmd(config_path, listen, catalog):
    """Run a device agent."""
    from ..agent.server import run_agent

    run_agent(config_path, listen, catalog)


# master client --------------------------------------------------------------------------


@main.command()
@click.option("-f", "--file", "spec_file", required=True, type=click.File("rb"))
@click.option("--master", default=None, help="master URL (ECHO_MASTER_URL)")
def submit(spec_file, master):
    """Submit a dataflow JSON; prints its uuid."""
    body = _request("POST", f"{_master_url(master)}/dataflows", content=spec_file.read(),
                    headers={"content-type": "application/json"})
    click.echo(body["uuid"])


@main.command()
@click.argument("uuid")
@click.option("--master", default=None)
@click.option("--json", "as_json", is_flag=True, help="print the raw record")
def status(uuid, master, as_json):
    """Show state, placement and live rates."""
    rec = _request("GET", f"{_master_url(master)}/dataflows/{uuid}")
    if as_json:
        click.echo(json.dumps(rec, indent=2))
        return
    click.echo(f"{rec['uuid']}  {rec['name']}  {rec['state']}")
    rates = rec.get("metrics", {}).get("processors", {})
    width = max((len(p) for p in rec["mapping"]), default=9)
    click.echo(f"{'processor':<{width}}  {'worker':<16} {'in/s':>8} {'out/s':>8}")
    for pid, wid in sorted(rec["mapping"].items()):
        r = rates.get(pid, {})
        click.echo(f"{pid:<{width}}  {wid:<16} {r.get('tuples_in_per_s', 0):>8.1f} {r.get('tuples_out_per_s', 0):>8.1f}")
    for w in rec.get("warnings", []):
        click.echo(f"warning: {w}")


@main.command("list")
@click.option("--master", default=None)
def list_cmd(master):
    """List known dataflows."""
    for d in _request("GET", f"{_master_url(master)}/dataflows"):
        click.echo(f"{d['uuid']}  {d.get('name') or '-'}  {d.get('state') or '-'}")


@main.command()
@click.argument("uuid")
@click.option("--master", default=None)
def stop(uuid, master):
    """Stop and undeploy a dataflow."""
    body = _request("DELETE", f"{_master_url(master)}/dataflows/{uuid}")
    click.echo(f"{uuid} {body['state']}")
    for w in body.get("warnings", []):
        click.echo(f"warning: {w}")


@main.command()
@click.argument("uuid")
@click.option("--master", default=None)
def rebalance(uuid, master):
    """Reschedule a running dataflow and migrate moved processors."""
    body = _request("POST", f"{_master_url(master)}/dataflows/{uuid}/rebalance")
    if body.get("noop"):
        click.echo("placement unchanged")
    else:
        click.echo("moved: " + ", ".join(body["moved"]))
    for pid, wid in sorted(body["mapping"].items()):
        click.echo(f"  {pid} -> {wid}")


# testbed and benches --------------------------------------------------------------------


def _testbed_config(path: str, free_ports: bool) -> dict:
    from ..testbed import load_config, with_free_ports

    cfg = load_config(path)
    return with_free_ports(cfg) if free_ports else cfg


def _testbed_dir(cfg: dict, workdir: str | None) -> Path:
    if workdir:
        return Path(workdir)
    base = os.environ.get("ECHO_TESTBED_DIR") or tempfile.gettempdir()
    return Path(base) / f"echo-testbed-{cfg.get('name', 'testbed')}"


@main.group()
def testbed():
    """Boot or tear down a simulated deployment."""


@testbed.command("up")
@click.option("-c", "--config", "config_path", default="default", show_default=True,
              help="testbed JSON, or the name of a bundled config")
@click.option("-w", "--workdir", default=None)
@click.option("--free-ports", is_flag=True, help="ignore configured ports and pick free ones")
def testbed_up(config_path, workdir, free_ports):
    from ..testbed import Testbed, TestbedError

    cfg = _testbed_config(config_path, free_ports)
    try:
        tb = Testbed(cfg, _testbed_dir(cfg, workdir)).up()
    except TestbedError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"catalog {tb.config.catalog_url}")
    click.echo(f"master  {tb.config.master_url}")
    for d in tb.config.devices:
        click.echo(f"agent   {d['id']:<10} {tb.config.agent_url(d['id'])}")
    click.echo(f"workdir {tb.workdir}")


@testbed.command("down")
@click.option("-c", "--config", "config_path", default="default", show_default=True)
@click.option("-w", "--workdir", default=None)
def testbed_down(config_path, workdir):
    from ..testbed import TestbedError, down_from_state, load_config

    try:
        stopped = down_from_state(_testbed_dir(load_config(config_path), workdir))
    except TestbedError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo("stopped " + ", ".join(stopped))


@main.group()
def bench():
    """Run a benchmark on a private testbed."""


def _finish(report: dict) -> None:
    v = report["verdicts"]
    for k, val in v.items():
        if k not in ("failed",):
            click.echo(f"{k}: {val}")
    if v.get("failed"):
        click.echo("failed verdicts: " + ", ".join(v["failed"]), err=True)
        sys.exit(1)


@bench.command("rebalance")
@click.option("-c", "--config", "config_path", default="default", show_default=True)
@click.option("-o", "--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--duration", default=90, show_default=True, help="seconds; rebalance fires at the midpoint")
@click.option("--rate", default=80.0, show_default=True, help="source records per second")
@click.option("--no-rebalance", is_flag=True, help="control run without a rebalance")
@click.option("--min-ratio", default=2.0, show_default=True)
@click.option("--free-ports", is_flag=True)
def bench_rebalance(config_path, outdir, duration, rate, no_rebalance, min_ratio, free_ports):
    from ..bench import run_rebalance

    report = run_rebalance(_testbed_config(config_path, free_ports), outdir, duration, rate,
                           rebalance=not no_rebalance, min_ratio=min_ratio)
    click.echo(f"report {Path(outdir) / 'report.json'}")
    _finish(report)


@bench.command("stats")
@click.option("-c", "--config", "config_path", default="default", show_default=True)
@click.option("-o", "--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--duration", default=60, show_default=True)
@click.option("--rate", default=1000.0, show_default=True, help="input events per second")
@click.option("--free-ports", is_flag=True)
def bench_stats(config_path, outdir, duration, rate, free_ports):
    from ..bench import run_stats

    report = run_stats(_testbed_config(config_path, free_ports), outdir, duration, rate)
    click.echo(f"report {Path(outdir) / 'report.json'}")
    _finish(report)
