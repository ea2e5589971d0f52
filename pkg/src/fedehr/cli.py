"""fedctl: seed fixtures, run the desk topology, drive scenarios, print
audit reports.

Exit codes: 0 success, 1 scenario assertion failure, 2 infrastructure
failure.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import click

from . import client
from .config import Topology
from .model import parse_rfc3339
from .scenario import ScenarioError, run_see_doctor
from .seed import load_manifest, seed as seed_fixture

EXIT_SCENARIO_FAILURE = 1
EXIT_INFRA_FAILURE = 2


@click.group()
def main() -> None:
    """Federated EHR exchange harness."""


@main.command("seed")
@click.option("--patients", default=100, show_default=True)
@click.option("--records", default=10000, show_default=True)
@click.option("--hospitals", default="HC,KW,UH", show_default=True)
@click.option("--seed", "rng_seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--base-port", default=8640, show_default=True)
def seed_cmd(patients, records, hospitals, rng_seed, out, base_port):
    """Generate a deterministic fixture directory with topology file."""
    fixture = seed_fixture(
        patients, records, hospitals.split(","), rng_seed, out, base_port=base_port
    )
    click.echo(f"seeded fixture at {fixture}")


def _pid_file(topology: Topology) -> Path:
    return topology.path.parent / "pids.json"


@main.command("up")
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--wait-s", default=15.0, show_default=True)
def up_cmd(topology_path, wait_s):
    """Start every topology server as a local process."""
    topology = Topology.load(topology_path)
    pids = {}
    log_dir = topology.path.parent / "logs"
    log_dir.mkdir(exist_ok=True)
    for server in topology.servers:
        log = (log_dir / f"{server.id}.log").open("a")
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "fedehr.serve",
                "--topology",
                str(topology.path),
                "--server",
                server.id,
            ],
            stdout=log,
            stderr=subprocess.STDOUT,
        )
        pids[server.id] = proc.pid
    _pid_file(topology).write_text(json.dumps(pids))

    deadline = time.monotonic() + wait_s
    pending = {s.id: s.base_url for s in topology.servers}
    while pending and time.monotonic() < deadline:
        for server_id, url in list(pending.items()):
            if client.healthz(url):
                del pending[server_id]
        time.sleep(0.2)
    if pending:
        click.echo(f"servers did not become healthy: {sorted(pending)}", err=True)
        raise SystemExit(EXIT_INFRA_FAILURE)
    for server_id, pid in sorted(pids.items()):
        click.echo(f"{server_id} up (pid {pid})")


@main.command("down")
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
def down_cmd(topology_path):
    """Stop processes started by `fedctl up`."""
    topology = Topology.load(topology_path)
    pid_file = _pid_file(topology)
    if not pid_file.exists():
        click.echo("nothing to stop")
        return
    pids = json.loads(pid_file.read_text())
    for server_id, pid in sorted(pids.items()):
        try:
            os.kill(pid, signal.SIGTERM)
            click.echo(f"{server_id} stopped (pid {pid})")
        except ProcessLookupError:
            click.echo(f"{server_id} already gone (pid {pid})")
    pid_file.unlink()


@main.command("sync-now")
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
def sync_now_cmd(topology_path):
    """Trigger a sync run on every hospital node."""
    topology = Topology.load(topology_path)
    for server in topology.hospitals:
        try:
            report = client.sync_now(server.base_url)
        except (client.ServiceError, OSError) as exc:
            click.echo(f"{server.id}: sync failed: {exc}", err=True)
            raise SystemExit(EXIT_INFRA_FAILURE)
        click.echo(
            f"{server.id}: extracted={report['extracted']} converted={report['converted']} "
            f"pushed={report['pushed']} errors={len(report['errors'])}"
        )


@main.group("scenario")
def scenario_group() -> None:
    """Scripted end-to-end walkthroughs."""


@scenario_group.command("see-doctor")
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--patient", "patient_name", default="Yang Yingying", show_default=True)
@click.option("--at", "at_hospital", default="HC", show_default=True)
@click.option("--from", "date_from", default="2010-01-01T00:00:00+08:00", show_default=True)
@click.option("--to", "date_to", default="2016-12-31T23:59:59+08:00", show_default=True)
@click.option("--doctor", "doctor_id", default="dr.chan", show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.option("--parallel", "parallel", default=1, show_default=True,
              help="Run this many concurrent copies of the workflow.")
def see_doctor_cmd(topology_path, patient_name, at_hospital, date_from, date_to,
                   doctor_id, out_path, parallel):
    """Run the full see-a-doctor workflow for one patient."""
    topology = Topology.load(topology_path)
    manifest = load_manifest(topology.path.parent)
    patient = next((p for p in manifest["patients"] if p["name"] == patient_name), None)
    if patient is None:
        click.echo(f"no fixture patient named {patient_name!r}", err=True)
        raise SystemExit(EXIT_INFRA_FAILURE)
    secret = manifest["credentials"][doctor_id]["secret"]

    def one_run():
        return run_see_doctor(
            topology,
            raw_patient_id=patient["raw_id"],
            at_hospital=at_hospital,
            date_from=date_from,
            date_to=date_to,
            doctor_id=doctor_id,
            doctor_secret=secret,
        )

    try:
        if parallel <= 1:
            transcript = one_run()
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=parallel) as pool:
                transcripts = [f.result() for f in [pool.submit(one_run) for _ in range(parallel)]]
            transcript = transcripts[0]
            for i, t in enumerate(transcripts):
                click.echo(
                    f"batch {i}: {len(t.rows)} rows, {len(t.records)} records, "
                    f"{len(t.failures)} failures"
                )
    except ScenarioError as exc:
        click.echo(f"scenario failed: {exc}", err=True)
        raise SystemExit(EXIT_INFRA_FAILURE)

    for step in transcript.steps:
        click.echo(
            f"step {step.step:>2}  {step.actor:<18} {step.action:<40} "
            f"{step.outcome:<8} {step.latency_ms:8.1f} ms"
        )
    click.echo(
        f"located {len(transcript.rows)} rows, transferred {len(transcript.records)} records, "
        f"{len(transcript.failures)} hospital failures"
    )
    if out_path:
        out_path.write_text(json.dumps(transcript.to_dict(), indent=1, ensure_ascii=False))
        click.echo(f"transcript written to {out_path}")
    if len(transcript.records) + sum(
        1 for row in transcript.rows if row["location"] in {f[0] for f in transcript.failures}
    ) != len(transcript.rows):
        click.echo("fan-out completeness violated", err=True)
        raise SystemExit(EXIT_SCENARIO_FAILURE)


@main.command("audit")
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--ehr-id", required=True)
@click.option("--from", "date_from", required=True)
@click.option("--to", "date_to", required=True)
@click.option("--admin", "admin_id", default="auditor", show_default=True)
@click.option("--at", "at_hospital", default="HC", show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
def audit_cmd(topology_path, ehr_id, date_from, date_to, admin_id, at_hospital, out_path):
    """Federated audit report: who touched a record, across all servers."""
    parse_rfc3339(date_from)
    parse_rfc3339(date_to)
    topology = Topology.load(topology_path)
    manifest = load_manifest(topology.path.parent)
    secret = manifest["credentials"][admin_id]["secret"]
    hospital_url = topology.server(at_hospital).base_url
    try:
        admin_token = client.login(hospital_url, admin_id, secret)
    except (client.ServiceError, OSError) as exc:
        click.echo(f"admin login failed: {exc}", err=True)
        raise SystemExit(EXIT_INFRA_FAILURE)

    urls = {s.id: s.base_url for s in topology.servers}
    records, failures = client.federated_audit(urls, admin_token, ehr_id, date_from, date_to)

    header = f"{'when':<22} {'server':<6} {'doctor':<12} {'action':<10} {'outcome':<8} detail"
    click.echo(header)
    click.echo("-" * len(header))
    for record in records:
        click.echo(
            f"{record.occurred_at:<22} {record.server_id:<6} {record.actor_doctor:<12} "
            f"{record.action:<10} {record.outcome:<8} {record.detail}"
        )
    for server_id, reason in failures:
        click.echo(f"unreachable: {server_id}: {reason}", err=True)
    if out_path:
        out_path.write_text(
            json.dumps(
                {
                    "records": [r.to_dict() for r in records],
                    "failures": [list(f) for f in failures],
                },
                indent=1,
            )
        )
        click.echo(f"report written to {out_path}")


if __name__ == "__main__":
    main()
