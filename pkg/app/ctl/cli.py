"""
ctl: administer a deskcloud.

    ctl init --nodes 4 --dir cloud            write configs for a local cloud
    ctl node start --master M --count 2       provision nodes through the master
    ctl node start --config worker.yaml       launch one container locally
    ctl node install ENDPOINT SERVICE         install a service on a running node
    ctl node stop NODE --master M             drain and stop a node (id or endpoint)
    ctl stats --master M [--json]             print cloud statistics once
    ctl watch --master M --interval 2         reprint statistics
    ctl submit --master M --operation sleep --params '{"seconds": 1}' --count 4 --wait
    ctl reserve --master M --nodes 1 --start +60 --duration 600

Exit codes are listed in app/ctl/exit_codes.py.
"""
import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path
from typing import List, Optional
from uuid import NAMESPACE_URL, uuid5

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.appmodel.application import create_application
from app.appmodel.client import CloudClient
from app.appmodel.schemas import ClientConfig, WorkUnit, load_client_config
from app.clock import now_s
from app.container.schemas import InstallRequest, StopRequest
from app.container.wire import parse_body
from app.ctl.exit_codes import ExitCode, exit_code_for
from app.ctl.stats import collect_stats, format_stats
from app.directory.schemas import QueryReply, QueryRequest
from app.errors import CloudError, UnknownNode
from app.execution.schemas import JobPayload, JobState, ProgrammingModel
from app.fabric.provisioning import container_command, render_container_config
from app.fabric.schemas import ProvisionRequest, ProvisionResult
from app.logging_config import configure_logging
from app.reservation.client import ReservationClient
from app.reservation.schemas import Outcome, ReservationRequest
from app.transversal.security import hash_token

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)

MASTER_SERVICES = ["directory", "scheduler", "reservation", "storage", "provisioner", "api", "executor"]


def _client_config(args: argparse.Namespace) -> ClientConfig:
    if args.client_config:
        config = load_client_config(args.client_config)
        overrides = {k: v for k, v in (("master", args.master), ("user_id", args.user), ("token", args.token)) if v}
        return config.model_copy(update=overrides)
    if not args.master:
        raise SystemExit(f"ctl {args.command}: --master or --client-config is required")
    return ClientConfig(
        master=args.master, user_id=args.user or "anonymous", token=args.token or "", timeout_s=args.timeout,
    )


def _connect(args: argparse.Namespace) -> CloudClient:
    """Unopened client; use it as a context manager."""
    return CloudClient(_client_config(args))


# ------------------------------------------------------------------ init

def cmd_init(args: argparse.Namespace) -> int:
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    host = args.host
    master = f"{host}:{args.base_port}"
    secured = args.security == "token"
    credential_file = str((out / "credentials.txt").resolve()) if secured else None
    if secured:
        users = [{"user_id": args.user or "admin", "token_hash": hash_token(args.token or ""), "roles": ["admin"]}]
        (out / "credentials.txt").write_text(_env.get_template("credentials.txt.j2").render(users=users), encoding="utf-8")

    persistence_path = None
    if args.persistence == "durable":
        persistence_path = str((out / "state").resolve())
    elif args.persistence == "sql":
        persistence_path = f"sqlite:///{(out / 'cloud.db').resolve()}"

    nodes = []
    for index in range(args.nodes):
        name = "master" if index == 0 else f"worker-{index}"
        if index == 0:
            services = [{"name": s, "options": _master_options(s, args)} for s in MASTER_SERVICES]
        else:
            services = [{"name": "executor", "options": {"slots": args.slots} if args.slots else {}}]
        config_path = out / f"{name}.yaml"
        config_path.write_text(render_container_config(
            node_id=str(uuid5(NAMESPACE_URL, f"deskcloud:{args.cloud_id}:{name}")),
            listen_endpoint=f"{host}:{args.base_port + index}",
            services=services,
            seed_peers=[master],
            security_provider=args.security,
            credential_file=credential_file,
            persistence_provider=args.persistence if index == 0 else "volatile",
            persistence_path=persistence_path if index == 0 else None,
            heartbeat_interval_ms=args.heartbeat_ms,
            license_max_nodes=args.license_max_nodes if index == 0 else 0,
            generator="ctl init",
        ), encoding="utf-8")
        nodes.append({"name": name, "config": config_path.name})

    (out / "client.yaml").write_text(_env.get_template("client.yaml.j2").render(
        master=master, user_id=args.user or ("admin" if secured else "anonymous"), token=args.token or "",
        channels=[], timeout_s=10,
    ), encoding="utf-8")
    start = out / "start.sh"
    start.write_text(_env.get_template("start.sh.j2").render(nodes=nodes, master=master), encoding="utf-8")
    start.chmod(0o755)
    print(f"Wrote {len(nodes)} container configs, client.yaml and start.sh to {out}")
    return ExitCode.OK


def _master_options(service: str, args: argparse.Namespace) -> dict:
    if service == "storage":
        return {"port": args.base_port + 90, "token": args.storage_token}
    if service == "api":
        return {"port": args.api_port}
    if service == "executor" and args.slots:
        return {"slots": args.slots}
    return {}


# ------------------------------------------------------------------ nodes

def cmd_node_start(args: argparse.Namespace) -> int:
    if args.config:
        process = subprocess.Popen(container_command(Path(args.config)), start_new_session=True)
        print(f"Started container pid {process.pid} with {args.config}")
        return ExitCode.OK
    with _connect(args) as client:
        request = ProvisionRequest(
            credentials=client.credentials,
            count=args.count,
            required_services=args.services,
            ttl_seconds=args.ttl,
        )
        result = parse_body(client.call("provisioner", "fab.provision", request, timeout=args.timeout + 30), ProvisionResult)
    for node_id, endpoint in zip(result.node_ids, result.endpoints):
        print(f"{node_id} {endpoint}")
    return ExitCode.OK


def cmd_node_install(args: argparse.Namespace) -> int:
    with CloudClient(ClientConfig(
        master=args.endpoint, user_id=args.user or "anonymous", token=args.token or "", timeout_s=args.timeout,
    )) as client:
        options = json.loads(args.options) if args.options else {}
        client.container_verb(args.endpoint, "sys.install", InstallRequest(
            credentials=client.credentials, name=args.service, options=options,
        ))
    print(f"Installed {args.service} on {args.endpoint}")
    return ExitCode.OK


def _resolve_endpoint(client: CloudClient, node: str) -> str:
    if ":" in node:
        return node
    records = parse_body(client.call("directory", "dir.query", QueryRequest()), QueryReply).records
    for record in records:
        if record.node_id == node or record.node_id.startswith(node):
            return record.endpoint
    raise UnknownNode(f"no node {node!r} in the catalogue")


def cmd_node_stop(args: argparse.Namespace) -> int:
    with _connect(args) as client:
        endpoint = _resolve_endpoint(client, args.node)
        client.container_verb(endpoint, "sys.stop", StopRequest(credentials=client.credentials, drain=not args.no_drain))
    print(f"Stopping {args.node} at {endpoint}" + ("" if args.no_drain else " after draining"))
    return ExitCode.OK


# ------------------------------------------------------------------ monitoring

def cmd_stats(args: argparse.Namespace) -> int:
    with _connect(args) as client:
        stats = collect_stats(client)
    print(stats.model_dump_json(indent=2) if args.json else format_stats(stats))
    return ExitCode.OK


def cmd_watch(args: argparse.Namespace) -> int:
    shown = 0
    with _connect(args) as client:
        try:
            while args.count is None or shown < args.count:
                stats = collect_stats(client)
                print(stats.model_dump_json() if args.json else f"\n{time.strftime('%H:%M:%S')}\n{format_stats(stats)}", flush=True)
                shown += 1
                if args.count is None or shown < args.count:
                    time.sleep(args.interval)
        except KeyboardInterrupt:
            pass
    return ExitCode.OK


# ------------------------------------------------------------------ work

def cmd_submit(args: argparse.Namespace) -> int:
    params = args.params.encode("utf-8") if args.params else b""
    with _connect(args) as client:
        app = create_application(client, ProgrammingModel(args.model), display_name=args.name)
        try:
            for _ in range(args.count):
                app.add_unit(WorkUnit(
                    payload=JobPayload(operation=args.operation, params=params),
                    max_attempts=args.max_attempts,
                ))
            ack = app.submit()
            print(f"application {app.app_id}: submitted {len(ack.job_ids)} jobs")
            if not args.wait:
                return ExitCode.OK
            states = app.wait(args.wait_timeout)
        finally:
            app.close()
        failed = 0
        for unit_id, state in states.items():
            unit = app.unit(unit_id)
            detail = unit.failure_cause or (unit.result or b"").decode("utf-8", "replace")[:80]
            print(f"{unit_id} {state.value} {detail}")
            failed += state != JobState.COMPLETED
    return ExitCode.JOBS_FAILED if failed else ExitCode.OK


def _timestamp(text: str, base: int) -> int:
    """Absolute epoch seconds, or ``+N`` seconds from now."""
    return base + int(text[1:]) if text.startswith("+") else int(text)


def cmd_reserve(args: argparse.Namespace) -> int:
    now = now_s()
    earliest = _timestamp(args.start, now)
    latest = _timestamp(args.latest, now) if args.latest else earliest + args.duration
    request = ReservationRequest(
        node_count=args.nodes, earliest=earliest, latest=latest, duration_s=args.duration,
        required_services=args.services,
    )
    with _connect(args) as client:
        reservations = ReservationClient(client)
        decision = reservations.negotiate(request) if args.accept else reservations.request(request)
        if decision.outcome == Outcome.CONFIRMED and args.bind:
            decision = decision.model_copy(update={"reservation": reservations.bind(decision.reservation.reservation_id, args.bind)})
    print(decision.model_dump_json(indent=2, exclude_none=True))
    return ExitCode.OK if decision.outcome == Outcome.CONFIRMED else ExitCode.NOT_GRANTED


# ------------------------------------------------------------------ parser

def _add_connection(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--master", help="master endpoint host:port")
    parser.add_argument("--client-config", help="client YAML file (see ctl init)")
    parser.add_argument("--user")
    parser.add_argument("--token")
    parser.add_argument("--timeout", type=float, default=10.0, help="per-call timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctl", description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="write configuration for a local N-node cloud")
    init.add_argument("--nodes", type=int, default=3, help="containers including the master")
    init.add_argument("--dir", default="cloud")
    init.add_argument("--host", default="127.0.0.1")
    init.add_argument("--base-port", type=int, default=7000)
    init.add_argument("--api-port", type=int, default=8080)
    init.add_argument("--slots", type=int, default=0, help="executor slots per node (0 = CPU count)")
    init.add_argument("--security", choices=["anonymous", "token"], default="anonymous")
    init.add_argument("--user", default=None)
    init.add_argument("--token", default=None)
    init.add_argument("--storage-token", default="")
    init.add_argument("--persistence", choices=["volatile", "durable", "sql"], default="durable")
    init.add_argument("--heartbeat-ms", type=int, default=1000)
    init.add_argument("--license-max-nodes", type=int, default=0)
    init.add_argument("--cloud-id", default="local")
    init.set_defaults(func=cmd_init)

    node = sub.add_parser("node", help="start, install or stop nodes")
    node_sub = node.add_subparsers(dest="node_command", required=True)

    start = node_sub.add_parser("start", help="provision nodes, or launch one from a config file")
    _add_connection(start)
    start.add_argument("--config", help="launch this container config locally instead of provisioning")
    start.add_argument("--count", type=int, default=1)
    start.add_argument("--services", nargs="+", default=["executor"])
    start.add_argument("--ttl", type=int, default=0, help="seconds before the node decommissions itself")
    start.set_defaults(func=cmd_node_start)

    install = node_sub.add_parser("install", help="install a service on a running container")
    install.add_argument("endpoint")
    install.add_argument("service")
    install.add_argument("--options", help="service options as JSON")
    install.add_argument("--user")
    install.add_argument("--token")
    install.add_argument("--timeout", type=float, default=10.0)
    install.set_defaults(func=cmd_node_install)

    stop = node_sub.add_parser("stop", help="drain and stop a node")
    _add_connection(stop)
    stop.add_argument("node", help="node id (or prefix) or endpoint")
    stop.add_argument("--no-drain", action="store_true")
    stop.set_defaults(func=cmd_node_stop)

    stats = sub.add_parser("stats", help="print cloud statistics")
    _add_connection(stats)
    stats.add_argument("--json", action="store_true")
    stats.set_defaults(func=cmd_stats)

    watch = sub.add_parser("watch", help="reprint cloud statistics every interval")
    _add_connection(watch)
    watch.add_argument("--interval", type=float, default=2.0)
    watch.add_argument("--count", type=int, default=None, help="stop after this many samples")
    watch.add_argument("--json", action="store_true")
    watch.set_defaults(func=cmd_watch)

    submit = sub.add_parser("submit", help="submit jobs of one operation")
    _add_connection(submit)
    submit.add_argument("--operation", required=True)
    submit.add_argument("--params", default="", help="operation parameters (usually JSON)")
    submit.add_argument("--count", type=int, default=1)
    submit.add_argument("--model", choices=[m.value for m in ProgrammingModel], default="task")
    submit.add_argument("--name", default="ctl-submit")
    submit.add_argument("--max-attempts", type=int, default=3)
    submit.add_argument("--wait", action="store_true")
    submit.add_argument("--wait-timeout", type=float, default=None)
    submit.set_defaults(func=cmd_submit)

    reserve = sub.add_parser("reserve", help="reserve nodes for a time window")
    _add_connection(reserve)
    reserve.add_argument("--nodes", type=int, default=1)
    reserve.add_argument("--start", default="+0", help="earliest start, epoch seconds or +N from now")
    reserve.add_argument("--latest", default=None, help="latest end, epoch seconds or +N from now")
    reserve.add_argument("--duration", type=int, required=True, help="seconds")
    reserve.add_argument("--services", nargs="+", default=["executor"])
    reserve.add_argument("--accept", action="store_true", help="accept counter-offers until confirmed")
    reserve.add_argument("--bind", metavar="APP_ID", help="bind the confirmed reservation to an application")
    reserve.set_defaults(func=cmd_reserve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or "WARNING")
    try:
        return int(args.func(args))
    except CloudError as e:
        print(f"ctl: {e.code}: {e.message}", file=sys.stderr)
        return int(exit_code_for(e))
    except (OSError, ConnectionError) as e:
        print(f"ctl: {e}", file=sys.stderr)
        return int(exit_code_for(e))
    except KeyboardInterrupt:
        return int(ExitCode.ERROR)


if __name__ == "__main__":
    sys.exit(main())
