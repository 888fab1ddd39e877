"""
sweep: build, inspect and run parameter sweeps.

    sweep wizard -o render.yaml
    sweep expand render.yaml --dry-run
    sweep run render.yaml --master 127.0.0.1:7000 --user alice --token s3cret
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from app.appmodel.application import create_application
from app.appmodel.client import CloudClient
from app.appmodel.schemas import ClientConfig, load_client_config
from app.ctl.exit_codes import ExitCode, exit_code_for
from app.errors import CloudError
from app.execution.schemas import JobState, ProgrammingModel
from app.logging_config import configure_logging
from app.sweep.runner import run_sweep
from app.sweep.template import expand, load_template
from app.sweep.wizard import run_wizard

logger = logging.getLogger(__name__)


def _client_config(args: argparse.Namespace) -> ClientConfig:
    if args.client_config:
        config = load_client_config(args.client_config)
        overrides = {k: v for k, v in (("master", args.master), ("user_id", args.user), ("token", args.token)) if v}
        return config.model_copy(update=overrides)
    if not args.master:
        raise SystemExit("sweep run: --master or --client-config is required")
    return ClientConfig(master=args.master, user_id=args.user or "anonymous", token=args.token or "")


def cmd_wizard(args: argparse.Namespace) -> int:
    template = run_wizard(args.output)
    print(f"Wrote {args.output} ({template.combinations_count()} tasks)")
    return ExitCode.OK


def cmd_expand(args: argparse.Namespace) -> int:
    combos = expand(load_template(args.template))
    for combo in combos:
        if args.json:
            print(combo.model_dump_json())
            continue
        values = " ".join(f"{k}={v}" for k, v in combo.parameters.items())
        print(f"[{combo.index}] {values}")
        for command in combo.commands:
            print(f"    {command.operation} {json.dumps(command.params)}")
    print(f"{len(combos)} tasks" + (" (dry run, nothing submitted)" if args.dry_run else ""), file=sys.stderr)
    return ExitCode.OK


def cmd_run(args: argparse.Namespace) -> int:
    template = load_template(args.template)
    with CloudClient(_client_config(args)) as client:
        app = create_application(client, ProgrammingModel.TASK, display_name=template.name)
        try:
            report = run_sweep(
                app, template, timeout=args.timeout, max_attempts=args.max_attempts,
                progress=lambda counts: print(_progress_line(counts), file=sys.stderr),
            )
        finally:
            app.close()
    if args.json:
        print(report.model_dump_json(indent=2))
    else:
        for entry in report.entries:
            values = " ".join(f"{k}={v}" for k, v in entry.parameters.items())
            cause = f" ({entry.failure_cause})" if entry.failure_cause else ""
            print(f"[{entry.index}] {entry.state.value:<9} {values}{cause}")
        print(_progress_line(report.counts))
    completed = report.counts.get(JobState.COMPLETED.value, 0)
    return ExitCode.OK if completed == report.total else ExitCode.JOBS_FAILED


def _progress_line(counts) -> str:
    return " ".join(f"{state}={n}" for state, n in counts.items() if n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweep", description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    wizard = sub.add_parser("wizard", help="build a template interactively")
    wizard.add_argument("-o", "--output", default="sweep.yaml", help="template file to write")
    wizard.set_defaults(func=cmd_wizard)

    exp = sub.add_parser("expand", help="print every combination of a template")
    exp.add_argument("template")
    exp.add_argument("--dry-run", action="store_true", help="only print, never submit")
    exp.add_argument("--json", action="store_true", help="one JSON object per combination")
    exp.set_defaults(func=cmd_expand)

    run = sub.add_parser("run", help="submit every combination as a task")
    run.add_argument("template")
    run.add_argument("--master", help="master endpoint host:port")
    run.add_argument("--client-config", help="client YAML file")
    run.add_argument("--user")
    run.add_argument("--token")
    run.add_argument("--timeout", type=float, default=None, help="seconds to wait for all tasks")
    run.add_argument("--max-attempts", type=int, default=1)
    run.add_argument("--json", action="store_true", help="print the report as JSON")
    run.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or "WARNING")
    try:
        return int(args.func(args))
    except CloudError as e:
        print(f"sweep: {e.code}: {e.message}", file=sys.stderr)
        return int(exit_code_for(e))
    except KeyboardInterrupt:
        return int(ExitCode.ERROR)


if __name__ == "__main__":
    sys.exit(main())
