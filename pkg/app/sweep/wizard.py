"""
Interactive builder for sweep templates.

Five steps, each re-prompted until its answer validates:
  1. the executable the tasks run
  2. parameters and their domains (blank name ends the list)
  3. input files
  4. output files
  5. the command sequence (blank line ends it)
"""
import logging
import shlex
from pathlib import Path
from typing import Callable, List, Optional, Union

from app.errors import CloudError, EmptyDomain
from app.sweep.template import (
    NAME,
    CommandSpec,
    FileSpec,
    ParameterDomain,
    TaskTemplate,
    save_template,
)

logger = logging.getLogger(__name__)

Ask = Callable[[str], str]
Say = Callable[[str], None]


class Wizard:
    def __init__(self, ask: Ask = input, say: Say = print):
        self.ask = ask
        self.say = say

    def _prompt(self, question: str, default: Optional[str] = None) -> str:
        suffix = f" [{default}]" if default else ""
        answer = self.ask(f"{question}{suffix}: ").strip()
        return answer or (default or "")

    def executable(self) -> str:
        while True:
            answer = self._prompt("Executable")
            if answer:
                return answer
            self.say("An executable is required.")

    def domain(self, name: str) -> ParameterDomain:
        while True:
            kind = self._prompt(f"Domain of {name}: (r)ange or (e)numeration", "e").lower()
            try:
                if kind.startswith("r"):
                    start = _number(self._prompt("  start"))
                    step = _number(self._prompt("  step"))
                    count = int(self._prompt("  count"))
                    domain = ParameterDomain(name=name, kind="range", start=start, step=step, count=count)
                elif kind.startswith("e"):
                    raw = self._prompt("  values (comma separated)")
                    values = [v.strip() for v in raw.split(",") if v.strip()]
                    domain = ParameterDomain(name=name, kind="enumeration", values=values)
                else:
                    self.say("Answer r or e.")
                    continue
                domain.check()
                return domain
            except EmptyDomain as e:
                self.say(f"{e.message}; enter at least one value.")
            except (CloudError, ValueError) as e:
                self.say(f"Invalid domain: {e}")

    def domains(self) -> List[ParameterDomain]:
        domains: List[ParameterDomain] = []
        while True:
            name = self._prompt("Parameter name (blank to finish)")
            if not name:
                return domains
            if not NAME.match(name):
                self.say(f"{name!r} is not a valid identifier.")
                continue
            if any(d.name == name for d in domains):
                self.say(f"Parameter {name} is already defined.")
                continue
            domains.append(self.domain(name))

    def files(self, label: str) -> List[FileSpec]:
        raw = self._prompt(f"{label} files (comma separated, name or name=local)")
        specs = []
        for item in (i.strip() for i in raw.split(",")):
            if not item:
                continue
            name, _, local = item.partition("=")
            specs.append(FileSpec(name=name.strip(), local_name=local.strip() or None))
        return specs

    def commands(self, executable: str) -> List[CommandSpec]:
        self.say(f"Enter command lines; ${{name}} refers to a parameter. Example: {executable} ${{x}}")
        commands: List[CommandSpec] = []
        while True:
            line = self._prompt("Command (blank to finish)")
            if not line:
                if commands:
                    return commands
                self.say("At least one command is required.")
                continue
            try:
                argv = shlex.split(line)
            except ValueError as e:
                self.say(f"Cannot parse command: {e}")
                continue
            commands.append(CommandSpec(operation="run_process", params={"command": argv[0], "args": argv[1:]}))

    def run(self, name: str = "sweep") -> TaskTemplate:
        while True:
            executable = self.executable()
            domains = self.domains()
            inputs = self.files("Input")
            outputs = self.files("Output")
            commands = self.commands(executable)
            try:
                template = TaskTemplate(
                    name=name, executable=executable, domains=domains,
                    inputs=inputs, outputs=outputs, commands=commands,
                )
                template.check()
            except (CloudError, ValueError) as e:
                self.say(f"Template rejected: {e}. Starting over.")
                continue
            self.say(f"Template defines {template.combinations_count()} tasks.")
            return template


def _number(text: str) -> Union[int, float]:
    try:
        return int(text)
    except ValueError:
        return float(text)


def run_wizard(path: Union[str, Path], ask: Ask = input, say: Say = print, name: Optional[str] = None) -> TaskTemplate:
    template = Wizard(ask, say).run(name or Path(path).stem)
    save_template(template, path)
    logger.info(f"Wrote sweep template {path}")
    return template
