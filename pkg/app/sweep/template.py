"""
Task templates for parameter sweeps.

A template is a sequence of commands, input and output files and the
parameter domains that drive them. ``${name}`` placeholders anywhere in a
command, an input or an output are substituted with one value per domain;
expand() yields one concrete task per combination.

Template file (UTF-8 YAML, this field order)::

    name: render
    executable: render
    domains:
      - {name: x, kind: range, start: 0, step: 0.5, count: 3}
      - {name: color, kind: enumeration, values: [red, blue]}
    inputs:
      - {name: scenes/${color}.txt, local_name: scene.txt}
    outputs:
      - {name: frames/${x}-${color}.png, local_name: frame.png}
    commands:
      - operation: run_process
        params: {command: render, args: ["${x}", "${color}", scene.txt]}
"""
import itertools
import logging
import re
from pathlib import Path, PurePosixPath
from typing import Any, Dict, List, Literal, Optional, Set, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from app.errors import EmptyDomain, TemplateInvalid, UndeclaredPlaceholder

logger = logging.getLogger(__name__)

PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

Number = Union[int, float]


def format_number(value: Number) -> str:
    """Shortest decimal text that reads back to the same value."""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


class ParameterDomain(BaseModel):
    name: str
    kind: Literal["range", "enumeration"]
    start: Optional[Number] = None
    step: Optional[Number] = None
    count: Optional[int] = None
    values: Optional[List[str]] = None

    def check(self) -> None:
        if not NAME.match(self.name):
            raise TemplateInvalid(f"domain name {self.name!r} is not an identifier")
        if self.kind == "range":
            if self.start is None or self.step is None or self.count is None:
                raise TemplateInvalid(f"range domain {self.name} needs start, step and count")
            if self.step == 0:
                raise TemplateInvalid(f"range domain {self.name} has a zero step")
            if self.count < 1:
                raise EmptyDomain(f"range domain {self.name} has no values")
        elif not self.values:
            raise EmptyDomain(f"enumeration domain {self.name} has no values")

    def numbers(self) -> List[Number]:
        """Range values start, start+step, ... (count of them)."""
        if self.kind != "range":
            raise TemplateInvalid(f"domain {self.name} is not a range")
        return [self.start + i * self.step for i in range(self.count)]

    def text_values(self) -> List[str]:
        self.check()
        if self.kind == "enumeration":
            return list(self.values)
        return [format_number(v) for v in self.numbers()]

    def __len__(self) -> int:
        return self.count if self.kind == "range" else len(self.values or [])


class FileSpec(BaseModel):
    name: str = Field(min_length=1)
    local_name: Optional[str] = None

    @property
    def workspace_name(self) -> str:
        return self.local_name or PurePosixPath(self.name).name


class CommandSpec(BaseModel):
    operation: str = Field(min_length=1)
    params: Dict[str, Any] = Field(default_factory=dict)


class TaskTemplate(BaseModel):
    name: str = "sweep"
    executable: str = ""
    domains: List[ParameterDomain] = Field(default_factory=list)
    inputs: List[FileSpec] = Field(default_factory=list)
    outputs: List[FileSpec] = Field(default_factory=list)
    commands: List[CommandSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_domains(self) -> "TaskTemplate":
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValueError(f"domain names must be unique: {names}")
        return self

    def placeholders(self) -> Set[str]:
        found: Set[str] = set()
        for text in _strings(self.model_dump(include={"commands", "inputs", "outputs"})):
            found.update(PLACEHOLDER.findall(text))
        return found

    def check(self) -> None:
        if not self.commands:
            raise TemplateInvalid("template has no commands")
        for domain in self.domains:
            domain.check()
        declared = {d.name for d in self.domains}
        used = self.placeholders()
        undeclared = sorted(used - declared)
        if undeclared:
            raise UndeclaredPlaceholder(f"placeholder ${{{undeclared[0]}}} names no domain", cause=undeclared[0])
        for unused in sorted(declared - used):
            logger.warning(f"Domain {unused} is never referenced in template {self.name}")

    def combinations_count(self) -> int:
        count = 1
        for domain in self.domains:
            count *= len(domain)
        return count


class Combination(BaseModel):
    index: int
    parameters: Dict[str, str]
    commands: List[CommandSpec]
    inputs: List[FileSpec]
    outputs: List[FileSpec]


def _strings(value: Any):
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from _strings(v)
    elif isinstance(value, list):
        for v in value:
            yield from _strings(v)


def substitute(value: Any, parameters: Dict[str, str]) -> Any:
    if isinstance(value, str):
        return PLACEHOLDER.sub(lambda m: parameters[m.group(1)], value)
    if isinstance(value, dict):
        return {k: substitute(v, parameters) for k, v in value.items()}
    if isinstance(value, list):
        return [substitute(v, parameters) for v in value]
    return value


def expand(template: TaskTemplate) -> List[Combination]:
    """One combination per element of the cartesian product, odometer order."""
    template.check()
    names = [d.name for d in template.domains]
    combos = []
    for index, values in enumerate(itertools.product(*(d.text_values() for d in template.domains))):
        parameters = dict(zip(names, values))
        combo = Combination(
            index=index,
            parameters=parameters,
            commands=[CommandSpec.model_validate(substitute(c.model_dump(), parameters)) for c in template.commands],
            inputs=[FileSpec.model_validate(substitute(f.model_dump(), parameters)) for f in template.inputs],
            outputs=[FileSpec.model_validate(substitute(f.model_dump(), parameters)) for f in template.outputs],
        )
        _check_substituted(combo)
        combos.append(combo)
    return combos


def _check_substituted(combo: Combination) -> None:
    """Substitution is a single pass: a value carrying ``${name}`` must not reach a task."""
    for text in _strings(combo.model_dump(include={"commands", "inputs", "outputs"})):
        left = PLACEHOLDER.search(text)
        if left:
            raise TemplateInvalid(
                f"combination {combo.index} still holds {left.group(0)} after substitution",
                cause=left.group(1),
            )


def dump_template(template: TaskTemplate) -> str:
    return yaml.safe_dump(template.model_dump(mode="json", exclude_none=True), sort_keys=False, allow_unicode=True)


def parse_template(text: str) -> TaskTemplate:
    try:
        template = TaskTemplate.model_validate(yaml.safe_load(text) or {})
    except (ValidationError, yaml.YAMLError) as e:
        raise TemplateInvalid(f"template does not parse: {e}")
    template.check()
    return template


def load_template(path: Union[str, Path]) -> TaskTemplate:
    return parse_template(Path(path).read_text(encoding="utf-8"))


def save_template(template: TaskTemplate, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_template(template), encoding="utf-8")
