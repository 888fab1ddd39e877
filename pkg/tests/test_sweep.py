"""
Tests for parameter sweep templates: expansion order, placeholder checks,
YAML files, the wizard and the sweep CLI.
"""
import json

import pytest

from app.errors import EmptyDomain, InvalidRequest, TemplateInvalid, UndeclaredPlaceholder
from app.sweep.cli import main
from app.sweep.runner import to_unit
from app.sweep.template import (
    CommandSpec,
    FileSpec,
    ParameterDomain,
    TaskTemplate,
    expand,
    format_number,
    load_template,
    parse_template,
    save_template,
)
from app.sweep.wizard import run_wizard


def _enum(name, *values):
    return ParameterDomain(name=name, kind="enumeration", values=list(values))


def _range(name, start, step, count):
    return ParameterDomain(name=name, kind="range", start=start, step=step, count=count)


def _template(**kwargs) -> TaskTemplate:
    defaults = dict(
        name="render",
        executable="render",
        domains=[_range("x", 0, 0.5, 3), _enum("color", "red", "blue")],
        inputs=[FileSpec(name="scenes/${color}.txt", local_name="scene.txt")],
        outputs=[FileSpec(name="frames/${x}-${color}.png", local_name="frame.png")],
        commands=[CommandSpec(operation="run_process", params={"command": "render", "args": ["${x}", "${color}"]})],
    )
    defaults.update(kwargs)
    return TaskTemplate(**defaults)


def test_expansion_is_the_full_cartesian_product():
    domains = [_enum("a", *"1234"), _enum("b", *"abcde"), _range("c", 1, 1, 6)]
    template = _template(domains=domains, inputs=[], outputs=[], commands=[
        CommandSpec(operation="echo", params={"v": "${a}${b}${c}"}),
    ])
    combos = expand(template)
    assert len(combos) == 120 == template.combinations_count()
    assert len({c.commands[0].params["v"] for c in combos}) == 120
    assert [c.index for c in combos] == list(range(120))


def test_odometer_order_last_domain_fastest():
    combos = expand(_template())
    assert [(c.parameters["x"], c.parameters["color"]) for c in combos] == [
        ("0.0", "red"), ("0.0", "blue"), ("0.5", "red"), ("0.5", "blue"), ("1.0", "red"), ("1.0", "blue"),
    ]
    first = combos[0]
    assert first.commands[0].params["args"] == ["0.0", "red"]
    assert first.inputs[0].name == "scenes/red.txt"
    assert first.outputs[0].name == "frames/0.0-red.png"


def test_number_formatting():
    assert [format_number(v) for v in (3, 0.5, 1e-07, 2.0)] == ["3", "0.5", "1e-07", "2.0"]
    assert _range("n", 1, 2, 3).text_values() == ["1", "3", "5"]


def test_undeclared_placeholder_is_rejected():
    template = _template(commands=[CommandSpec(operation="echo", params={"v": "${missing}"})])
    with pytest.raises(UndeclaredPlaceholder) as info:
        expand(template)
    assert info.value.cause == "missing"


def test_values_that_carry_placeholders_are_rejected():
    template = _template(domains=[_range("x", 0, 0.5, 3), _enum("color", "red", "${x}")])
    with pytest.raises(TemplateInvalid) as info:
        expand(template)
    assert info.value.cause == "x"
    assert "combination 1" in info.value.message


def test_empty_domains_are_rejected():
    with pytest.raises(EmptyDomain):
        expand(_template(domains=[_range("x", 0, 1, 0), _enum("color", "red")]))
    with pytest.raises(EmptyDomain):
        expand(_template(domains=[_range("x", 0, 1, 2), _enum("color")]))


def test_structural_errors():
    with pytest.raises(TemplateInvalid):
        expand(_template(commands=[]))
    with pytest.raises(TemplateInvalid):
        expand(_template(domains=[_range("x", 0, 0, 2), _enum("color", "red")]))
    with pytest.raises(ValueError):
        _template(domains=[_enum("x", "1"), _enum("x", "2")])


def test_unused_domain_only_warns(caplog):
    template = _template(domains=[_range("x", 0, 1, 1), _enum("color", "red"), _enum("extra", "a", "b")])
    assert len(expand(template)) == 2
    assert "extra" in caplog.text


def test_yaml_round_trip_keeps_field_order(tmp_path):
    path = tmp_path / "render.yaml"
    save_template(_template(), path)
    text = path.read_text(encoding="utf-8")
    assert text.index("name:") < text.index("domains:") < text.index("inputs:") < text.index("commands:")
    assert load_template(path) == _template()


def test_unparseable_template():
    with pytest.raises(TemplateInvalid):
        parse_template("domains: [oops")
    with pytest.raises(TemplateInvalid):
        parse_template("domains: {not: a list}\ncommands: []")


def test_single_command_runs_directly_and_several_as_a_sequence():
    from app.storage.schemas import DataChannelSpec

    channel = DataChannelSpec(scheme="local", root="/tmp/space")
    combo = expand(_template())[0]
    unit = to_unit(combo, channel)
    assert unit.payload.operation == "run_process"
    assert unit.staging.inputs[0].local_name == "scene.txt"
    assert unit.staging.outputs[0].logical_name == "frames/0.0-red.png"

    two = _template(commands=[
        CommandSpec(operation="echo", params={"v": "${x}"}),
        CommandSpec(operation="fib", params={"n": "${x}"}),
    ])
    unit = to_unit(expand(two)[0], channel)
    assert unit.payload.operation == "task_sequence"
    assert [s["operation"] for s in json.loads(unit.payload.params)["steps"]] == ["echo", "fib"]
    with pytest.raises(InvalidRequest):
        to_unit(combo, None)


# ---------------------------------------------------------------- wizard


def _scripted(*answers):
    queue = list(answers)
    return lambda prompt: queue.pop(0)


def test_wizard_builds_and_saves_a_template(tmp_path):
    said = []
    answers = _scripted(
        "",                   # executable required
        "render",
        "x", "r", "0", "0.5", "3",
        "color", "e", "",     # empty enumeration is re-asked
        "e", "red, blue",
        "",                   # no more parameters
        "scenes/${color}.txt=scene.txt",
        "frames/${x}-${color}.png=frame.png",
        "render ${x} ${color} scene.txt",
        "",
    )
    template = run_wizard(tmp_path / "render.yaml", ask=answers, say=said.append)
    assert template.name == "render"
    assert template.combinations_count() == 6
    assert any("required" in line for line in said)
    assert any("at least one value" in line for line in said)
    assert load_template(tmp_path / "render.yaml").commands[0].params == {
        "command": "render", "args": ["${x}", "${color}", "scene.txt"],
    }


# ---------------------------------------------------------------- cli


def test_cli_expand_dry_run(tmp_path, capsys):
    path = tmp_path / "render.yaml"
    save_template(_template(), path)
    assert main(["expand", str(path), "--dry-run"]) == 0
    captured = capsys.readouterr()
    assert captured.out.count("run_process") == 6
    assert "[5] x=1.0 color=blue" in captured.out
    assert "6 tasks (dry run" in captured.err


def test_cli_expand_reports_template_errors(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    save_template(_template(commands=[CommandSpec(operation="echo", params={"v": "${nope}"})]), path)
    assert main(["expand", str(path)]) != 0
    assert "UndeclaredPlaceholder" in capsys.readouterr().err


def test_cli_run_against_a_live_cloud(running_cloud, tmp_path, capsys):
    path = tmp_path / "fib.yaml"
    save_template(TaskTemplate(
        name="fib",
        domains=[_range("n", 10, 5, 3)],
        commands=[CommandSpec(operation="fib", params={"n": "${n}"})],
    ), path)
    code = main(["--log-level", "CRITICAL", "run", str(path), "--master", running_cloud.master.endpoint, "--timeout", "30", "--json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert [e["state"] for e in report["entries"]] == ["completed"] * 3
    assert report["counts"]["completed"] == 3
