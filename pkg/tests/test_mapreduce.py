"""
Tests for the MapReduce model: partitioning, the record codec, the
map/reduce operations and a distributed run checked against the
sequential runner.
"""
import json

import pytest

from app.errors import InvalidRequest, MissingIntermediate, OperationError
from app.execution.operations import OperationContext, get_operation_registry
from app.models.mapreduce import (
    MAPPERS,
    REDUCERS,
    MapReduceConfig,
    decode_pairs,
    encode_pairs,
    fnv1a_64,
    partition,
    read_input,
    register_mapper,
    register_reducer,
    run_sequential,
)

TEXTS = [
    b"the quick brown fox\njumps over the lazy dog\n",
    b"the dog sleeps\nthe fox runs\n",
    b"",
]


def test_fnv1a_known_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_partition_is_stable_and_in_range():
    keys = [f"key-{i}".encode() for i in range(200)]
    first = [partition(k, 7) for k in keys]
    assert first == [partition(k, 7) for k in keys]
    assert set(first) <= set(range(7))
    assert all(partition(k, 1) == 0 for k in keys)
    with pytest.raises(ValueError):
        partition(b"k", 0)


def test_record_codec_handles_binary_and_empty_fields():
    pairs = [(b"", b""), (b"\x00\xff", b"value"), (b"k", b"\n" * 3)]
    data = encode_pairs(pairs)
    assert data[:4] == b"\x00\x00\x00\x00"
    assert decode_pairs(data) == pairs
    with pytest.raises(MissingIntermediate):
        decode_pairs(data[:-1])


def test_text_input_keys_are_line_numbers():
    assert list(read_input(b"a b\nc\n", "text")) == [(b"0", b"a b"), (b"1", b"c")]
    with pytest.raises(OperationError):
        list(read_input(b"", "csv"))


def test_sequential_wordcount():
    parts = run_sequential("wordcount", "sum", TEXTS, reducers=1)
    counts = dict(decode_pairs(parts[0]))
    assert counts[b"the"] == b"4"
    assert counts[b"fox"] == b"2"
    assert counts[b"lazy"] == b"1"
    assert [k for k, _ in decode_pairs(parts[0])] == sorted(counts)


def test_sequential_partitions_cover_every_key_once():
    one = dict(decode_pairs(run_sequential("wordcount", "sum", TEXTS, reducers=1)[0]))
    parts = run_sequential("wordcount", "sum", TEXTS, reducers=4)
    merged = {}
    for index, part in enumerate(parts):
        for key, value in decode_pairs(part):
            assert partition(key, 4) == index
            assert key not in merged
            merged[key] = value
    assert merged == one


def test_config_validation():
    with pytest.raises(ValueError):
        MapReduceConfig(mapper="nope", reducer="sum")
    with pytest.raises(ValueError):
        MapReduceConfig(mapper="wordcount", reducer="sum", input_format="xml")
    with pytest.raises(ValueError):
        MapReduceConfig(mapper="wordcount", reducer="sum", reducer_count=0)


# ---------------------------------------------------------------- operations


def test_map_then_reduce_operations(tmp_path):
    registry = get_operation_registry()
    ctx = OperationContext(workspace=tmp_path, job_id="m")
    (tmp_path / "input").write_bytes(TEXTS[0])
    result = json.loads(registry.run("mr.map", json.dumps({"mapper": "wordcount", "reducers": 2}).encode(), ctx))
    assert sum(result["per_bucket"]) == 9
    assert (tmp_path / "bucket-0").exists() and (tmp_path / "bucket-1").exists()

    params = {"reducer": "sum", "inputs": ["bucket-0", "bucket-1"], "expected": result["per_bucket"], "output": "out"}
    reduced = json.loads(registry.run("mr.reduce", json.dumps(params).encode(), ctx))
    assert reduced["pairs_in"] == 9
    assert dict(decode_pairs((tmp_path / "out").read_bytes()))[b"the"] == b"2"


def test_reduce_detects_short_intermediates(tmp_path):
    ctx = OperationContext(workspace=tmp_path, job_id="r")
    (tmp_path / "b").write_bytes(encode_pairs([(b"k", b"1")]))
    params = {"reducer": "sum", "inputs": ["b"], "expected": [2], "output": "out"}
    with pytest.raises(MissingIntermediate):
        get_operation_registry().run("mr.reduce", json.dumps(params).encode(), ctx)
    params = {"reducer": "sum", "inputs": ["ghost"], "output": "out"}
    with pytest.raises(MissingIntermediate):
        get_operation_registry().run("mr.reduce", json.dumps(params).encode(), ctx)


def test_unknown_mapper_in_operation(tmp_path):
    ctx = OperationContext(workspace=tmp_path, job_id="m")
    (tmp_path / "input").write_bytes(b"x")
    with pytest.raises(OperationError):
        get_operation_registry().run("mr.map", json.dumps({"mapper": "nope", "reducers": 1}).encode(), ctx)


# ---------------------------------------------------------------- distributed run


def test_distributed_wordcount_matches_sequential(cloud_client, tmp_path):
    from app.appmodel.application import create_application
    from app.models.mapreduce import collect_pairs, mapreduce_run

    app = create_application(cloud_client, "mapreduce")
    inputs = [app.upload(f"corpus/{i}.txt", text) for i, text in enumerate(TEXTS)]
    config = MapReduceConfig(mapper="wordcount", reducer="sum", reducer_count=3, inputs=inputs)
    report = mapreduce_run(app, config, timeout=60, collect_to=tmp_path / "out")

    assert len(report.outputs) == 3
    assert report.pairs_mapped == report.pairs_reduced == 15
    expected = run_sequential("wordcount", "sum", TEXTS, reducers=3)
    assert [(tmp_path / "out" / f"part-r-{b}").read_bytes() for b in range(3)] == expected
    assert sorted(collect_pairs(app, report)) == sorted(p for part in expected for p in decode_pairs(part))
    app.close()


def line_length_map(key: bytes, value: bytes):
    if value:
        yield value.split()[0], str(len(value)).encode("ascii")


def longest_reduce(key: bytes, values):
    yield key, str(max(int(v) for v in values)).encode("ascii")


@pytest.fixture
def custom_phases():
    register_mapper("line_length", line_length_map)
    register_reducer("longest")(longest_reduce)
    yield
    MAPPERS.pop("line_length", None)
    REDUCERS.pop("longest", None)


def test_registration_refuses_a_different_function(custom_phases):
    assert register_mapper("line_length", line_length_map) is line_length_map
    with pytest.raises(InvalidRequest):
        register_mapper("line_length", lambda k, v: [])
    with pytest.raises(InvalidRequest):
        register_reducer("sum", longest_reduce)


def test_distributed_run_with_registered_functions(custom_phases, cloud_client):
    from app.appmodel.application import create_application
    from app.models.mapreduce import collect_pairs, mapreduce_run

    app = create_application(cloud_client, "mapreduce")
    inputs = [app.upload(f"lines/{i}.txt", text) for i, text in enumerate(TEXTS)]
    config = MapReduceConfig(mapper="line_length", reducer="longest", reducer_count=2, inputs=inputs)
    report = mapreduce_run(app, config, timeout=60)

    pairs = dict(collect_pairs(app, report))
    assert pairs == {b"the": b"19", b"jumps": b"23"}
    expected = run_sequential("line_length", "longest", TEXTS, reducers=2)
    assert sorted(pairs.items()) == sorted(p for part in expected for p in decode_pairs(part))
    app.close()


def test_mapreduce_run_needs_a_mapreduce_application(cloud_client):
    from app.appmodel.application import create_application
    from app.models.mapreduce import mapreduce_run

    app = create_application(cloud_client, "task")
    with pytest.raises(InvalidRequest):
        mapreduce_run(app, MapReduceConfig(mapper="wordcount", reducer="sum"))
    app.close()
