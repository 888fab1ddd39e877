"""
MapReduce model.

The runtime fabricates the jobs itself: one map job per input file, each
writing its pairs into R bucket files, then R reduce jobs that merge their
bucket from every map, sort by key, group, reduce and write ``part-r-<i>``.
Intermediate and output files travel through the storage channels.

Record format, used for intermediate files, outputs and the ``records``
input format: 4-byte big-endian key length, key, 4-byte big-endian value
length, value, repeated.
"""
import json
import logging
import struct
from itertools import groupby
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
from uuid import uuid4

from pydantic import BaseModel, Field, model_validator

from app.appmodel.application import Application, ApplicationManager, error_from_cause
from app.appmodel.schemas import WorkUnit
from app.errors import InvalidRequest, MissingIntermediate, OperationError
from app.execution.schemas import JobPayload, JobState, ProgrammingModel
from app.storage.schemas import DataChannelSpec, Direction, FileDescriptor, StagingPlan

logger = logging.getLogger(__name__)

Pair = Tuple[bytes, bytes]
Mapper = Callable[[bytes, bytes], Iterable[Pair]]
Reducer = Callable[[bytes, List[bytes]], Iterable[Pair]]

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_LEN = struct.Struct(">I")

INPUT_FORMATS = ("text", "records")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def partition(key: bytes, reducers: int) -> int:
    if reducers < 1:
        raise ValueError("reducer count must be at least 1")
    return fnv1a_64(key) % reducers


# ---------------------------------------------------------------- record codec


def encode_pairs(pairs: Iterable[Pair]) -> bytes:
    out = bytearray()
    for key, value in pairs:
        out += _LEN.pack(len(key)) + key + _LEN.pack(len(value)) + value
    return bytes(out)


def decode_pairs(data: bytes) -> List[Pair]:
    pairs = []
    offset = 0
    while offset < len(data):
        key, offset = _field(data, offset)
        value, offset = _field(data, offset)
        pairs.append((key, value))
    return pairs


def _field(data: bytes, offset: int) -> Tuple[bytes, int]:
    if offset + _LEN.size > len(data):
        raise MissingIntermediate("record file is truncated")
    (length,) = _LEN.unpack_from(data, offset)
    start = offset + _LEN.size
    if start + length > len(data):
        raise MissingIntermediate("record file is truncated")
    return data[start:start + length], start + length


def read_input(content: bytes, input_format: str) -> Iterator[Pair]:
    if input_format == "text":
        for number, line in enumerate(content.decode("utf-8").splitlines()):
            yield str(number).encode("ascii"), line.encode("utf-8")
    elif input_format == "records":
        yield from decode_pairs(content)
    else:
        raise OperationError(f"unknown input format {input_format!r}")


# ---------------------------------------------------------------- mappers and reducers


def wordcount_map(key: bytes, value: bytes) -> Iterable[Pair]:
    for word in value.split():
        yield word, b"1"


def identity_map(key: bytes, value: bytes) -> Iterable[Pair]:
    yield key, value


def sum_reduce(key: bytes, values: List[bytes]) -> Iterable[Pair]:
    yield key, str(sum(int(v) for v in values)).encode("ascii")


def identity_reduce(key: bytes, values: List[bytes]) -> Iterable[Pair]:
    for value in values:
        yield key, value


MAPPERS: Dict[str, Mapper] = {"wordcount": wordcount_map, "identity": identity_map}
REDUCERS: Dict[str, Reducer] = {"sum": sum_reduce, "identity": identity_reduce}


def _register(table: Dict[str, Callable], kind: str, name: str, fn: Optional[Callable]):
    def add(func: Callable) -> Callable:
        existing = table.get(name)
        if existing is not None and existing is not func:
            raise InvalidRequest(f"a different {kind} is already registered as {name!r}")
        table[name] = func
        logger.debug(f"Registered {kind} {name}")
        return func

    return add(fn) if fn is not None else add


def register_mapper(name: str, fn: Optional[Mapper] = None):
    """
    Make ``fn`` available to map jobs as ``name``. Works as a decorator
    (``@register_mapper("name")``). Every node that runs map jobs must
    register the same function under the same name.
    """
    return _register(MAPPERS, "mapper", name, fn)


def register_reducer(name: str, fn: Optional[Reducer] = None):
    """Reducer counterpart of :func:`register_mapper`."""
    return _register(REDUCERS, "reducer", name, fn)


def _lookup(table: Dict[str, Callable], name: str, kind: str) -> Callable:
    try:
        return table[name]
    except KeyError:
        raise OperationError(f"no {kind} named {name!r}")


def map_buckets(mapper: Mapper, pairs: Iterable[Pair], reducers: int) -> List[List[Pair]]:
    buckets: List[List[Pair]] = [[] for _ in range(reducers)]
    for key, value in pairs:
        for out_key, out_value in mapper(key, value):
            buckets[partition(out_key, reducers)].append((out_key, out_value))
    return buckets


def reduce_sorted(reducer: Reducer, pairs: Iterable[Pair]) -> List[Pair]:
    """Sort by key bytes, group and reduce."""
    out: List[Pair] = []
    for key, group in groupby(sorted(pairs, key=lambda p: p[0]), key=lambda p: p[0]):
        out.extend(reducer(key, [v for _, v in group]))
    return out


def run_sequential(
    mapper: str,
    reducer: str,
    inputs: Sequence[bytes],
    reducers: int = 1,
    input_format: str = "text",
) -> List[bytes]:
    """Single-process run over the same code; returns the R part files."""
    buckets: List[List[Pair]] = [[] for _ in range(reducers)]
    map_fn = _lookup(MAPPERS, mapper, "mapper")
    reduce_fn = _lookup(REDUCERS, reducer, "reducer")
    for content in inputs:
        for index, bucket in enumerate(map_buckets(map_fn, read_input(content, input_format), reducers)):
            buckets[index].extend(bucket)
    return [encode_pairs(reduce_sorted(reduce_fn, bucket)) for bucket in buckets]


# ---------------------------------------------------------------- executor operations


def map_operation(params: bytes, ctx) -> bytes:
    """{"mapper", "reducers", "input", "format"} -> bucket-<i> files; result {"per_bucket": [...]}."""
    p = json.loads(params.decode("utf-8"))
    mapper = _lookup(MAPPERS, p["mapper"], "mapper")
    reducers = int(p["reducers"])
    content = ctx.path(p.get("input", "input")).read_bytes()
    buckets = map_buckets(mapper, read_input(content, p.get("format", "text")), reducers)
    for index, bucket in enumerate(buckets):
        ctx.check_cancelled()
        ctx.path(f"bucket-{index}").write_bytes(encode_pairs(bucket))
    return json.dumps({"per_bucket": [len(b) for b in buckets]}).encode("utf-8")


def reduce_operation(params: bytes, ctx) -> bytes:
    """{"reducer", "inputs", "expected", "output"} -> output file; result {"pairs_in", "pairs_out"}."""
    p = json.loads(params.decode("utf-8"))
    reducer = _lookup(REDUCERS, p["reducer"], "reducer")
    expected = p.get("expected")
    pairs: List[Pair] = []
    for index, name in enumerate(p.get("inputs", [])):
        path = ctx.path(name)
        if not path.is_file():
            raise MissingIntermediate(f"intermediate {name} is missing")
        chunk = decode_pairs(path.read_bytes())
        if expected is not None and len(chunk) != expected[index]:
            raise MissingIntermediate(f"intermediate {name} holds {len(chunk)} pairs, expected {expected[index]}")
        pairs.extend(chunk)
    out = reduce_sorted(reducer, pairs)
    ctx.path(p["output"]).write_bytes(encode_pairs(out))
    return json.dumps({"pairs_in": len(pairs), "pairs_out": len(out)}).encode("utf-8")


MAPREDUCE_OPERATIONS = {"mr.map": map_operation, "mr.reduce": reduce_operation}


# ---------------------------------------------------------------- client runtime


class MapReduceManager(ApplicationManager):
    model = ProgrammingModel.MAPREDUCE


class MapReduceConfig(BaseModel):
    mapper: str
    reducer: str
    reducer_count: int = Field(1, ge=1)
    inputs: List[FileDescriptor] = Field(default_factory=list)
    output_channel: Optional[DataChannelSpec] = None
    input_format: str = "text"
    max_attempts: int = Field(3, ge=1)

    @model_validator(mode="after")
    def _known(self) -> "MapReduceConfig":
        if self.mapper not in MAPPERS:
            raise ValueError(f"mapper {self.mapper!r} is not registered")
        if self.reducer not in REDUCERS:
            raise ValueError(f"reducer {self.reducer!r} is not registered")
        if self.input_format not in INPUT_FORMATS:
            raise ValueError(f"input_format must be one of {INPUT_FORMATS}")
        return self


class MapReduceReport(BaseModel):
    outputs: List[FileDescriptor] = Field(default_factory=list)
    pairs_mapped: int = 0
    pairs_reduced: int = 0


def intermediate_name(app_id: str, map_id: str, bucket: int) -> str:
    return f"mr/{app_id}/{map_id}/{bucket}"


def output_name(app_id: str, bucket: int) -> str:
    return f"mr/{app_id}/part-r-{bucket}"


def _run_phase(app: Application, units: List[WorkUnit], timeout: Optional[float]) -> List[WorkUnit]:
    ids = [app.add_unit(u) for u in units]
    app.submit()
    app.wait(timeout)
    done = [app.unit(i) for i in ids]
    for unit in done:
        if unit.state != JobState.COMPLETED:
            app.stop()
            raise error_from_cause(unit.failure_cause if unit.state == JobState.FAILED else "Aborted")
    return done


def mapreduce_run(
    app: Application,
    config: MapReduceConfig,
    timeout: Optional[float] = None,
    collect_to: Optional[Path] = None,
) -> MapReduceReport:
    """
    Run a full map and reduce over ``config.inputs``. With ``collect_to`` the
    part files are also downloaded into that directory.
    """
    if app.descriptor.model != ProgrammingModel.MAPREDUCE:
        raise InvalidRequest(f"application {app.app_id} is not a mapreduce application")
    channel = config.output_channel or app.channel()
    r = config.reducer_count

    maps: List[WorkUnit] = []
    for source in config.inputs:
        map_id = str(uuid4())
        outputs = [
            FileDescriptor(logical_name=intermediate_name(app.app_id, map_id, b), channel=channel, local_name=f"bucket-{b}")
            for b in range(r)
        ]
        params = {"mapper": config.mapper, "reducers": r, "input": "input", "format": config.input_format}
        maps.append(WorkUnit(
            unit_id=map_id,
            payload=JobPayload(operation="mr.map", params=json.dumps(params).encode("utf-8")),
            staging=StagingPlan(inputs=[source.model_copy(update={"local_name": "input"})], outputs=outputs),
            max_attempts=config.max_attempts,
        ))
    done_maps = _run_phase(app, maps, timeout) if maps else []

    per_bucket: Dict[str, List[int]] = {}
    for unit in done_maps:
        per_bucket[unit.unit_id] = json.loads((unit.result or b"{}").decode("utf-8")).get("per_bucket", [])
        if len(per_bucket[unit.unit_id]) != r:
            raise MissingIntermediate(f"map {unit.unit_id} reported {len(per_bucket[unit.unit_id])} buckets, expected {r}")
    status = app.status()
    produced = {fd.logical_name for job in status.jobs for fd in job.outputs}
    for unit in done_maps:
        for b in range(r):
            if intermediate_name(app.app_id, unit.unit_id, b) not in produced:
                raise MissingIntermediate(f"map {unit.unit_id} never stored bucket {b}")

    reduces: List[WorkUnit] = []
    for b in range(r):
        inputs = [
            FileDescriptor(logical_name=intermediate_name(app.app_id, m.unit_id, b), channel=channel, local_name=f"in-{k}")
            for k, m in enumerate(done_maps)
        ]
        params = {
            "reducer": config.reducer,
            "inputs": [fd.local_name for fd in inputs],
            "expected": [per_bucket[m.unit_id][b] for m in done_maps],
            "output": f"part-r-{b}",
        }
        output = FileDescriptor(
            logical_name=output_name(app.app_id, b), channel=channel, local_name=f"part-r-{b}", direction=Direction.OUTPUT
        )
        reduces.append(WorkUnit(
            payload=JobPayload(operation="mr.reduce", params=json.dumps(params).encode("utf-8")),
            staging=StagingPlan(inputs=inputs, outputs=[output]),
            max_attempts=config.max_attempts,
        ))
    done_reduces = _run_phase(app, reduces, timeout)

    by_name = {fd.logical_name: fd for job in app.status().jobs for fd in job.outputs}
    outputs = []
    for b in range(r):
        descriptor = by_name.get(output_name(app.app_id, b))
        if descriptor is None:
            raise MissingIntermediate(f"reduce output part-r-{b} was not stored")
        outputs.append(descriptor)

    report = MapReduceReport(
        outputs=outputs,
        pairs_mapped=sum(sum(counts) for counts in per_bucket.values()),
        pairs_reduced=sum(json.loads((u.result or b"{}").decode("utf-8")).get("pairs_in", 0) for u in done_reduces),
    )
    if report.pairs_mapped != report.pairs_reduced:
        raise MissingIntermediate(f"maps wrote {report.pairs_mapped} pairs but reduces read {report.pairs_reduced}")
    if collect_to is not None:
        target = Path(collect_to)
        target.mkdir(parents=True, exist_ok=True)
        for b, descriptor in enumerate(outputs):
            app.download(descriptor, target / f"part-r-{b}")
    logger.info(f"MapReduce {app.app_id}: {len(done_maps)} maps, {r} reduces, {report.pairs_mapped} pairs")
    return report


def collect_pairs(app: Application, report: MapReduceReport) -> List[Pair]:
    """All output pairs, part by part."""
    pairs: List[Pair] = []
    for descriptor in report.outputs:
        pairs.extend(decode_pairs(app.download(descriptor)))
    return pairs
