"""
Tests for data channels, the aftp transfer protocol, staging and the
storage service catalogue.
"""
import pytest

from app.errors import (
    AuthFailed,
    ChannelUnreachable,
    DigestMismatch,
    DuplicateScheme,
    FileMissing,
    PathRejected,
    StageFailure,
)
from app.storage.aftp import CHUNK, AftpClient, AftpServer
from app.storage.channels import (
    ChannelRegistry,
    LocalChannelClient,
    LocalChannelServer,
    confine,
    get_channel_registry,
    sha256_hex,
)
from app.storage.schemas import DataChannelSpec, FileDescriptor, StagingPlan
from app.storage.staging import stage_in, stage_out
from tests.conftest import wait_until


@pytest.fixture
def aftp_server(tmp_path):
    server = AftpServer(DataChannelSpec(scheme="aftp", endpoint="127.0.0.1:0", credentials="tok"), root=str(tmp_path / "space"))
    spec = server.start()
    yield server, spec
    server.stop()


def test_channel_uri_parsing():
    spec = DataChannelSpec.parse("aftp://s3cret@127.0.0.1:7100/shared")
    assert (spec.scheme, spec.endpoint, spec.credentials, spec.root) == ("aftp", "127.0.0.1:7100", "s3cret", "shared")
    local = DataChannelSpec.parse("local:///tmp/space")
    assert (local.endpoint, local.root) == ("", "/tmp/space")
    assert DataChannelSpec.parse(spec.uri()) == spec
    with pytest.raises(ValueError):
        DataChannelSpec.parse("no-scheme")


@pytest.mark.parametrize("name", ["../etc/passwd", "/abs", "a/../../b", "", "a\\b", "nul\x00byte"])
def test_confine_rejects_escaping_names(tmp_path, name):
    with pytest.raises(PathRejected):
        confine(tmp_path, name)


def test_confine_allows_nested_names(tmp_path):
    assert confine(tmp_path, "a/b/c.txt") == (tmp_path / "a" / "b" / "c.txt").resolve()


def test_local_channel_put_get_list_delete(tmp_path):
    client = LocalChannelClient(DataChannelSpec(scheme="local", root=str(tmp_path)))
    descriptor = client.put("dir/data.bin", b"payload")
    assert descriptor.digest == sha256_hex(b"payload")
    assert descriptor.size_bytes == 7
    assert client.get("dir/data.bin") == b"payload"
    assert client.list("dir/") == ["dir/data.bin"]
    client.delete("dir/data.bin")
    client.delete("dir/data.bin")
    with pytest.raises(FileMissing):
        client.get("dir/data.bin")


def test_registry_refuses_duplicate_schemes():
    registry = ChannelRegistry()
    registry.register_channel("local", LocalChannelClient, LocalChannelServer)
    with pytest.raises(DuplicateScheme):
        registry.register_channel("local", LocalChannelClient, LocalChannelServer)
    with pytest.raises(ChannelUnreachable):
        registry.client(DataChannelSpec(scheme="gopher"))
    assert get_channel_registry().schemes() == ["aftp", "local"]


def test_aftp_transfers_multi_chunk_content(aftp_server):
    _, spec = aftp_server
    client = AftpClient(spec)
    content = bytes(range(256)) * (CHUNK // 256 * 3 + 7)
    descriptor = client.put("big.bin", content)
    assert descriptor.digest == sha256_hex(content)
    assert client.get("big.bin") == content
    assert client.list() == ["big.bin"]
    client.delete("big.bin")
    assert client.list() == []


def test_aftp_empty_file(aftp_server):
    _, spec = aftp_server
    client = AftpClient(spec)
    client.put("empty", b"")
    assert client.get("empty") == b""


def test_aftp_rejects_wrong_token(aftp_server):
    _, spec = aftp_server
    client = AftpClient(spec.model_copy(update={"credentials": "wrong"}))
    with pytest.raises(AuthFailed):
        client.put("x", b"data")
    with pytest.raises(AuthFailed):
        client.get("x")


def test_aftp_missing_file_and_bad_path(aftp_server):
    _, spec = aftp_server
    client = AftpClient(spec)
    with pytest.raises(FileMissing):
        client.get("nothing")
    with pytest.raises(PathRejected):
        client.put("../escape", b"x")


def test_aftp_detects_corruption_in_flight(aftp_server):
    """A flipped bit in a data frame fails the trailer digest on either side."""
    server, spec = aftp_server
    client = AftpClient(spec)
    client.put("f", b"hello world")

    server.corrupt_frame = lambda index, data: bytes([data[0] ^ 1]) + data[1:]
    with pytest.raises((DigestMismatch, ChannelUnreachable)):
        client.get("f")
    server.corrupt_frame = None

    client.corrupt_frame = lambda index, data: bytes([data[0] ^ 1]) + data[1:]
    with pytest.raises((DigestMismatch, ChannelUnreachable)):
        client.put("g", b"hello world")
    client.corrupt_frame = None
    assert "g" not in client.list()


def test_aftp_root_prefix_scopes_names(aftp_server):
    _, spec = aftp_server
    scoped = AftpClient(spec.model_copy(update={"root": "apps/a1"}))
    scoped.put("in.txt", b"1")
    assert scoped.list() == ["in.txt"]
    assert AftpClient(spec).list() == ["apps/a1/in.txt"]


def test_unreachable_aftp_server():
    client = AftpClient(DataChannelSpec(scheme="aftp", endpoint="127.0.0.1:1", credentials=""), timeout_s=0.5)
    with pytest.raises(ChannelUnreachable):
        client.get("x")


# ---------------------------------------------------------------- staging


def _local(tmp_path) -> DataChannelSpec:
    return DataChannelSpec(scheme="local", root=str(tmp_path / "channel"))


def test_stage_in_and_out(tmp_path):
    channel = _local(tmp_path)
    source = LocalChannelClient(channel).put("inputs/a.txt", b"alpha")
    workspace = tmp_path / "ws"
    workspace.mkdir()
    plan = StagingPlan(
        inputs=[source.model_copy(update={"local_name": "a.txt"})],
        outputs=[
            FileDescriptor(logical_name="results/out.txt", channel=channel, local_name="out.txt"),
            FileDescriptor(logical_name="results/never.txt", channel=channel),
        ],
    )
    stage_in(plan, workspace)
    assert (workspace / "a.txt").read_bytes() == b"alpha"

    (workspace / "out.txt").write_bytes(b"omega")
    report = stage_out(plan, workspace)
    assert [o.logical_name for o in report.outputs] == ["results/out.txt"]
    assert report.outputs[0].digest == sha256_hex(b"omega")
    assert report.missing == ["results/never.txt"]
    assert LocalChannelClient(channel).get("results/out.txt") == b"omega"


def test_stage_in_checks_descriptor_digest(tmp_path):
    channel = _local(tmp_path)
    stored = LocalChannelClient(channel).put("a", b"alpha")
    plan = StagingPlan(inputs=[stored.model_copy(update={"digest": sha256_hex(b"other")})])
    with pytest.raises(StageFailure) as info:
        stage_in(plan, tmp_path)
    assert info.value.cause == "DigestMismatch"


def test_stage_in_missing_input(tmp_path):
    plan = StagingPlan(inputs=[FileDescriptor(logical_name="ghost", channel=_local(tmp_path))])
    with pytest.raises(StageFailure) as info:
        stage_in(plan, tmp_path)
    assert info.value.cause == "FileMissing"


def test_staging_plan_rejects_duplicate_names(tmp_path):
    fd = FileDescriptor(logical_name="same", channel=_local(tmp_path))
    with pytest.raises(ValueError):
        StagingPlan(inputs=[fd], outputs=[fd])


# ---------------------------------------------------------------- storage service


def test_storage_service_catalogues_uploads(running_cloud):
    from app.container.wire import parse_body
    from app.storage.schemas import CatalogueReply, LocateReply

    master = running_cloud.master
    channel = parse_body(master.call(master.node_id, "storage", "sto.locate"), LocateReply).channel
    assert channel.scheme == "aftp"
    AftpClient(channel).put("shared/input.dat", b"12345")

    def catalogued() -> bool:
        reply = parse_body(master.call(master.node_id, "storage", "sto.catalogue"), CatalogueReply)
        return [f.logical_name for f in reply.files] == ["shared/input.dat"]

    assert wait_until(catalogued)
    AftpClient(channel).delete("shared/input.dat")
    assert wait_until(lambda: not parse_body(
        master.call(master.node_id, "storage", "sto.catalogue"), CatalogueReply
    ).files)
