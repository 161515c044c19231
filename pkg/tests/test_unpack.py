import bz2
import gzip
import io
import json
import lzma
import os
import tarfile
import zipfile

import pytest

from conftest import fixture_bytes
from firmsec import unpack
from firmsec.unpack import (
    CarveStats,
    CorruptArchive,
    DepthExceeded,
    EncryptedEntry,
    FirmwareRecord,
    Handler,
    SchemaError,
    UnpackStatus,
    carve_elves,
    carve_kernels,
    expand_archive,
    has_firmware_extension,
    ingest_manifest,
    iter_tree,
    looks_encrypted_or_nonlinux,
    normalize_device_type,
    register_handler,
    walk_tree,
)

BANNER = b"Linux version 3.10.14 (b@h) (gcc 4.8) #1 Tue Mar 3 10:00:00 CST 2015"


def tar_bytes(files: dict) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tf:
        for name, data in files.items():
            info = tarfile.TarInfo(name)
            info.size = len(data)
            tf.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def zip_bytes(files: dict) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in files.items():
            zf.writestr(name, data)
    return buf.getvalue()


def test_nested_containers_expand_to_leaves():
    inner = zip_bytes({"etc/passwd": b"root:x:0:0", "bin/a.xz": lzma.compress(b"AAAA")})
    outer = gzip.compress(tar_bytes({"fw/inner.zip": inner, "fw/b.bz2": bz2.compress(b"BBBB")}))
    leaves = dict(expand_archive(outer, name="image.tar.gz"))
    assert leaves == {
        "image.tar.gz/image.tar/fw/inner.zip/etc/passwd": b"root:x:0:0",
        "image.tar.gz/image.tar/fw/inner.zip/bin/a.xz/a": b"AAAA",
        "image.tar.gz/image.tar/fw/b.bz2/b": b"BBBB",
    }


def test_lzma_alone_stream():
    data = lzma.compress(b"hello" * 100, format=lzma.FORMAT_ALONE)
    assert expand_archive(data, name="k.lzma") == [("k.lzma/k", b"hello" * 100)]


def test_plain_blob_is_a_single_leaf():
    assert expand_archive(b"just bytes") == [("", b"just bytes")]


def test_self_referencing_archive_terminates(monkeypatch):
    monkeypatch.setattr(unpack, "HANDLERS", list(unpack.HANDLERS))
    magic = b"SELFARC!"
    register_handler(Handler("self", lambda d, n: d.startswith(magic), lambda d, n: [("me", d), ("leaf", b"x")]))
    errors = []
    leaves = expand_archive(magic + b"payload", errors=errors)
    assert leaves == [("leaf", b"x")]
    assert len(errors) == 1 and "includes itself" in str(errors[0])


def test_depth_limit():
    data = b"core"
    for _ in range(6):
        data = gzip.compress(data)
    errors = []
    leaves = expand_archive(data, depth_limit=3, errors=errors)
    assert len(leaves) == 1
    assert any(isinstance(e, DepthExceeded) for e in errors)


def test_corrupt_container_passes_through():
    bad = gzip.compress(b"x" * 1000)[:20]
    errors = []
    assert expand_archive(bad, errors=errors) == [("", bad)]
    assert isinstance(errors[0], CorruptArchive)


def test_encrypted_zip_entry():
    data = bytearray(zip_bytes({"secret.bin": b"s" * 100}))
    for sig in (b"PK\x03\x04", b"PK\x01\x02"):
        pos = data.find(sig)
        flag_at = pos + (6 if sig == b"PK\x03\x04" else 8)
        data[flag_at] |= 1
    errors = []
    expand_archive(bytes(data), errors=errors)
    assert any(isinstance(e, EncryptedEntry) for e in errors)
    assert looks_encrypted_or_nonlinux(bytes(data), errors)


def test_nonlinux_marker():
    assert looks_encrypted_or_nonlinux(b"\0\0VxWorks 6.9\0", [])
    assert not looks_encrypted_or_nonlinux(b"random", [])


def test_truncated_gzip_kernel_candidate():
    blob = b"\xff" * 64 + gzip.compress(BANNER + b"\0" * 4096)[:40]
    stats = CarveStats()
    assert carve_kernels(blob, "blob", stats) == []
    assert stats.kernel_failed_candidates == 1
    assert len(stats.notes) == 1


def test_compressed_kernel_is_carved():
    blob = b"\x00" * 100 + gzip.compress(b"\0" * 64 + BANNER + b"\0" * 64) + b"\xff" * 10
    (art,) = carve_kernels(blob, "blob")
    assert art.offset == 100 and BANNER in art.bytes and art.note == "gzip"


def test_uncompressed_banner_is_a_candidate():
    (art,) = carve_kernels(b"xx" + BANNER + b"\0", "Image")
    assert art.note == "uncompressed"


def test_carve_embedded_elves_and_false_positives():
    a = fixture_bytes("arm-static-none-symbols")
    b = fixture_bytes("x64-dynamic-all-stripped")
    blob = b"\0" * 32 + b"\x7fELF garbage" + b"\0" * 60 + a + b
    stats = CarveStats()
    arts = carve_elves(blob, "blob", stats)
    assert [x.offset for x in arts] == [blob.find(a), blob.find(b)]
    assert arts[1].bytes == b


def test_iter_tree_handles_symlink_loops(tmp_path):
    (tmp_path / "a" / "b").mkdir(parents=True)
    (tmp_path / "a" / "b" / "f").write_bytes(b"1")
    os.symlink("..", tmp_path / "a" / "b" / "up")
    os.symlink("f", tmp_path / "a" / "b" / "link_to_f")
    diags = []
    files = [rel for rel, _ in iter_tree(tmp_path, diags)]
    assert files == ["a/b/f"]
    assert any("loop" in d for d in diags)


def test_walk_tree_scans_elves(tmp_path):
    (tmp_path / "bin").mkdir()
    (tmp_path / "bin" / "x").write_bytes(fixture_bytes("mips-dynamic-all-symbols"))
    (tmp_path / "bin" / "sh").write_text("#!/bin/sh\n")
    reports = walk_tree(tmp_path)
    assert [r.path for r in reports] == ["bin/x"]


def test_firmware_extension_check():
    assert has_firmware_extension("DIR-615_fw.BIN")
    assert has_firmware_extension("fw.tar.gz")
    assert not has_firmware_extension("notes.pdf")


def test_device_type_normalization():
    assert normalize_device_type("  web  camera ") == "Web Camera"
    assert normalize_device_type("toaster") == "unknown"
    assert normalize_device_type(None) == "unknown"


def write(path, text):
    path.write_text(text)
    return path


def test_csv_manifest(tmp_path):
    m = write(tmp_path / "m.csv", "vendor,product,firmware_version,release_date,device_type,file_path\n"
                                  "Acme,R1,1.0,2015-03-01,Router,r1.bin\n"
                                  "Acme,R1,1.1,,router,r1_11.bin\n"
                                  "Acme,Doc,1,,Router,manual.pdf\n")
    res = ingest_manifest(m)
    assert [r.firmware_version for r in res.records] == ["1.0", "1.1"]
    assert res.records[0].release_date.isoformat() == "2015-03-01"
    assert res.records[1].release_date is None and res.records[1].device_type == "Router"
    assert res.records[0].source_path == str(tmp_path / "r1.bin")
    assert res.flagged == [(3, "manual.pdf: extension not in firmware list")]


def test_json_manifest(tmp_path):
    m = write(tmp_path / "m.json", json.dumps([{"vendor": "V", "product": "P", "file_path": "/abs/fw.img",
                                                "image_id": "img-1"}]))
    (r,) = ingest_manifest(m).records
    assert r.image_id == "img-1" and r.source_path == "/abs/fw.img"


@pytest.mark.parametrize("rows,row_no", [
    ("vendor,product,file_path\nA,,x.bin\n", 1),
    ("vendor,product,file_path,release_date\nA,P,x.bin,2015/01/01\n", 1),
    ("vendor,product,file_path,image_id\nA,P,x.bin,i\nA,P,y.bin,i\n", 2),
    ("vendor,file_path\nA,x.bin\n", 1),
])
def test_manifest_schema_errors(tmp_path, rows, row_no):
    with pytest.raises(SchemaError) as exc:
        ingest_manifest(write(tmp_path / "m.csv", rows))
    assert exc.value.row == row_no


def test_firmware_record_status():
    rec = FirmwareRecord("i", "v", "p", "1", None, "Router", "x.bin")
    rec.finalize()
    assert rec.unpack_status is UnpackStatus.NOTHING_RECOGNIZED
    rec.finalize(encrypted_or_nonlinux=True)
    assert rec.unpack_status is UnpackStatus.ENCRYPTED_OR_NONLINUX
    rec.binaries.append("bin/x")
    rec.finalize()
    assert rec.unpack_status is UnpackStatus.UNPACKED
    assert FirmwareRecord.from_dict(rec.to_dict()) == rec
