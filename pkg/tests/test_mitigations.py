import time

import pytest

from conftest import LADDER_NAMES, MATRIX_NAMES, TRUTH, fixture_bytes
from elf_patch import drop_gnu_stack, make_relro_writable
from firmsec.elf import classify_binary, parse_elf
from firmsec.mitigations import (
    MITIGATIONS,
    Method,
    MitigationReport,
    RelroLevel,
    Status,
    detect_canary,
    detect_fortify,
    detect_nx,
    scan_binary,
)


def observed(report: MitigationReport, mitigation: str) -> str:
    if mitigation == "relro":
        return report.relro_level.label
    return report.verdict(mitigation).status.value


def _cases():
    for name in MATRIX_NAMES:
        limited = TRUTH[name].get("known_limitation", [])
        for m in MITIGATIONS:
            marks = [pytest.mark.xfail(strict=True, reason="dead code after a noreturn call defeats the "
                                       "approximate caller check")] if m in limited else []
            yield pytest.param(name, m, marks=marks, id=f"{name}-{m}")


@pytest.mark.parametrize("name,mitigation", list(_cases()))
def test_matrix_verdict(name, mitigation):
    report = scan_binary(fixture_bytes(name), name)
    assert observed(report, mitigation) == TRUTH[name][mitigation]


@pytest.mark.parametrize("name", LADDER_NAMES)
def test_relro_ladder(name):
    report = scan_binary(fixture_bytes(name))
    assert report.relro_level.label == TRUTH[name]["relro"]


@pytest.mark.parametrize("name", ["ladder-x64-full", "ladder-arm-partial", "arm-dynamic-relro-symbols"])
def test_writable_relro_segment_is_none(name):
    report = scan_binary(make_relro_writable(fixture_bytes(name)))
    assert report.relro_level is RelroLevel.NONE
    assert "PT_GNU_RELRO is writable" in report.relro.evidence


@pytest.mark.parametrize("name", ["x64-dynamic-all-symbols", "arm-static-nx-stripped"])
def test_missing_gnu_stack_means_executable_stack(name):
    data = drop_gnu_stack(fixture_bytes(name))
    view = parse_elf(data)
    v = detect_nx(view, classify_binary(view))
    assert v.status is Status.NOT_PROTECTED
    assert "no PT_GNU_STACK" in v.evidence[0]


def test_library_nx_pie_not_applicable():
    report = scan_binary(fixture_bytes("x64-lib-hardened.so"))
    assert report.nx.status is Status.NOT_APPLICABLE
    assert report.pie.status is Status.NOT_APPLICABLE


def test_relocation_evidence_preferred_on_dynamic():
    report = scan_binary(fixture_bytes("x64-dynamic-all-stripped"))
    assert report.canary.method is Method.RELOCATION
    assert any("__stack_chk_fail" in e for e in report.canary.evidence)


def test_static_stripped_uses_string_heuristic():
    report = scan_binary(fixture_bytes("mips-static-canary-stripped"))
    assert report.canary.method is Method.STRING_HEURISTIC
    assert report.canary.status is Status.PROTECTED
    assert report.fortify.method is Method.STRING_HEURISTIC
    assert report.fortify.status is Status.NOT_PROTECTED


def test_uclibc_fortify_evidence():
    report = scan_binary(fixture_bytes("arm-dynamic-none-symbols"))
    assert report.fortify.status is Status.NOT_PROTECTED
    assert "libc lacks fortify support" in report.fortify.evidence
    glibc = scan_binary(fixture_bytes("x64-dynamic-none-symbols"))
    assert "libc lacks fortify support" not in glibc.fortify.evidence


@pytest.mark.parametrize("name", [n for n in MATRIX_NAMES
                                  if TRUTH[n].get("linkage") == "static" and not TRUTH[n].get("stripped")])
def test_forced_heuristic_agrees_on_static_unstripped(name):
    view = parse_elf(fixture_bytes(name))
    cls = classify_binary(view)
    for detect in (detect_canary, detect_fortify):
        assert detect(view, cls, force_heuristic=True).status == detect(view, cls).status


def test_report_roundtrip():
    report = scan_binary(fixture_bytes("arm-static-all-symbols"), "bin/x")
    again = MitigationReport.from_dict(report.to_dict())
    assert again == report


def test_digest_is_md5():
    import hashlib
    data = fixture_bytes("x64-static-none-symbols")
    assert scan_binary(data).digest == hashlib.md5(data).hexdigest()


def test_matrix_scan_is_fast():
    start = time.perf_counter()
    for name in MATRIX_NAMES:
        scan_binary(fixture_bytes(name))
    assert time.perf_counter() - start < 10
