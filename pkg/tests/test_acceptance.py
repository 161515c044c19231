"""Acceptance suite: one PASS/FAIL line per headline requirement.

Run with ``pytest tests/test_acceptance.py -v``; each test prints its line
straight to the terminal, then asserts.
"""

import datetime as dt
import random
import time
from fractions import Fraction

import pytest
from hypothesis import given, settings

from conftest import LADDER_NAMES, MATRIX_NAMES, TRUTH, fixture_bytes
from corpus import BANNER, IMAGE_BINARIES, expected_rate, firmware_tarball
from elf_patch import make_relro_writable
from firmsec import stats as st
from firmsec.elf import Machine, classify_binary, parse_elf
from firmsec.kallsyms import KallsymsNotFound, locate_kallsyms
from firmsec.kernel import Applicability, KernelMitigation as KM, KernelVersion, applicable, find_kernel_version
from firmsec.mitigations import MITIGATIONS, RelroLevel, detect_canary, detect_fortify, scan_binary
from firmsec.pipeline import ImageTask, run_scan
from firmsec.records import KernelRow, load_results, split_records
from kallsyms_builder import build_image, random_symbol
from test_stats import aggregates
from synthetic import random_corpus

V = KernelVersion.parse


def report(capsys, n: int, ok: bool, what: str, detail: str = "") -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {what}" + (f" ({detail})" if detail else ""))
    assert ok, detail


def observed(rep, m):
    return rep.relro_level.label if m == "relro" else rep.verdict(m).status.value


# 1 --------------------------------------------------------------------------

def test_detector_matrix(capsys):
    start = time.perf_counter()
    reports = {n: scan_binary(fixture_bytes(n), n) for n in MATRIX_NAMES + LADDER_NAMES}
    elapsed = time.perf_counter() - start
    wrong, supplementary = [], []
    for name in MATRIX_NAMES:
        t = TRUTH[name]
        if t["linkage"] == "dynamic" or not t["stripped"]:
            required = MITIGATIONS
        else:
            required = ("canary", "fortify")
        for m in required:
            if observed(reports[name], m) != t[m]:
                (supplementary if m in t.get("known_limitation", ()) else wrong).append(f"{name}:{m}")
    archs = {(TRUTH[n]["arch"], TRUTH[n]["endianness"]) for n in MATRIX_NAMES}
    ok = not wrong and elapsed < 10 and {("arm", "little"), ("mips", "big"), ("x64", "little")} <= archs
    if supplementary:
        with capsys.disabled():
            print(f"\n[NOTE] documented limitation fixtures still misclassified: {', '.join(supplementary)}")
    report(capsys, 1, ok, "fixture matrix verdicts and scan time",
           f"{len(MATRIX_NAMES)} fixtures, {len(wrong)} wrong {wrong[:5]}, {elapsed:.2f}s")


# 2 --------------------------------------------------------------------------

def test_relro_ladder(capsys):
    got = {n: scan_binary(fixture_bytes(n)).relro_level.label for n in LADDER_NAMES}
    want = {n: TRUTH[n]["relro"] for n in LADDER_NAMES}
    patched = {n: scan_binary(make_relro_writable(fixture_bytes(n))).relro_level
               for n in ("ladder-x64-full", "ladder-x64-partial", "ladder-arm-full", "ladder-arm-partial")}
    ok = got == want and set(want.values()) == {"None", "Partial", "Full"} and \
        all(v is RelroLevel.NONE for v in patched.values())
    report(capsys, 2, ok, "RELRO ladder and writable GNU_RELRO patch", f"{got}")


# 3 --------------------------------------------------------------------------

def test_symbol_oracle_equivalence(capsys):
    mismatches, checked = [], 0
    for name in MATRIX_NAMES:
        if TRUTH[name]["stripped"]:
            continue
        view = parse_elf(fixture_bytes(name))
        cls = classify_binary(view)
        for m, detect in (("canary", detect_canary), ("fortify", detect_fortify)):
            checked += 1
            a, b = detect(view, cls).status, detect(view, cls, force_heuristic=True).status
            if a != b:
                mismatches.append(f"{name}:{m} symbol={a.value} heuristic={b.value}")
    report(capsys, 3, not mismatches, "forced string heuristic equals symbol path on unstripped fixtures",
           f"{checked - len(mismatches)}/{checked} agree; first: {mismatches[:3]}")


# 4 --------------------------------------------------------------------------

def test_kallsyms_round_trip(capsys):
    layouts = [dict(word=4, endian="<", marker_width=4), dict(word=8, endian="<", marker_width=8),
               dict(word=4, endian=">", marker_width=4), dict(word=8, endian=">", marker_width=4)]
    exact = 0
    for seed in range(20):
        rng = random.Random(1000 + seed)
        names = [random_symbol(rng) for _ in range(rng.randint(20, 600))]
        img, blob, _ = build_image(names, rng=rng, **layouts[seed % 4])
        table = locate_kallsyms(img)
        exact += table.names == names and table.names_blob == blob
    not_found = 0
    for seed in range(20):
        try:
            locate_kallsyms(random.Random(seed).randbytes(1 << 16))
        except KallsymsNotFound:
            not_found += 1
    report(capsys, 4, exact == 20 and not_found == 20, "kallsyms round-trip and random-bytes rejection",
           f"{exact}/20 exact, {not_found}/20 random inputs NotFound")


# 5 --------------------------------------------------------------------------

# (mitigation, architecture) -> first supporting release; blank cells are absent
KERNEL_GATES = {
    (KM.STACK_PROTECTOR, Machine.ARM): "2.6", (KM.STACK_PROTECTOR, Machine.MIPS): "3.11",
    (KM.STACK_PROTECTOR, Machine.POWERPC): "4.20",
    (KM.PXN, Machine.ARM): "3.19", (KM.PXN, Machine.AARCH64): "3.7",
    (KM.KASLR, Machine.ARM): "4.6", (KM.KASLR, Machine.MIPS): "4.7", (KM.KASLR, Machine.POWERPC): "5.2",
    **{(KM.FREELIST_RANDOM, a): "4.7" for a in (Machine.ARM, Machine.AARCH64, Machine.MIPS, Machine.POWERPC)},
    **{(KM.USERCOPY, a): "4.8" for a in (Machine.ARM, Machine.AARCH64, Machine.MIPS, Machine.POWERPC)},
    (KM.FORTIFY, Machine.AARCH64): "4.13", (KM.FORTIFY, Machine.POWERPC): "4.13",
    (KM.FORTIFY, Machine.ARM): "4.17", (KM.FORTIFY, Machine.MIPS): "5.5",
    (KM.KERNEL_RWX, Machine.ARM): "4.11", (KM.KERNEL_RWX, Machine.POWERPC): "4.13",
}


def _below(v: KernelVersion) -> KernelVersion:
    if v.patch:
        return KernelVersion(v.major, v.minor, v.patch - 1)
    if v.minor:
        return KernelVersion(v.major, v.minor - 1, 255)
    return KernelVersion(v.major - 1, 255, 255)


def test_kernel_gating_table(capsys):
    wrong = []
    table_mits = [KM.STACK_PROTECTOR, KM.PXN, KM.KASLR, KM.FREELIST_RANDOM, KM.USERCOPY, KM.FORTIFY, KM.KERNEL_RWX]
    for mit in table_mits:
        for arch in (Machine.ARM, Machine.AARCH64, Machine.MIPS, Machine.POWERPC):
            gate = KERNEL_GATES.get((mit, arch))
            if gate is None:
                if applicable(mit, arch, V("9.9")) is not Applicability.UNSUPPORTED:
                    wrong.append(f"{mit.value}/{arch.value} should never apply")
                continue
            g = V(gate)
            if applicable(mit, arch, g) is not Applicability.SUPPORTED:
                wrong.append(f"{mit.value}/{arch.value}@{g}")
            if applicable(mit, arch, _below(g)) is not Applicability.UNSUPPORTED:
                wrong.append(f"{mit.value}/{arch.value}@{_below(g)}")
    mips_rwx = applicable(KM.KERNEL_RWX, Machine.MIPS, V("6.6")) is Applicability.UNSUPPORTED
    report(capsys, 5, not wrong and mips_rwx, "kernel gate truth table incl. MIPS without kernel RWX",
           f"{len(wrong)} wrong cells {wrong[:4]}")


# 6 --------------------------------------------------------------------------

def test_banner_and_gap(capsys):
    version, _, date = find_kernel_version(b"\0" + BANNER + b"\n\0")
    gap = st.kernel_gap([KernelRow("img", "V", "P", str(version), date, "ARM")])
    months = gap.gaps[0][2] if gap.gaps else None
    ok = (version.major, version.minor, version.patch) == (2, 6, 36) and date == dt.date(2017, 1, 20) \
        and months is not None and abs(months - 75) <= 1
    report(capsys, 6, ok, "verbatim banner parse and release gap", f"{version}, {date}, {months} months")


# 7 --------------------------------------------------------------------------

def test_stats_algebra(capsys):
    cases = []

    @settings(max_examples=1000, deadline=None, database=None)
    @given(aggregates, aggregates, aggregates)
    def algebra(a, b, c):
        cases.append(1)
        assert st.merge(a, b) == st.merge(b, a)
        assert st.merge(st.merge(a, b), c) == st.merge(a, st.merge(b, c))
        assert st.merge(a, st.PartialAggregate.empty()) == a

    try:
        algebra()
        algebra_ok = True
    except AssertionError:
        algebra_ok = False
    rows = random_corpus(500, seed=77)
    single = st.PartialAggregate.from_records(rows)
    rng = random.Random(3)
    shards: list[list] = [[] for _ in range(5)]
    for r in rows:
        shards[rng.randrange(5)].append(r)
    merged = st.PartialAggregate.empty()
    for s in shards:
        merged = st.merge(merged, st.PartialAggregate.from_records(s))
    sharded_ok = merged == single and all(
        merged.rate(m) == st.adoption_rate(rows, st.RateQuery(m)) for m in MITIGATIONS)
    report(capsys, 7, algebra_ok and len(cases) >= 1000 and sharded_ok, "merge algebra and sharded equality",
           f"{len(cases)} property cases, sharded==single: {sharded_ok}")


# 8 --------------------------------------------------------------------------

def test_end_to_end(tmp_path, capsys):
    img = tmp_path / "firmware.tar.gz"
    img.write_bytes(firmware_tarball())
    records, summary = run_scan([ImageTask("fw", str(img), "Acme", "R1", "1.0", dt.date(2018, 5, 1), "Router")])
    binaries, kernels, firmware = split_records(load_results(records))
    rates = {m: st.adoption_rate(binaries, st.RateQuery(m)).exact for m in MITIGATIONS}
    want = {m: expected_rate(IMAGE_BINARIES, m) for m in MITIGATIONS}
    bd = st.breakdown(binaries, "vendor").rows["Acme"]
    gap = st.kernel_gap(kernels).gaps
    ok = (firmware[0]["unpack_status"] == "unpacked" and len(binaries) == 10 and len(kernels) == 1
          and rates == want and all(bd[m].exact == want[m] for m in MITIGATIONS) and gap == [("Acme", "fw", 75)])
    report(capsys, 8, ok, "end-to-end tar.gz image",
           f"status={firmware[0]['unpack_status']}, {len(binaries)} binaries, {len(kernels)} kernels, "
           f"rates={ {m: str(v) for m, v in rates.items()} }")


# 9 --------------------------------------------------------------------------

def test_reference_constants(capsys):
    import test_reference as tr
    checks = (tr.test_release_years_match_doc, tr.test_desktop_baseline_matches_doc, tr.test_kernel_gates_match_doc)
    failed = []
    for check in checks:
        try:
            check()
        except AssertionError as exc:
            failed.append(f"{check.__name__}: {exc}")
    report(capsys, 9, not failed, "reference constants match documentation", "; ".join(failed))
