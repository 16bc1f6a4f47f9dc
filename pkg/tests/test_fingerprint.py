from __future__ import annotations

import json

import pytest

from helpers import build_trace

from lase.codec import trace_from_records
from lase.errors import SignatureParseError
from lase.events import (
    IMAGE_LOAD,
    PROCESS_CREATE,
    Annotation,
    Irp,
    kind_name,
)
from lase.fingerprint import (
    FingerprintFinding,
    default_signatures,
    findings_to_jsonl,
    load_signatures,
    scan,
)
from lase.forest import ProcessKey, build_forest
from lase.irp import IrpCode
from lase.pipeline import WorkloadSpec, run_synthetic

READ = Irp(IrpCode("IRP_MJ_READ"))


def test_default_signature_set():
    sigs = default_signatures()
    assert [s.name for s in sigs] == [
        "calls-wmi", "direct-cpu-clock-access", "GetTickCount", "checks-bios"]
    assert all(not s.require_all and s.scope == "process" for s in sigs)


def test_empty_source_yields_empty_set():
    assert load_signatures("") == []
    assert load_signatures("# only a comment\n") == []


def test_malformed_regex_reports_line():
    with pytest.raises(SignatureParseError) as exc:
        load_signatures("ok\tIrp\tfile_path\t.*\nbad\tIrp\tfile_path\t(unclosed\n")
    assert exc.value.line_no == 2


def test_duplicate_name_rejected():
    text = ("a\tIrp\tfile_path\tx\n"
            "b\tIrp\tfile_path\ty\n"
            "a\tIrp\tfile_path\tz\n")  # non-consecutive reuse
    with pytest.raises(SignatureParseError):
        load_signatures(text)


def test_consecutive_lines_extend_one_signature():
    text = ("multi\tImageLoad\tfile_path\tfoo\n"
            "multi\tIrp\tfile_path\tbar\n")
    sigs = load_signatures(text)
    assert len(sigs) == 1
    assert len(sigs[0].matchers) == 2


def test_flags_parse():
    sigs = load_signatures("s\tIrp\tfile_path\tx\tall,trace\n")
    assert sigs[0].require_all and sigs[0].scope == "trace"
    with pytest.raises(SignatureParseError):
        load_signatures("s\tIrp\tfile_path\tx\tbogus\n")


def test_unknown_kind_and_field_rejected():
    with pytest.raises(SignatureParseError):
        load_signatures("s\tNotAKind\tfile_path\tx\n")
    with pytest.raises(SignatureParseError):
        load_signatures("s\tIrp\tnot_a_field\tx\n")


def test_fixture_wmi_finding(fixture_trace):
    findings = scan(fixture_trace, default_signatures(), build_forest(fixture_trace))
    assert findings == [
        FingerprintFinding("calls-wmi", ProcessKey(11916, 381227), (381227,))
    ]
    assert findings[0].first_seq == 381227


def test_rdtsc_annotation_finding():
    trace = build_trace([
        (PROCESS_CREATE, 70, 4, 0, "C:\\mal\\sample.exe"),
        (Annotation("api", "RDTSC"), 70, 4, 0, "C:\\mal\\sample.exe"),
    ])
    findings = scan(trace, default_signatures(), build_forest(trace))
    assert len(findings) == 1
    assert findings[0].signature == "direct-cpu-clock-access"
    assert findings[0].process == ProcessKey(70, 1)
    assert findings[0].evidence == (2,)


def test_no_matching_events_yields_empty():
    trace = build_trace([
        (PROCESS_CREATE, 70, 4, 0, "C:\\plain\\app.exe"),
        (READ, 70, 4, 0, "C:\\plain\\app.exe", "", "C:\\data\\file.txt"),
    ])
    assert scan(trace, default_signatures(), build_forest(trace)) == []


def template_trace(which: str):
    """Dedicated synthetic template per built-in signature."""
    rows = {
        "calls-wmi": [
            (PROCESS_CREATE, 80, 4, 0, "%SysWOW64%\\wbem\\WmiPrvSE.exe", "-secured -Embedding"),
        ],
        "direct-cpu-clock-access": [
            (PROCESS_CREATE, 81, 4, 0, "C:\\mal\\a.exe"),
            (Annotation("api", "QueryPerformanceCounter"), 81, 4, 0, "C:\\mal\\a.exe"),
        ],
        "GetTickCount": [
            (PROCESS_CREATE, 82, 4, 0, "C:\\mal\\b.exe"),
            (Annotation("api", "GetTickCount64"), 82, 4, 0, "C:\\mal\\b.exe"),
        ],
        "checks-bios": [
            (PROCESS_CREATE, 83, 4, 0, "C:\\mal\\c.exe"),
            (IMAGE_LOAD, 83, 4, 0, "C:\\mal\\c.exe", "", "%System32%\\smbios.dll"),
        ],
    }[which]
    return build_trace(rows)


@pytest.mark.parametrize("name", ["calls-wmi", "direct-cpu-clock-access",
                                  "GetTickCount", "checks-bios"])
def test_each_template_fires_only_its_signature(name):
    trace = template_trace(name)
    findings = scan(trace, default_signatures(), build_forest(trace))
    assert [f.signature for f in findings] == [name]


def test_checks_bios_annotation_route():
    trace = build_trace([
        (PROCESS_CREATE, 84, 4, 0, "C:\\mal\\d.exe"),
        (Annotation("api", "GetSystemFirmwareTable"), 84, 4, 0, "C:\\mal\\d.exe"),
    ])
    findings = scan(trace, default_signatures(), build_forest(trace))
    assert [f.signature for f in findings] == ["checks-bios"]


def test_matching_is_case_insensitive_and_separator_normalized():
    trace = build_trace([
        (PROCESS_CREATE, 85, 4, 0, "%SYSWOW64%/WBEM/WMIPRVSE.EXE"),
    ])
    findings = scan(trace, default_signatures(), build_forest(trace))
    assert [f.signature for f in findings] == ["calls-wmi"]


def test_evidence_grouped_per_process_and_sorted():
    trace = build_trace([
        (PROCESS_CREATE, 90, 4, 0, "C:\\m\\x.exe"),
        (Annotation("api", "RDTSC"), 90, 4, 0, "C:\\m\\x.exe"),
        (PROCESS_CREATE, 91, 4, 0, "C:\\m\\y.exe"),
        (Annotation("api", "RDTSC"), 91, 4, 0, "C:\\m\\y.exe"),
        (Annotation("api", "RDTSC"), 90, 4, 0, "C:\\m\\x.exe"),
    ])
    findings = scan(trace, default_signatures(), build_forest(trace))
    assert [(f.process.pid, f.evidence) for f in findings] == [(90, (2, 5)), (91, (4,))]


def test_require_all_semantics():
    text = ("combo\tImageLoad\tfile_path\tpayload\n"
            "combo\tAnnotation\tannotation[api]\t^RDTSC$\tall\n")
    sigs = load_signatures(text)
    only_load = build_trace([
        (PROCESS_CREATE, 92, 4, 0, "C:\\m\\z.exe"),
        (IMAGE_LOAD, 92, 4, 0, "C:\\m\\z.exe", "", "C:\\payload.dll"),
    ])
    assert scan(only_load, sigs, build_forest(only_load)) == []
    both = build_trace([
        (PROCESS_CREATE, 92, 4, 0, "C:\\m\\z.exe"),
        (IMAGE_LOAD, 92, 4, 0, "C:\\m\\z.exe", "", "C:\\payload.dll"),
        (Annotation("api", "RDTSC"), 92, 4, 0, "C:\\m\\z.exe"),
    ])
    findings = scan(both, sigs, build_forest(both))
    assert len(findings) == 1
    assert findings[0].evidence == (2, 3)


def naive_scan_oracle(trace, signatures):
    """Filter-then-group reference: regex filter per matcher, then resolve
    each hit's owning process from create/exit intervals."""
    # liveness intervals per pid
    intervals: dict[int, list[tuple[int, int | None, ProcessKey]]] = {}
    for r in trace.records:
        name = kind_name(r.kind)
        if name == "ProcessCreate":
            intervals.setdefault(r.pid, []).append((r.global_seq, None, ProcessKey(r.pid, r.global_seq)))
        elif name == "ProcessExit":
            rows = intervals.setdefault(r.pid, [])
            for i, (start, end, key) in enumerate(rows):
                if end is None:
                    rows[i] = (start, r.global_seq, key)
                    break
            else:
                rows.append((0, r.global_seq, ProcessKey(r.pid, 0)))

    def resolve(pid: int, seq: int) -> ProcessKey:
        rows = intervals.get(pid, [])
        open_rows = [(s, k) for s, e, k in rows if s <= seq and (e is None or seq <= e)]
        if open_rows:
            return max(open_rows)[1]
        ended = [(s, k) for s, e, k in rows if e is not None and e < seq]
        if ended:
            return max(ended)[1]  # stale attach, same as the builder
        return ProcessKey(pid, 0)

    grouped: dict[tuple[str, ProcessKey], list[int]] = {}
    for sig in signatures:
        for matcher in sig.matchers:
            for r in trace.records:
                if matcher.matches(r):
                    key = resolve(r.pid, r.global_seq)
                    grouped.setdefault((sig.name, key), []).append(r.global_seq)
    findings = [FingerprintFinding(name, key, tuple(sorted(set(seqs))))
                for (name, key), seqs in grouped.items()]
    findings.sort(key=lambda f: (f.first_seq, f.signature))
    return findings


def test_scan_matches_naive_oracle_on_synthetic_traces():
    sigs = default_signatures()
    for seed in range(10):
        trace = run_synthetic(WorkloadSpec(seed=seed, producers=2, events_per_producer=300))
        assert scan(trace, sigs, None) == naive_scan_oracle(trace, sigs), f"seed {seed}"


def test_scan_is_pure_and_idempotent(fixture_trace):
    sigs = default_signatures()
    first = scan(fixture_trace, sigs, None)
    second = scan(fixture_trace, sigs, None)
    assert first == second


def test_concatenating_traces_unions_findings():
    from dataclasses import replace
    sigs = default_signatures()
    t1 = template_trace("direct-cpu-clock-access")
    t2 = template_trace("GetTickCount")
    shift = len(t1.records)
    rebased = [replace(r, global_seq=r.global_seq + shift) for r in t2.records]
    combined = trace_from_records(list(t1.records) + rebased, t1.header)
    combined_findings = scan(combined, sigs, None)
    names = {f.signature for f in combined_findings}
    assert names == {"direct-cpu-clock-access", "GetTickCount"}
    f1 = scan(t1, sigs, None)
    assert combined_findings[0].evidence == f1[0].evidence  # first trace unshifted
    f2 = scan(t2, sigs, None)
    second = next(f for f in combined_findings if f.signature == "GetTickCount")
    assert second.evidence == tuple(s + shift for s in f2[0].evidence)  # re-based


def test_findings_jsonl(fixture_trace):
    findings = scan(fixture_trace, default_signatures(), None)
    lines = findings_to_jsonl(findings).splitlines()
    assert [json.loads(x)["signature"] for x in lines] == ["calls-wmi"]
