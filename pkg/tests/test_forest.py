from __future__ import annotations

import re

import pytest

from helpers import build_trace

from lase.errors import UnknownKey
from lase.events import (
    IMAGE_LOAD,
    PROCESS_CREATE,
    PROCESS_EXIT,
    THREAD_CREATE,
    Irp,
    ProcessCreate,
    kind_name,
)
from lase.forest import (
    InjectionConfidence,
    ProcessKey,
    attack_tree,
    build_forest,
    detect_remote_thread_injection,
    findings_to_jsonl,
    render_dot,
)
from lase.irp import IrpCode
from lase.pipeline import WorkloadSpec, run_synthetic

WRITE = Irp(IrpCode("IRP_MJ_WRITE"))


def ancestry(forest, pid: int) -> list[int]:
    keys = sorted((k for k in forest.index if k.pid == pid), key=lambda k: k.birth_seq)
    node = forest.index[keys[-1]]
    chain = []
    while node is not None:
        chain.append(node.key.pid)
        node = forest.index[node.parent] if node.parent else None
    return chain


def test_fixture_forest_counts(fixture_trace):
    forest = build_forest(fixture_trace)
    assert forest.created_count() == 15
    assert forest.preexisting_count() == 2
    assert {k.pid for k in forest.index if k.birth_seq == 0} == {5480, 916}
    assert forest.warnings == []


def test_fixture_ancestry_chain(fixture_trace):
    forest = build_forest(fixture_trace)
    assert ancestry(forest, 3800) == [3800, 4324, 12148, 6344, 7028, 916]


def test_fixture_excel_and_eqnedt_in_different_trees(fixture_trace):
    forest = build_forest(fixture_trace)
    assert ancestry(forest, 10092)[-1] == 5480
    assert ancestry(forest, 7028)[-1] == 916


def test_empty_trace_builds_empty_forest():
    forest = build_forest(build_trace([]))
    assert forest.roots == []
    assert forest.index == {}


def test_exit_closes_node(fixture_trace):
    forest = build_forest(fixture_trace)
    eqnedt = next(n for n in forest.index.values() if n.key.pid == 7028)
    assert eqnedt.exit_seq == 376991
    assert eqnedt.exit_time is not None
    assert eqnedt.exit_time >= eqnedt.create_time


def test_attack_tree_of_916(fixture_trace):
    forest = build_forest(fixture_trace)
    tree = attack_tree(forest, ProcessKey(916, 0))
    images = {node.image_path.rsplit("\\", 1)[-1].lower() for node in tree.walk()}
    assert {"eqnedt32.exe", "wmiprvse.exe", "werfault.exe"} <= images
    cscript = next(n for n in tree.walk() if n.key == ProcessKey(10464, 679047))
    assert "C:\\ProgramData\\Podaliri4.exe" in cscript.dropped_files
    assert cscript.io_summary["IRP_MJ_WRITE"].count == 1
    assert cscript.io_summary["IRP_MJ_WRITE"].duration_us == 3432


def test_attack_tree_leaf_is_singleton(fixture_trace):
    forest = build_forest(fixture_trace)
    tree = attack_tree(forest, ProcessKey(3800, 359955))
    assert tree.size() == 1


def test_attack_tree_unknown_root(fixture_trace):
    forest = build_forest(fixture_trace)
    with pytest.raises(UnknownKey):
        attack_tree(forest, ProcessKey(99999, 1))


def test_attack_tree_node_set_matches_naive_reachability(fixture_trace):
    forest = build_forest(fixture_trace)
    root = ProcessKey(916, 0)
    # naive reachability: repeatedly add nodes whose parent is in the set
    reach = {root}
    changed = True
    while changed:
        changed = False
        for key, node in forest.index.items():
            if key not in reach and node.parent in reach:
                reach.add(key)
                changed = True
    tree_keys = {n.key for n in attack_tree(forest, root).walk()}
    assert tree_keys == reach


# --- remote-thread injection -------------------------------------------------

INJECTOR = "C:\\tools\\injector.exe"
VICTIM = "C:\\apps\\victim.exe"


def injection_rows(with_load: bool):
    rows = [
        (PROCESS_CREATE, 50, 4, 0, INJECTOR),
        (PROCESS_CREATE, 60, 4, 0, VICTIM),
        (THREAD_CREATE, 60, 4, 501, VICTIM),      # initial thread, exempt
        (THREAD_CREATE, 60, 4, 502, INJECTOR),    # remote thread
    ]
    if with_load:
        rows.append((IMAGE_LOAD, 60, 4, 0, VICTIM, "", "C:\\tools\\payload.dll"))
    return rows


def test_remote_thread_detected():
    trace = build_trace(injection_rows(with_load=False))
    findings = detect_remote_thread_injection(trace)
    assert len(findings) == 1
    f = findings[0]
    assert f.target.pid == 60
    assert f.injector.pid == 50
    assert f.thread_seq == 4
    assert f.confidence is InjectionConfidence.REMOTE_THREAD
    assert f.injector != f.target


def test_remote_thread_upgraded_by_image_load_in_window():
    trace = build_trace(injection_rows(with_load=True))
    findings = detect_remote_thread_injection(trace)
    assert len(findings) == 1
    assert findings[0].confidence is InjectionConfidence.REMOTE_THREAD_PLUS_LOAD_LIBRARY


def test_image_load_outside_window_does_not_upgrade():
    rows = injection_rows(with_load=True)
    trace = build_trace(rows)
    # stretch the load 10 s after the thread: build_trace spaces rows 10 ms
    # apart, so rebuild with an explicit late record
    records = list(trace.records)
    from dataclasses import replace
    from datetime import timedelta
    records[-1] = replace(records[-1], time=records[-2].time + timedelta(seconds=10))
    from lase.codec import trace_from_records
    late = trace_from_records(records, trace.header)
    findings = detect_remote_thread_injection(late)
    assert findings[0].confidence is InjectionConfidence.REMOTE_THREAD


def test_self_created_threads_are_clean(fixture_trace):
    assert detect_remote_thread_injection(fixture_trace) == []


def test_initial_thread_alone_is_exempt():
    trace = build_trace([
        (PROCESS_CREATE, 50, 4, 0, INJECTOR),
        (PROCESS_CREATE, 60, 4, 0, VICTIM),
        (THREAD_CREATE, 60, 4, 501, INJECTOR),  # first observed thread
    ])
    assert detect_remote_thread_injection(trace) == []


def test_synthetic_injection_templates_verified_by_hand_trace():
    trace = run_synthetic(WorkloadSpec(seed=11, producers=1, events_per_producer=200,
                                       injection_templates=4))
    findings = detect_remote_thread_injection(trace)
    # hand-trace oracle: replay liveness, apply the attribution rule naively
    live_image: dict[int, str] = {}
    first_thread_seen: set[int] = set()
    expected = []
    for r in trace.records:
        name = kind_name(r.kind)
        if name == "ProcessCreate":
            live_image[r.pid] = r.image_path.lower()
            first_thread_seen.discard(r.pid)
        elif name == "ProcessExit":
            live_image.pop(r.pid, None)
        elif name == "ThreadCreate":
            if r.pid not in first_thread_seen:
                first_thread_seen.add(r.pid)
                continue
            image = r.image_path.lower()
            if image != live_image.get(r.pid) and any(
                    img == image and pid != r.pid for pid, img in live_image.items()):
                expected.append(r.global_seq)
    assert [f.thread_seq for f in findings] == expected
    assert len(findings) == 4
    confidences = [f.confidence for f in findings]
    assert confidences.count(InjectionConfidence.REMOTE_THREAD_PLUS_LOAD_LIBRARY) == 2


def test_findings_jsonl_round_trips():
    import json
    trace = build_trace(injection_rows(with_load=True))
    findings = detect_remote_thread_injection(trace)
    lines = findings_to_jsonl(findings).splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["target_pid"] == 60
    assert doc["confidence"] == "RemoteThreadPlusLoadLibrary"


# --- node-count oracle and interleaving invariance ---------------------------

def node_count_oracle(trace) -> int:
    """Single-pass brute-force counter: creates + synthesized pre-existing."""
    created = 0
    live: set[int] = set()
    ever_created: set[int] = set()
    synthesized: set[int] = set()
    for r in trace.records:
        name = kind_name(r.kind)
        if name == "ProcessCreate":
            created += 1
            if r.ppid != 0 and r.ppid not in live and r.ppid not in synthesized:
                synthesized.add(r.ppid)
            live.add(r.pid)
            ever_created.add(r.pid)
        else:
            if r.pid not in live and r.pid not in ever_created and r.pid not in synthesized:
                synthesized.add(r.pid)
            if name == "ProcessExit":
                live.discard(r.pid)
    return created + len(synthesized)


def test_fixture_node_count_matches_oracle(fixture_trace):
    forest = build_forest(fixture_trace)
    assert len(forest.index) == node_count_oracle(fixture_trace) == 17


def test_random_trace_node_counts_match_oracle():
    for seed in range(20):
        trace = run_synthetic(WorkloadSpec(seed=seed, producers=2, events_per_producer=250))
        forest = build_forest(trace)
        assert len(forest.index) == node_count_oracle(trace), f"seed {seed}"


def shape(forest) -> frozenset:
    """Forest shape ignoring sequence numbers: (pid, image, parent pid)."""
    out = []
    for key, node in forest.index.items():
        parent_pid = forest.index[node.parent].key.pid if node.parent else None
        out.append((key.pid, node.image_path, parent_pid, tuple(sorted(
            forest.index[c].key.pid for c in node.children))))
    return frozenset(out)


def test_interleaving_independent_trees_is_isomorphic():
    tree_a = [
        (PROCESS_CREATE, 10, 4, 0, "C:\\a\\root_a.exe"),
        (PROCESS_CREATE, 11, 10, 0, "C:\\a\\child_a.exe"),
        (WRITE, 11, 0, 0, "C:\\a\\child_a.exe", "", "C:\\out\\a.bin"),
    ]
    tree_b = [
        (PROCESS_CREATE, 20, 5, 0, "C:\\b\\root_b.exe"),
        (PROCESS_CREATE, 21, 20, 0, "C:\\b\\child_b.exe"),
        (WRITE, 21, 0, 0, "C:\\b\\child_b.exe", "", "C:\\out\\b.bin"),
    ]
    sequential = build_trace(tree_a + tree_b)
    interleaved = build_trace([tree_a[0], tree_b[0], tree_a[1], tree_b[1], tree_a[2], tree_b[2]])
    assert shape(build_forest(sequential)) == shape(build_forest(interleaved))


def test_pid_reuse_disambiguated_by_birth_seq():
    rows = [
        (PROCESS_CREATE, 10, 4, 0, "C:\\gen1.exe"),
        (PROCESS_EXIT, 10, 4, 0, "C:\\gen1.exe"),
        (PROCESS_CREATE, 10, 4, 0, "C:\\gen2.exe"),
    ]
    forest = build_forest(build_trace(rows))
    pids = sorted((k.pid, k.birth_seq) for k in forest.index)
    assert pids == [(4, 0), (10, 1), (10, 3)]
    assert forest.warnings == []


def test_double_exit_warns_without_synthesizing():
    rows = [
        (PROCESS_CREATE, 10, 4, 0, "C:\\gen1.exe"),
        (PROCESS_EXIT, 10, 4, 0, "C:\\gen1.exe"),
        (PROCESS_EXIT, 10, 4, 0, "C:\\gen1.exe"),  # anomaly: already exited
    ]
    trace = build_trace(rows)
    forest = build_forest(trace)
    assert len(forest.warnings) == 1
    assert len(forest.index) == node_count_oracle(trace) == 2  # no spurious node
    assert forest.index[ProcessKey(10, 1)].exit_seq == 2  # first exit wins


def test_create_over_live_pid_force_closes_with_warning():
    rows = [
        (PROCESS_CREATE, 10, 4, 0, "C:\\gen1.exe"),
        (PROCESS_CREATE, 10, 4, 0, "C:\\gen2.exe"),  # no exit in between
    ]
    forest = build_forest(build_trace(rows))
    assert len(forest.warnings) == 1
    gen1 = forest.index[ProcessKey(10, 1)]
    assert gen1.exit_seq == 2


def test_pathological_trace_consistency():
    """PID reuse, double exits, stale attaches, unknown parents and scans all
    at once; the builder, the fingerprint scanner and the brute-force
    counters must still agree on attribution."""
    from lase.events import Annotation, THREAD_EXIT
    from lase.fingerprint import default_signatures, scan
    rows = [
        (PROCESS_CREATE, 10, 0, 0, "C:\\orphan\\root.exe"),        # ppid 0: its own root
        (PROCESS_CREATE, 20, 99, 0, "C:\\a\\one.exe"),             # parent synthesized
        (PROCESS_EXIT, 20, 99, 0, "C:\\a\\one.exe"),
        (PROCESS_EXIT, 20, 99, 0, "C:\\a\\one.exe"),               # double exit
        (WRITE, 20, 0, 0, "C:\\a\\one.exe", "", "C:\\late\\write.bin"),  # stale attach
        (PROCESS_CREATE, 20, 10, 0, "C:\\a\\two.exe"),             # pid reuse
        (PROCESS_CREATE, 20, 10, 0, "C:\\a\\three.exe"),           # create over live
        (THREAD_EXIT, 30, 0, 501, "C:\\b\\ghost.exe"),             # unseen actor + tid
        (Annotation("api", "RDTSC"), 20, 0, 0, "C:\\a\\three.exe"),
        (PROCESS_EXIT, 77, 0, 0, "C:\\b\\preexisting.exe"),        # pre-existing exit
    ]
    trace = build_trace(rows)
    forest = build_forest(trace)
    assert len(forest.index) == node_count_oracle(trace)
    # warnings for: double exit, stale attach, create-over-live, ghost tid
    assert len(forest.warnings) == 4
    # annotation lands on the third incarnation of pid 20
    sigs = default_signatures()
    findings = scan(trace, sigs, forest)
    assert [(f.signature, f.process) for f in findings] == [
        ("direct-cpu-clock-access", ProcessKey(20, 7))]
    from test_fingerprint import naive_scan_oracle
    assert findings == naive_scan_oracle(trace, sigs)
    # parent links survive the churn
    three = forest.index[ProcessKey(20, 7)]
    assert three.parent == ProcessKey(10, 1)
    assert forest.index[ProcessKey(20, 2)].parent == ProcessKey(99, 0)


def test_acyclic_and_parent_exists_on_synthetic_traces():
    for seed in (3, 17):
        trace = run_synthetic(WorkloadSpec(seed=seed, producers=1, events_per_producer=400))
        forest = build_forest(trace)
        for key, node in forest.index.items():
            if node.parent is not None:
                assert node.parent in forest.index
            seen = {key}
            cursor = node
            while cursor.parent is not None:
                assert cursor.parent not in seen, "cycle detected"
                seen.add(cursor.parent)
                cursor = forest.index[cursor.parent]


# --- DOT rendering ------------------------------------------------------------

DOT_NODE = re.compile(r'^\s*n\d+_\d+ \[label="[^"]*"\];$')
DOT_EDGE = re.compile(r"^\s*n\d+_\d+ -> n\d+_\d+;$")


def assert_valid_dot(text: str) -> tuple[int, int]:
    lines = text.strip().splitlines()
    assert lines[0].startswith("digraph ") and lines[0].endswith("{")
    assert lines[-1] == "}"
    nodes = edges = 0
    for line in lines[1:-1]:
        if line.strip() in ("rankdir=LR;",):
            continue
        if DOT_NODE.match(line):
            nodes += 1
        elif DOT_EDGE.match(line):
            edges += 1
        else:
            raise AssertionError(f"unexpected DOT line: {line!r}")
    return nodes, edges


def test_render_dot_fixture(fixture_trace):
    forest = build_forest(fixture_trace)
    nodes, edges = assert_valid_dot(render_dot(forest))
    assert nodes == 17  # 15 created + 2 synthesized roots
    assert edges == 15  # every created node has a parent edge
    assert 'label="<pre-existing> (916)"' in render_dot(forest)


def test_render_dot_single_node():
    forest = build_forest(build_trace([(PROCESS_CREATE, 10, 0, 0, "C:\\solo.exe")]))
    nodes, edges = assert_valid_dot(render_dot(forest))
    assert (nodes, edges) == (1, 0)


def test_render_dot_is_deterministic(fixture_trace):
    forest = build_forest(fixture_trace)
    assert render_dot(forest) == render_dot(forest)


def test_render_dot_subtree(fixture_trace):
    forest = build_forest(fixture_trace)
    tree = attack_tree(forest, ProcessKey(916, 0))
    nodes, edges = assert_valid_dot(render_dot(tree, name="subtree"))
    assert nodes == tree.size()
    assert edges == nodes - 1
