import io
import os
import stat

import pytest

from omp_rag import bench
from omp_rag.bench import (BenchError, BenchLock, BenchLockError,
                           BenchRecord, BenchSource, CsvParseError,
                           TimingParseError, compute_speedups,
                           import_records, parse_elapsed, run_sweep)
from omp_rag.errors import InvalidInputError
from omp_rag.validation import compile_gate

REFERENCE = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data',
                         'reference-runtimes.csv')


def speedup_of(rows, case_id, threads):
    return next(r.speedup for r in rows
                if r.case_id == case_id and r.threads == threads)


def test_reference_speedups():
    records = import_records(REFERENCE)
    assert len(records) == 28
    assert all(r.source is BenchSource.IMPORTED for r in records)
    rows = compute_speedups(records)
    assert speedup_of(rows, 'MatMul', 8) == pytest.approx(7.922, abs=1e-3)
    assert speedup_of(rows, 'Jacobi2D', 8) == pytest.approx(5.737, abs=1e-3)
    assert speedup_of(rows, 'Histogram', 2) == pytest.approx(0.805, abs=1e-3)


def test_speedup_at_one_thread_is_one():
    rows = compute_speedups(import_records(REFERENCE))
    assert all(r.speedup == 1.0 for r in rows if r.threads == 1)
    assert speedup_of(rows, 'MatMul', 8) / 8 == pytest.approx(
        next(r.efficiency for r in rows
             if r.case_id == 'MatMul' and r.threads == 8))


def test_rows_keep_case_order():
    rows = compute_speedups(import_records(REFERENCE))
    cases = list(dict.fromkeys(r.case_id for r in rows))
    assert cases == ['MatMul', 'Histogram', 'PrefixSum', 'Jacobi2D', 'GEMM',
                     'Jacobi2D-poly', 'CG']


def test_header_is_optional():
    records = import_records(io.StringIO('a,1,2.0\na,2,1.0\n'))
    assert compute_speedups(records)[1].speedup == 2.0


@pytest.mark.parametrize('text,line', [
    ('case_id,threads,wall_seconds\na,1,2.0\na,two,1.0\n', 3),
    ('a,1,2.0\na,2\n', 2),
    ('a,1,2.0\na,2,-1.0\n', 2),
    ('a,1,0\n', 1),
    ('a,0,1.0\n', 1),
])
def test_malformed_rows_name_the_line(text, line):
    with pytest.raises(CsvParseError) as e:
        import_records(io.StringIO(text))
    assert str(e.value).startswith('line {}:'.format(line))


def test_missing_baseline():
    records = [BenchRecord(case_id='a', threads=2, wall_seconds=1.0)]
    with pytest.raises(InvalidInputError) as e:
        compute_speedups(records)
    assert '"a"' in str(e.value)


def test_duplicate_records_keep_minimum():
    records = [BenchRecord('a', 1, 4.0), BenchRecord('a', 1, 2.0),
               BenchRecord('a', 2, 1.0)]
    assert speedup_of(compute_speedups(records), 'a', 2) == 2.0


def test_record_invariants():
    with pytest.raises(InvalidInputError):
        BenchRecord('a', 0, 1.0)
    with pytest.raises(InvalidInputError):
        BenchRecord('a', 1, 0.0)


@pytest.mark.parametrize('output,seconds', [
    ('result 3\nELAPSED_SECONDS=0.125\n', 0.125),
    ('ELAPSED_SECONDS = 2\n\n', 2.0),
])
def test_parse_elapsed(output, seconds):
    assert parse_elapsed(output) == seconds


@pytest.mark.parametrize('output', [
    '', 'result 3\n', 'ELAPSED_SECONDS=0.1\nresult 3\n',
    'ELAPSED_SECONDS=fast\n'])
def test_parse_elapsed_rejects(output):
    with pytest.raises(TimingParseError):
        parse_elapsed(output)


def timing_script(tmp_path, timings):
    counter = tmp_path / 'counter'
    cases = ''.join('{}) t={};; '.format(i + 1, t)
                    for i, t in enumerate(timings))
    path = tmp_path / 'bench-program'
    path.write_text(
        '#!/bin/sh\n'
        'n=$(cat {0} 2>/dev/null || echo 0)\n'
        'n=$((n + 1))\n'
        'echo $n > {0}\n'
        'case $n in {1}*) t=9.0;; esac\n'
        'echo "threads $OMP_NUM_THREADS"\n'
        'echo "ELAPSED_SECONDS=$t"\n'.format(counter, cases))
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


def test_sweep_keeps_minimum(tmp_path):
    binary = timing_script(tmp_path, [0.5, 0.2, 0.3, 0.4, 0.35, 0.6])
    records = run_sweep(binary, thread_counts=(1, 2), repetitions=3,
                        case_id='script',
                        lock_file=str(tmp_path / 'bench.lock'))
    assert [(r.threads, r.wall_seconds) for r in records] == [(1, 0.2),
                                                              (2, 0.35)]
    assert all(r.repetitions == 3 and r.case_id == 'script'
               for r in records)


def test_sweep_tags_oversubscription(tmp_path):
    binary = timing_script(tmp_path, [])
    threads = bench.host_cores() + 1
    records = run_sweep(binary, thread_counts=(1, threads), repetitions=1,
                        lock_file=str(tmp_path / 'bench.lock'))
    assert [r.oversubscribed for r in records] == [False, True]


def test_sweep_failing_program(tmp_path):
    path = tmp_path / 'failing'
    path.write_text('#!/bin/sh\nexit 1\n')
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    with pytest.raises(BenchError):
        run_sweep(str(path), thread_counts=(1,), repetitions=1,
                  lock_file=str(tmp_path / 'bench.lock'))


def test_lock_contention(tmp_path):
    lock_file = str(tmp_path / 'bench.lock')
    binary = timing_script(tmp_path, [])
    with BenchLock(lock_file):
        with pytest.raises(BenchLockError):
            run_sweep(binary, thread_counts=(1,), repetitions=1,
                      lock_file=lock_file)
    assert run_sweep(binary, thread_counts=(1,), repetitions=1,
                     lock_file=lock_file)


def test_invalid_sweep(tmp_path):
    with pytest.raises(InvalidInputError):
        run_sweep('unused', thread_counts=())
    with pytest.raises(InvalidInputError):
        run_sweep('unused', repetitions=0)


def test_write_reports(tmp_path):
    records = import_records(REFERENCE)
    rows = bench.write_reports(records, str(tmp_path))
    assert len(rows) == 28
    assert sorted(os.listdir(str(tmp_path))) == [
        'records.csv', 'runtime-table.txt', 'speedup-series.tsv',
        'speedups.csv']
    speedups = (tmp_path / 'speedups.csv').read_text().splitlines()
    assert speedups[0] == 'case_id,threads,speedup,efficiency'
    assert 'MatMul,8,7.921,0.990' in speedups
    series = (tmp_path / 'speedup-series.tsv').read_text().splitlines()
    assert series[0].split('\t')[:3] == ['threads', 'MatMul', 'Histogram']
    table = (tmp_path / 'runtime-table.txt').read_text()
    assert '179.809' in table
    assert '7.921x @8' in table


@pytest.mark.requires_compiler
@pytest.mark.environment_sensitive
def test_matmul_scales(fixtures_dir, tmp_path):
    if bench.host_cores() < 4:
        pytest.skip('needs at least 4 cores')
    with open(os.path.join(fixtures_dir, 'cpp', 'matmul_bench.cpp'),
              encoding='utf-8') as f:
        result = compile_gate(f.read(), str(tmp_path), name='matmul')
    assert result.compile_ok, result.diagnostics
    records = run_sweep(result.binary, thread_counts=(1, 4), repetitions=3,
                        args=['512'], lock_file=str(tmp_path / 'bench.lock'))
    assert speedup_of(compute_speedups(records), 'matmul', 4) > 1.5
