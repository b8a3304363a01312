"""
Thread-scaling benchmarks

Benchmark programs time themselves and print ``ELAPSED_SECONDS=<float>`` on
their final output line. A sweep runs the program ``repetitions`` times per
thread count and keeps the minimum. Only one benchmark runs on the host at
a time, guarded by an exclusive lock file.
"""

import csv
import enum
import fcntl
import io
import logging
import os
import re
from collections import OrderedDict
from dataclasses import dataclass

from omp_rag.errors import (HostEnvironmentError, InvalidInputError,
                            OmpRagError)
from omp_rag.validation import run_program

logger = logging.getLogger(__name__)

DEFAULT_THREADS = (1, 2, 4, 8)
DEFAULT_REPETITIONS = 3
DEFAULT_LOCK_FILE = '/tmp/omp-rag-bench.lock'
ELAPSED = re.compile(r'^\s*ELAPSED_SECONDS\s*=\s*(?P<seconds>\S+)\s*$')
RECORD_FIELDS = ('case_id', 'threads', 'wall_seconds', 'repetitions',
                 'source', 'oversubscribed')
SPEEDUP_FIELDS = ('case_id', 'threads', 'speedup', 'efficiency')


class BenchError(OmpRagError):
    """
    Benchmark program failed.
    """
    pass


class TimingParseError(OmpRagError):
    """
    Benchmark output or imported timing data could not be parsed.
    """
    pass


class CsvParseError(TimingParseError):
    """
    Imported CSV row is malformed.
    """
    pass


class BenchLockError(HostEnvironmentError):
    """
    Another benchmark run holds the lock.
    """
    pass


class BenchSource(enum.Enum):
    MEASURED = 'Measured'
    IMPORTED = 'Imported'


@dataclass(frozen=True)
class BenchRecord:
    case_id: str
    threads: int
    wall_seconds: float
    repetitions: int = 1
    source: BenchSource = BenchSource.MEASURED
    oversubscribed: bool = False

    def __post_init__(self):
        if self.threads < 1:
            raise InvalidInputError('threads must be positive, got {}'.format(
                self.threads))
        if not self.wall_seconds > 0:
            raise InvalidInputError('wall_seconds must be positive, got '
                                    '{}'.format(self.wall_seconds))
        if self.repetitions < 1:
            raise InvalidInputError('repetitions must be positive')


@dataclass(frozen=True)
class SpeedupRow:
    case_id: str
    threads: int
    speedup: float

    @property
    def efficiency(self):
        return self.speedup / self.threads


class BenchLock(object):
    """
    Exclusive, non-blocking lock file.
    """

    def __init__(self, path=DEFAULT_LOCK_FILE):
        self.path = path
        self.handle = None

    def __enter__(self):
        self.handle = open(self.path, 'a+')
        try:
            fcntl.flock(self.handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self.handle.close()
            self.handle = None
            raise BenchLockError('Another benchmark run holds {}'.format(
                self.path))
        self.handle.seek(0)
        self.handle.truncate()
        self.handle.write('{}\n'.format(os.getpid()))
        self.handle.flush()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        fcntl.flock(self.handle.fileno(), fcntl.LOCK_UN)
        self.handle.close()
        self.handle = None


def host_cores():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def parse_elapsed(output):
    """
    Read the timing line from benchmark output.

    :param output: program stdout
    :return: elapsed seconds
    :raises TimingParseError: if the final line is not a timing line
    """
    lines = [line for line in output.splitlines() if line.strip()]
    m = ELAPSED.match(lines[-1]) if lines else None
    if not m:
        raise TimingParseError('Benchmark output does not end with '
                               'ELAPSED_SECONDS=<float>')
    try:
        return float(m.group('seconds'))
    except ValueError:
        raise TimingParseError('Malformed timing line: {}'.format(lines[-1]))


def run_sweep(binary, thread_counts=DEFAULT_THREADS,
              repetitions=DEFAULT_REPETITIONS, case_id=None, args=(),
              timeout=None, lock_file=DEFAULT_LOCK_FILE):
    """
    Time a program across a thread sweep.

    :param binary: OpenMP program printing ELAPSED_SECONDS=<float> last
    :param thread_counts: thread counts to run
    :param repetitions: runs per thread count; the minimum is kept
    :param case_id: case identifier, defaults to the binary name
    :param args: program arguments
    :param timeout: per-run timeout in seconds
    :param lock_file: path of the host-wide benchmark lock
    :return: list of BenchRecord, one per thread count
    :raises BenchLockError: if another benchmark holds the lock
    :raises BenchError: on a failing run
    :raises TimingParseError: if a run prints no timing line
    """
    if not thread_counts:
        raise InvalidInputError('Thread sweep is empty')
    if repetitions < 1:
        raise InvalidInputError('repetitions must be positive')
    case_id = case_id or os.path.basename(binary)
    cores = host_cores()
    if max(thread_counts) > cores:
        logger.warning('Host has {} logical cores, sweep goes up to {} '
                       'threads; records are tagged oversubscribed'.format(
                           cores, max(thread_counts)))
    records = list()
    with BenchLock(lock_file):
        for threads in thread_counts:
            timings = list()
            for repetition in range(repetitions):
                result = run_program(binary, args, threads=threads,
                                     timeout=timeout)
                if not result.ok:
                    raise BenchError('Benchmark "{}" failed at {} threads: '
                                     '{}'.format(case_id, threads,
                                                 result.error))
                timings.append(parse_elapsed(result.output))
            wall_seconds = min(timings)
            if not wall_seconds > 0:
                raise BenchError('Benchmark "{}" reported {} s at {} '
                                 'threads'.format(case_id, wall_seconds,
                                                  threads))
            logger.info('Benchmark "{}": {} threads, {:.6f} s'.format(
                case_id, threads, wall_seconds))
            records.append(BenchRecord(case_id=case_id, threads=threads,
                                       wall_seconds=wall_seconds,
                                       repetitions=repetitions,
                                       oversubscribed=threads > cores))
    return records


def _group(records):
    groups = OrderedDict()
    for record in records:
        times = groups.setdefault(record.case_id, dict())
        if record.threads in times:
            times[record.threads] = min(times[record.threads],
                                        record.wall_seconds)
        else:
            times[record.threads] = record.wall_seconds
    return groups


def compute_speedups(records):
    """
    Speedups relative to the single-thread run of each case.

    Cases keep their first-appearance order, thread counts ascend. Duplicate
    (case, threads) records keep the minimum time.

    :param records: list of BenchRecord
    :return: list of SpeedupRow
    :raises InvalidInputError: if a case has no 1-thread record
    """
    rows = list()
    for case_id, times in _group(records).items():
        if 1 not in times:
            raise InvalidInputError('Case "{}" has no 1-thread baseline'.format(
                case_id))
        baseline = times[1]
        for threads in sorted(times):
            rows.append(SpeedupRow(case_id=case_id, threads=threads,
                                   speedup=baseline / times[threads]))
    return rows


def import_records(source):
    """
    Import published timings from CSV with columns case_id, threads,
    wall_seconds (a header row is optional).

    :param source: path to the CSV file, or a file object
    :return: list of BenchRecord tagged Imported
    :raises CsvParseError: naming the line of a malformed row
    """
    if isinstance(source, str):
        with open(source, encoding='utf-8', newline='') as f:
            return import_records(f)
    records = list()
    for number, row in enumerate(csv.reader(source), start=1):
        if not row or not ''.join(row).strip():
            continue
        if number == 1 and row[0].strip() == 'case_id':
            continue
        if len(row) != 3:
            raise CsvParseError('line {}: expected 3 columns, got {}'.format(
                number, len(row)))
        case_id, threads, seconds = (cell.strip() for cell in row)
        try:
            record = BenchRecord(case_id=case_id, threads=int(threads),
                                 wall_seconds=float(seconds),
                                 source=BenchSource.IMPORTED)
        except (ValueError, InvalidInputError) as e:
            raise CsvParseError('line {}: {}'.format(number, e))
        if not case_id:
            raise CsvParseError('line {}: empty case_id'.format(number))
        records.append(record)
    return records


def write_records_csv(records, f):
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow(RECORD_FIELDS)
    for r in records:
        writer.writerow([r.case_id, r.threads, repr(r.wall_seconds),
                         r.repetitions, r.source.value,
                         'true' if r.oversubscribed else 'false'])


def write_speedups_csv(rows, f):
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow(SPEEDUP_FIELDS)
    for row in rows:
        writer.writerow([row.case_id, row.threads, '{:.3f}'.format(row.speedup),
                         '{:.3f}'.format(row.efficiency)])


def write_speedup_series(rows, f):
    """
    Plot-ready series: one row per thread count, one column per case,
    tab-separated; missing points are "-".
    """
    cases = list(OrderedDict.fromkeys(row.case_id for row in rows))
    threads = sorted(set(row.threads for row in rows))
    values = dict(((row.case_id, row.threads), row.speedup) for row in rows)
    f.write('\t'.join(['threads'] + cases) + '\n')
    for t in threads:
        cells = ['{:.3f}'.format(values[(c, t)]) if (c, t) in values else '-'
                 for c in cases]
        f.write('\t'.join([str(t)] + cells) + '\n')


def render_runtime_table(records):
    """
    Plain-text table: one row per case, one column per thread count,
    runtimes in seconds with three decimals, speedup at the largest thread
    count last.

    :param records: list of BenchRecord
    :return: table text
    """
    groups = _group(records)
    threads = sorted(set(r.threads for r in records))
    header = ['Case'] + ['{} Thread{} (s)'.format(t, '' if t == 1 else 's')
                         for t in threads] + ['Speedup']
    body = list()
    for case_id, times in groups.items():
        cells = [case_id]
        for t in threads:
            cells.append('{:.3f}'.format(times[t]) if t in times else '-')
        top = max(times)
        if 1 in times:
            cells.append('{:.3f}x @{}'.format(times[1] / times[top], top))
        else:
            cells.append('-')
        body.append(cells)
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    separator = '+' + '+'.join('-' * (w + 2) for w in widths) + '+'
    out = io.StringIO()
    out.write(separator + '\n')
    for i, row in enumerate([header] + body):
        out.write('| ' + ' | '.join(cell.ljust(w) if j == 0 else cell.rjust(w)
                                    for j, (cell, w) in enumerate(
                                        zip(row, widths))) + ' |\n')
        if i == 0:
            out.write(separator + '\n')
    out.write(separator + '\n')
    return out.getvalue()


def write_reports(records, out_dir):
    """
    Write records.csv, speedups.csv, speedup-series.tsv and
    runtime-table.txt into out_dir.

    :param records: list of BenchRecord
    :param out_dir: output directory
    :return: list of SpeedupRow
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = compute_speedups(records)
    with open(os.path.join(out_dir, 'records.csv'), 'w', encoding='utf-8',
              newline='') as f:
        write_records_csv(records, f)
    with open(os.path.join(out_dir, 'speedups.csv'), 'w', encoding='utf-8',
              newline='') as f:
        write_speedups_csv(rows, f)
    with open(os.path.join(out_dir, 'speedup-series.tsv'), 'w',
              encoding='utf-8', newline='\n') as f:
        write_speedup_series(rows, f)
    with open(os.path.join(out_dir, 'runtime-table.txt'), 'w',
              encoding='utf-8', newline='\n') as f:
        f.write(render_runtime_table(records))
    return rows
