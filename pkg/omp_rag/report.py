"""
Compilation outcome summaries

Reports are rendered as text, CSV or JSON. Percentages carry one decimal
place; a rate whose denominator is zero is rendered as "n/a".
"""

import csv
import io
import json
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from omp_rag.errors import InvalidInputError
from omp_rag.validation import DifferentialVerdict, FailureCategory

FORMATS = ('text', 'csv', 'json')
UNDEFINED = 'n/a'


class ReportFormatError(InvalidInputError):
    """
    Unknown report format.
    """
    pass


@dataclass(frozen=True)
class RunSummary:
    total_cases: int
    compile_success: int
    fixable_failures: int
    excluded_unparallelizable: int
    effective_success_rate: Optional[float]
    failure_categories: tuple = ()
    differential_pass: int = 0

    @property
    def evaluated_cases(self):
        return self.total_cases - self.excluded_unparallelizable

    def to_dict(self):
        return OrderedDict([
            ('total_cases', self.total_cases),
            ('compile_success', self.compile_success),
            ('fixable_failures', self.fixable_failures),
            ('excluded_unparallelizable', self.excluded_unparallelizable),
            ('effective_success_rate', self.effective_success_rate),
            ('differential_pass', self.differential_pass),
            ('failure_categories', OrderedDict(self.failure_categories))])


def summarize(reports):
    """
    Aggregate validation reports.

    Excluded cases are counted only as excluded, whatever their compile
    status.

    :param reports: list of ValidationReport
    :return: RunSummary
    """
    excluded = [r for r in reports if r.excluded_unparallelizable]
    evaluated = [r for r in reports if not r.excluded_unparallelizable]
    success = sum(1 for r in evaluated if r.compile_ok)
    failures = len(evaluated) - success
    categories = OrderedDict((c.value, 0) for c in FailureCategory)
    for r in evaluated:
        if not r.compile_ok:
            categories[r.failure_category.value] += 1
    return RunSummary(
        total_cases=len(reports), compile_success=success,
        fixable_failures=failures, excluded_unparallelizable=len(excluded),
        effective_success_rate=(success / len(evaluated) if evaluated
                                else None),
        failure_categories=tuple((k, v) for k, v in categories.items() if v),
        differential_pass=sum(
            1 for r in evaluated
            if r.differential_verdict is DifferentialVerdict.PASS))


def percent(numerator, denominator):
    if not denominator:
        return UNDEFINED
    return '{:.1f}%'.format(100.0 * numerator / denominator)


def ratio(numerator, denominator):
    return '{}/{} ({})'.format(numerator, denominator,
                               percent(numerator, denominator))


def _rows(summary):
    return [
        ('Successful Compilation',
         ratio(summary.compile_success, summary.total_cases)),
        ('Compilation Failures (fixable)',
         ratio(summary.fixable_failures, summary.total_cases)),
        ('Unparallelizable',
         '{}/{} (excluded)'.format(summary.excluded_unparallelizable,
                                   summary.total_cases)),
        ('Effective Success',
         ratio(summary.compile_success, summary.evaluated_cases)),
    ]


def _table(header, rows):
    widths = [max(len(row[i]) for row in [header] + rows)
              for i in range(len(header))]
    lines = ['  '.join(cell.ljust(w) for cell, w in zip(header, widths))
             .rstrip(),
             '  '.join('-' * w for w in widths)]
    for row in rows:
        lines.append('  '.join(cell.ljust(w) for cell, w in zip(row, widths))
                     .rstrip())
    return '\n'.join(lines) + '\n'


def render_text(summary, title=None):
    out = io.StringIO()
    out.write('{}\n\n'.format(title or 'Compilation Outcomes Across {} Test '
                              'Cases'.format(summary.total_cases)))
    out.write(_table(['Outcome', 'Result'], [list(r) for r in _rows(summary)]))
    if summary.failure_categories:
        out.write('\nFailure categories\n\n')
        out.write(_table(['Category', 'Cases'],
                         [[name, str(count)]
                          for name, count in summary.failure_categories]))
    out.write('\nDifferential validation: {} passed\n'.format(
        ratio(summary.differential_pass, summary.compile_success)))
    return out.getvalue()


def render_csv(summary):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['metric', 'count', 'total', 'percent'])
    for metric, count, total in (
            ('compile_success', summary.compile_success, summary.total_cases),
            ('fixable_failures', summary.fixable_failures,
             summary.total_cases),
            ('excluded_unparallelizable', summary.excluded_unparallelizable,
             summary.total_cases),
            ('effective_success', summary.compile_success,
             summary.evaluated_cases),
            ('differential_pass', summary.differential_pass,
             summary.compile_success)):
        writer.writerow([metric, count, total,
                         percent(count, total).rstrip('%')])
    for name, count in summary.failure_categories:
        writer.writerow(['failure:{}'.format(name), count,
                         summary.fixable_failures,
                         percent(count, summary.fixable_failures).rstrip('%')])
    return out.getvalue()


def render_json(summary):
    data = summary.to_dict()
    data['effective_success'] = percent(summary.compile_success,
                                        summary.evaluated_cases)
    return json.dumps(data, indent=2) + '\n'


def report(reports, fmt='text'):
    """
    Render a summary of validation reports.

    :param reports: list of ValidationReport
    :param fmt: text, csv or json
    :return: rendered summary
    :raises ReportFormatError: for an unknown format
    """
    if fmt not in FORMATS:
        raise ReportFormatError('Unknown report format "{}", expected one of '
                                '{}'.format(fmt, ', '.join(FORMATS)))
    summary = summarize(reports)
    if fmt == 'csv':
        return render_csv(summary)
    if fmt == 'json':
        return render_json(summary)
    return render_text(summary)


def render_comparison(baseline, augmented, labels=('Baseline', 'Augmented')):
    """
    Baseline and augmented outcomes side by side, followed by the failure
    category breakdown of both runs.

    :param baseline: list of ValidationReport of the baseline run
    :param augmented: list of ValidationReport of the augmented run
    :param labels: column titles
    :return: text table
    """
    left, right = summarize(baseline), summarize(augmented)
    rows = [[name, a, b] for (name, a), (_, b) in
            zip(_rows(left), _rows(right))]
    out = io.StringIO()
    out.write('Compilation Outcomes Across {} Test Cases\n\n'.format(
        max(left.total_cases, right.total_cases)))
    out.write(_table(['Outcome'] + list(labels), rows))
    left_categories = dict(left.failure_categories)
    right_categories = dict(right.failure_categories)
    names = [c.value for c in FailureCategory
             if c.value in left_categories or c.value in right_categories]
    if names:
        out.write('\nFailure categories\n\n')
        out.write(_table(['Category'] + list(labels),
                         [[n, str(left_categories.get(n, 0)),
                           str(right_categories.get(n, 0))] for n in names]))
    return out.getvalue()
