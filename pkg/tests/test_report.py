import csv
import io
import json

import pytest

from omp_rag.report import (ReportFormatError, percent, render_comparison,
                            report, summarize)
from omp_rag.validation import (DifferentialVerdict, FailureCategory,
                                ValidationReport)

F = FailureCategory

BASELINE_FAILURES = {
    2: F.DEFAULT_NONE_VIOLATION,
    3: F.UNDECLARED_IN_CLAUSE, 4: F.UNDECLARED_IN_CLAUSE,
    45: F.UNDECLARED_IN_CLAUSE, 49: F.UNDECLARED_IN_CLAUSE,
    51: F.UNDECLARED_IN_CLAUSE, 61: F.UNDECLARED_IN_CLAUSE,
    84: F.UNDECLARED_IN_CLAUSE, 99: F.UNDECLARED_IN_CLAUSE,
    11: F.INVALID_REDUCTION, 95: F.INVALID_REDUCTION,
    96: F.ATOMIC_MISUSE,
    26: F.SYNTAX_ERROR, 30: F.SYNTAX_ERROR, 38: F.SYNTAX_ERROR,
    71: F.COLLAPSE_MISUSE, 73: F.COLLAPSE_MISUSE,
    19: F.ITERATOR_LIMITATION,
    79: F.DEPRECATED_CONSTRUCT,
    102: F.OTHER_COMPILE_ERROR,
}
EXCLUDED = (33, 57, 64, 88, 91, 104)


def case_reports(failures):
    reports = list()
    for n in range(1, 109):
        case_id = 'case{}'.format(n)
        if n in EXCLUDED:
            reports.append(ValidationReport(case_id=case_id, compile_ok=True,
                                            excluded_unparallelizable=True))
        elif n in failures:
            reports.append(ValidationReport(
                case_id=case_id, compile_ok=False,
                failure_category=failures[n], diagnostics='error'))
        else:
            reports.append(ValidationReport(
                case_id=case_id, compile_ok=True,
                differential_verdict=DifferentialVerdict.PASS,
                threads_tested=[1, 8]))
    return reports


@pytest.fixture
def baseline():
    return case_reports(BASELINE_FAILURES)


@pytest.fixture
def augmented():
    return case_reports({})


def test_baseline_summary(baseline):
    summary = summarize(baseline)
    assert summary.total_cases == 108
    assert summary.compile_success == 82
    assert summary.fixable_failures == 20
    assert summary.excluded_unparallelizable == 6
    assert summary.effective_success_rate == pytest.approx(82 / 102)
    assert dict(summary.failure_categories) == {
        'DefaultNoneViolation': 1, 'UndeclaredInClause': 8,
        'InvalidReduction': 2, 'AtomicMisuse': 1, 'SyntaxError': 3,
        'CollapseMisuse': 2, 'IteratorLimitation': 1,
        'DeprecatedConstruct': 1, 'OtherCompileError': 1}


def test_baseline_text(baseline):
    text = report(baseline)
    assert text.startswith('Compilation Outcomes Across 108 Test Cases\n')
    assert '82/108 (75.9%)' in text
    assert '20/108 (18.5%)' in text
    assert '6/108 (excluded)' in text
    assert '82/102 (80.4%)' in text
    assert ['UndeclaredInClause', '8'] in [line.split()
                                           for line in text.splitlines()]
    assert 'Differential validation: 82/82 (100.0%) passed' in text


def test_augmented_text(augmented):
    text = report(augmented)
    assert '102/108 (94.4%)' in text
    assert '0/108 (0.0%)' in text
    assert '102/102 (100.0%)' in text
    assert 'Failure categories' not in text


def test_excluded_cases_do_not_count_as_failures():
    reports = [
        ValidationReport(case_id='a', compile_ok=False,
                         failure_category=F.SYNTAX_ERROR,
                         excluded_unparallelizable=True),
        ValidationReport(case_id='b', compile_ok=True)]
    summary = summarize(reports)
    assert summary.fixable_failures == 0
    assert summary.compile_success == 1
    assert summary.excluded_unparallelizable == 1
    assert summary.failure_categories == ()


def test_all_excluded_rate_is_undefined():
    reports = [ValidationReport(case_id='a', compile_ok=True,
                                excluded_unparallelizable=True)]
    summary = summarize(reports)
    assert summary.effective_success_rate is None
    assert '0/0 (n/a)' in report(reports)


def test_empty_reports():
    text = report([])
    assert '0/0 (n/a)' in text
    assert json.loads(report([], 'json'))['effective_success'] == 'n/a'


def test_percent():
    assert percent(1, 3) == '33.3%'
    assert percent(0, 0) == 'n/a'


def test_unknown_format(baseline):
    with pytest.raises(ReportFormatError):
        report(baseline, 'html')


def test_csv(baseline):
    rows = list(csv.DictReader(io.StringIO(report(baseline, 'csv'))))
    by_metric = dict((row['metric'], row) for row in rows)
    assert by_metric['compile_success'] == {
        'metric': 'compile_success', 'count': '82', 'total': '108',
        'percent': '75.9'}
    assert by_metric['effective_success']['percent'] == '80.4'
    assert by_metric['failure:UndeclaredInClause']['percent'] == '40.0'


def test_json(baseline):
    data = json.loads(report(baseline, 'json'))
    assert data['total_cases'] == 108
    assert data['effective_success'] == '80.4%'
    assert data['failure_categories']['SyntaxError'] == 3
    assert list(data['failure_categories'])[0] == 'UndeclaredInClause'


def test_comparison(baseline, augmented):
    text = render_comparison(baseline, augmented)
    lines = text.splitlines()
    header = next(line for line in lines if line.startswith('Outcome'))
    assert header.split() == ['Outcome', 'Baseline', 'Augmented']
    success = next(line for line in lines
                   if line.startswith('Successful Compilation'))
    assert '82/108 (75.9%)' in success and '102/108 (94.4%)' in success
    collapse = next(line for line in lines if line.startswith('CollapseMisuse'))
    assert collapse.split() == ['CollapseMisuse', '2', '0']
