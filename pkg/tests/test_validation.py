import os
import stat

import pytest

from omp_rag.errors import InvalidInputError, ToolchainError
from omp_rag.validation import (CaseSpec, CompilerSettings,
                                DifferentialVerdict, FailureCategory,
                                ValidationReport, ValidationSettings,
                                classify_failure, compile_gate, load_cases,
                                load_reports, save_cases, save_reports,
                                validate_case)

CANNED = [
    ("loop.cpp:6:9: error: 'n' not specified in enclosing 'parallel'",
     '#pragma omp parallel for default(none)',
     FailureCategory.DEFAULT_NONE_VIOLATION),
    ("loop.cpp:9:24: error: 'bind2nd' is not a member of 'std'",
     'std::transform(a, a + n, b, std::bind2nd(std::plus<int>(), 1));',
     FailureCategory.DEPRECATED_CONSTRUCT),
    ("loop.cpp:4:21: error: ISO C++17 does not allow 'register' storage class "
     'specifier [-Wregister]', 'register double scale = 0.5;',
     FailureCategory.DEPRECATED_CONSTRUCT),
    ("loop.cpp:10:41: error: user defined reduction not found for 'm'",
     '#pragma omp parallel for reduction(+:m)',
     FailureCategory.INVALID_REDUCTION),
    ("loop.cpp:7:9: error: 'sum' appears more than once in data clauses",
     '#pragma omp parallel for reduction(+:sum) reduction(+:sum)',
     FailureCategory.INVALID_REDUCTION),
    ("loop.cpp:8:11: error: invalid operator for '#pragma omp atomic' before "
     "'%=' token", '#pragma omp atomic\n x %= 7;',
     FailureCategory.ATOMIC_MISUSE),
    ('loop.cpp:5:33: error: not enough for loops to collapse',
     '#pragma omp parallel for collapse(2)',
     FailureCategory.COLLAPSE_MISUSE),
    ("loop.cpp:12:21: error: no match for 'operator-' (operand types are "
     "'std::_List_iterator<int>' and 'std::_List_iterator<int>')",
     '#pragma omp parallel for\nfor (auto it = l.begin(); it != l.end(); '
     '++it)', FailureCategory.ITERATOR_LIMITATION),
    ("loop.cpp:5:42: error: 'tmp' was not declared in this scope",
     '#pragma omp parallel for private(tmp)',
     FailureCategory.UNDECLARED_IN_CLAUSE),
    ("loop.cpp:5:41: error: expected ')' before end of line",
     '#pragma omp parallel for reduction(+:sum',
     FailureCategory.SYNTAX_ERROR),
    ("loop.cpp:4:13: error: invalid conversion from 'const char*' to 'int' "
     "[-fpermissive]", 'int x = "hello";',
     FailureCategory.OTHER_COMPILE_ERROR),
]


@pytest.mark.parametrize('diagnostics,source,expected', CANNED)
def test_classify_canned_diagnostics(diagnostics, source, expected):
    assert classify_failure(diagnostics, source) is expected


def test_undeclared_outside_clause_is_not_clause_error():
    diagnostics = "loop.cpp:7:5: error: 'total' was not declared in this scope"
    source = '#pragma omp parallel for private(tmp)\ntotal += 1;'
    assert classify_failure(diagnostics, source) is \
        FailureCategory.OTHER_COMPILE_ERROR


def test_first_matching_rule_wins():
    diagnostics = ("loop.cpp:6:9: error: 'n' not specified in enclosing "
                   "'parallel'\nloop.cpp:9:1: error: expected ')' before "
                   "end of line")
    assert classify_failure(diagnostics) is \
        FailureCategory.DEFAULT_NONE_VIOLATION


def test_typographic_quotes_are_normalized():
    diagnostics = 'loop.cpp:6:9: error: ‘n’ not specified in ' \
                  'enclosing ‘parallel’'
    assert classify_failure(diagnostics) is \
        FailureCategory.DEFAULT_NONE_VIOLATION


def test_empty_diagnostics_fall_through():
    assert classify_failure('') is FailureCategory.OTHER_COMPILE_ERROR


def test_warnings_do_not_decide_the_category():
    diagnostics = (
        "loop.cpp: In function 'int main()':\n"
        "loop.cpp:4:18: warning: ISO C++17 does not allow 'register' storage "
        "class specifier [-Wregister]\n"
        "    4 |     register int scale = 2;\n"
        "loop.cpp:6:41: error: expected ')' before end of line\n")
    source = ('register int scale = 2;\n'
              '#pragma omp parallel for reduction(+:sum')
    assert classify_failure(diagnostics, source) is \
        FailureCategory.SYNTAX_ERROR


def test_output_without_error_lines_is_matched_whole():
    assert classify_failure('not enough for loops to collapse') is \
        FailureCategory.COLLAPSE_MISUSE


def test_report_invariants():
    with pytest.raises(InvalidInputError):
        ValidationReport(case_id='c', compile_ok=True,
                         failure_category=FailureCategory.SYNTAX_ERROR)
    with pytest.raises(InvalidInputError):
        ValidationReport(case_id='c', compile_ok=False,
                         failure_category=FailureCategory.SYNTAX_ERROR,
                         differential_verdict=DifferentialVerdict.PASS)


def test_reports_round_trip(tmp_path):
    reports = [
        ValidationReport(case_id='case1', compile_ok=True,
                         differential_verdict=DifferentialVerdict.PASS,
                         threads_tested=[1, 8]),
        ValidationReport(case_id='case2', compile_ok=False,
                         failure_category=FailureCategory.ATOMIC_MISUSE,
                         diagnostics='error: x'),
        ValidationReport(case_id='case3', compile_ok=True,
                         excluded_unparallelizable=True)]
    path = str(tmp_path / 'reports.jsonl')
    save_reports(reports, path)
    assert load_reports(path) == reports


def test_cases_round_trip_and_duplicates(tmp_path):
    cases = [CaseSpec(case_id='case1', serial_path='case1.cc',
                      input_args=['512']),
             CaseSpec(case_id='case2', serial_path='case2.cc',
                      unparallelizable=True, category='histogram')]
    path = tmp_path / 'cases.jsonl'
    save_cases(cases, str(path))
    assert load_cases(str(path)) == cases
    path.write_text(path.read_text() + path.read_text().splitlines()[0] + '\n')
    with pytest.raises(InvalidInputError) as e:
        load_cases(str(path))
    assert 'case1' in str(e.value)


def test_missing_compiler(tmp_path):
    with pytest.raises(ToolchainError):
        compile_gate('int main() { return 0; }\n', str(tmp_path),
                     command='no-such-compiler-omp-rag {src} -o {bin}')


def test_no_generated_program(tmp_path):
    case = CaseSpec(case_id='case1', serial_path='case1.cc')
    for source in (None, '   \n'):
        report = validate_case(case, 'int main() {}', source, str(tmp_path))
        assert not report.compile_ok
        assert report.failure_category is FailureCategory.OTHER_COMPILE_ERROR
        assert report.diagnostics == 'no program was generated'


FAKE_COMPILER = '''#!/bin/sh
case "$1" in
    serial*) exec sleep 5 ;;
esac
printf '#!/bin/sh\\necho "sum 1"\\n' > "$2"
chmod +x "$2"
'''


def test_serial_compile_timeout_is_recorded(tmp_path):
    compiler = tmp_path / 'fakecc'
    compiler.write_text(FAKE_COMPILER)
    compiler.chmod(compiler.stat().st_mode | stat.S_IXUSR)
    settings = ValidationSettings(compiler=CompilerSettings(
        command='{} {{src}} {{bin}}'.format(compiler), timeout=1))
    case = CaseSpec(case_id='case1', serial_path='case1.cc')
    report = validate_case(case, 'int main() {}', 'int main() {}',
                           str(tmp_path / 'work'), settings)
    assert report.compile_ok
    assert report.differential_verdict is DifferentialVerdict.RUNTIME_ERROR


def test_settings_from_config(config):
    settings = ValidationSettings.from_config(config)
    assert settings.thread_counts == (1, 8)
    assert settings.tolerance == 1e-6
    assert settings.compiler.command.startswith('g++ -fopenmp')


FIXTURE_CATEGORIES = [
    ('default_none.cpp', FailureCategory.DEFAULT_NONE_VIOLATION),
    ('invalid_reduction.cpp', FailureCategory.INVALID_REDUCTION),
    ('atomic_misuse.cpp', FailureCategory.ATOMIC_MISUSE),
    ('collapse_misuse.cpp', FailureCategory.COLLAPSE_MISUSE),
    ('syntax_error.cpp', FailureCategory.SYNTAX_ERROR),
    ('undeclared_in_clause.cpp', FailureCategory.UNDECLARED_IN_CLAUSE),
    ('iterator_limitation.cpp', FailureCategory.ITERATOR_LIMITATION),
    ('deprecated_construct.cpp', FailureCategory.DEPRECATED_CONSTRUCT),
    ('other_error.cpp', FailureCategory.OTHER_COMPILE_ERROR),
]


def read_fixture(fixtures_dir, name):
    with open(os.path.join(fixtures_dir, 'cpp', name), encoding='utf-8') as f:
        return f.read()


@pytest.mark.requires_compiler
@pytest.mark.parametrize('name,expected', FIXTURE_CATEGORIES)
def test_compiler_classifies_fixture(fixtures_dir, tmp_path, name, expected):
    source = read_fixture(fixtures_dir, name)
    result = compile_gate(source, str(tmp_path))
    assert not result.compile_ok
    assert result.binary is None
    assert classify_failure(result.diagnostics, source) is expected


@pytest.mark.requires_compiler
def test_compile_gate_builds_binary(fixtures_dir, tmp_path):
    result = compile_gate(read_fixture(fixtures_dir, 'reduction_ok.cpp'),
                          str(tmp_path), name='ok')
    assert result.compile_ok
    assert os.access(result.binary, os.X_OK)


@pytest.mark.requires_compiler
def test_diagnostics_do_not_depend_on_work_dir(fixtures_dir, tmp_path):
    source = read_fixture(fixtures_dir, 'atomic_misuse.cpp')
    first = compile_gate(source, str(tmp_path / 'a'))
    second = compile_gate(source, str(tmp_path / 'deeper' / 'b'))
    assert first.diagnostics == second.diagnostics


@pytest.mark.requires_compiler
def test_validate_case_end_to_end(fixtures_dir, tmp_path):
    case = CaseSpec(case_id='case1', serial_path='reduction_serial.cpp')
    report = validate_case(case,
                           read_fixture(fixtures_dir, 'reduction_serial.cpp'),
                           read_fixture(fixtures_dir, 'reduction_ok.cpp'),
                           str(tmp_path))
    assert report.compile_ok
    assert report.differential_verdict is DifferentialVerdict.PASS
    assert report.threads_tested == [1, 8]


@pytest.mark.requires_compiler
def test_unparallelizable_case_is_not_run(fixtures_dir, tmp_path):
    case = CaseSpec(case_id='case2', serial_path='reduction_serial.cpp',
                    unparallelizable=True)
    report = validate_case(case,
                           read_fixture(fixtures_dir, 'reduction_serial.cpp'),
                           read_fixture(fixtures_dir, 'reduction_ok.cpp'),
                           str(tmp_path))
    assert report.compile_ok
    assert report.excluded_unparallelizable
    assert report.differential_verdict is DifferentialVerdict.SKIPPED
