"""
Compile gate, failure classification and differential validation

Generated programs are compiled with an OpenMP-enabled compiler. Failed
compilations are classified by an ordered list of rules over the compiler
diagnostics and the source; the first matching rule wins. Programs that
compile are run against the serial original at several thread counts and
their normalized outputs compared.
"""

import enum
import json
import logging
import math
import os
import re
import shlex
import subprocess
import tempfile
from collections import namedtuple
from dataclasses import dataclass, field
from typing import List, Optional

from omp_rag import config as omp_config
from omp_rag.errors import InvalidInputError, OmpRagError, ToolchainError

logger = logging.getLogger(__name__)

DEFAULT_COMMAND = 'g++ -fopenmp -std=c++17 -O2 {src} -o {bin}'
DEFAULT_SERIAL_COMMAND = 'g++ -std=c++17 -O2 {src} -o {bin}'
DEFAULT_COMPILE_TIMEOUT = 60
DEFAULT_RUN_TIMEOUT = 120
DEFAULT_TOLERANCE = 1e-6
DEFAULT_THREADS = (1, 8)
THREADS_VARIABLE = 'OMP_NUM_THREADS'
TIMING_LINE = re.compile(r'^\s*ELAPSED_SECONDS\s*=')
NUMBER_PART = re.compile(r'([-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)')


class CompileTimeoutError(OmpRagError):
    """
    Compiler did not finish in time.
    """
    pass


class FailureCategory(enum.Enum):
    UNDECLARED_IN_CLAUSE = 'UndeclaredInClause'
    INVALID_REDUCTION = 'InvalidReduction'
    ATOMIC_MISUSE = 'AtomicMisuse'
    DEFAULT_NONE_VIOLATION = 'DefaultNoneViolation'
    SYNTAX_ERROR = 'SyntaxError'
    COLLAPSE_MISUSE = 'CollapseMisuse'
    ITERATOR_LIMITATION = 'IteratorLimitation'
    DEPRECATED_CONSTRUCT = 'DeprecatedConstruct'
    OTHER_COMPILE_ERROR = 'OtherCompileError'


class DifferentialVerdict(enum.Enum):
    PASS = 'Pass'
    MISMATCH = 'Mismatch'
    RUNTIME_ERROR = 'RuntimeError'
    SKIPPED = 'Skipped'


@dataclass
class ValidationReport:
    case_id: str
    compile_ok: bool
    failure_category: Optional[FailureCategory] = None
    diagnostics: str = ''
    differential_verdict: DifferentialVerdict = DifferentialVerdict.SKIPPED
    threads_tested: List[int] = field(default_factory=list)
    excluded_unparallelizable: bool = False

    def __post_init__(self):
        if self.compile_ok and self.failure_category is not None:
            raise InvalidInputError('Case "{}" compiled but has a failure '
                                    'category'.format(self.case_id))
        if (self.differential_verdict is not DifferentialVerdict.SKIPPED and
                not self.compile_ok):
            raise InvalidInputError('Case "{}" has a differential verdict '
                                    'without compiling'.format(self.case_id))

    def to_dict(self):
        return {'case_id': self.case_id, 'compile_ok': self.compile_ok,
                'failure_category': (self.failure_category.value
                                     if self.failure_category else None),
                'diagnostics': self.diagnostics,
                'differential_verdict': self.differential_verdict.value,
                'threads_tested': list(self.threads_tested),
                'excluded_unparallelizable': self.excluded_unparallelizable}

    @classmethod
    def from_dict(cls, data):
        category = data.get('failure_category')
        return cls(case_id=data['case_id'], compile_ok=bool(data['compile_ok']),
                   failure_category=(FailureCategory(category) if category
                                     else None),
                   diagnostics=data.get('diagnostics', ''),
                   differential_verdict=DifferentialVerdict(
                       data.get('differential_verdict', 'Skipped')),
                   threads_tested=list(data.get('threads_tested', [])),
                   excluded_unparallelizable=bool(
                       data.get('excluded_unparallelizable', False)))


def save_reports(reports, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for report in reports:
            f.write(json.dumps(report.to_dict(), ensure_ascii=False,
                               sort_keys=True))
            f.write('\n')


def load_reports(path):
    if not os.path.exists(path):
        raise InvalidInputError('Reports file not found: {}'.format(path))
    reports = list()
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                reports.append(ValidationReport.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise InvalidInputError('{}:{}: not a validation report: '
                                        '{}'.format(path, number, e))
    return reports


@dataclass
class CaseSpec:
    """
    One entry of the case manifest.
    """
    case_id: str
    serial_path: str
    input_args: List[str] = field(default_factory=list)
    unparallelizable: bool = False
    category: Optional[str] = None
    origin_url: Optional[str] = None

    def to_dict(self):
        data = {'case_id': self.case_id, 'serial_path': self.serial_path,
                'input_args': list(self.input_args),
                'unparallelizable': self.unparallelizable}
        if self.category is not None:
            data['category'] = self.category
        if self.origin_url is not None:
            data['origin_url'] = self.origin_url
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(case_id=data['case_id'], serial_path=data['serial_path'],
                   input_args=[str(a) for a in data.get('input_args', [])],
                   unparallelizable=bool(data.get('unparallelizable', False)),
                   category=data.get('category'),
                   origin_url=data.get('origin_url'))

    def source(self, base_dir=''):
        with open(os.path.join(base_dir, self.serial_path),
                  encoding='utf-8') as f:
            return f.read()


def load_cases(path):
    """
    Read a case manifest (line-delimited JSON).

    :param path: manifest path
    :return: list of CaseSpec
    :raises InvalidInputError: on malformed lines or duplicate case ids
    """
    cases = list()
    seen = set()
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                case = CaseSpec.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as e:
                raise InvalidInputError('{}:{}: not a case record: {}'.format(
                    path, number, e))
            if case.case_id in seen:
                raise InvalidInputError('{}:{}: duplicate case id "{}"'.format(
                    path, number, case.case_id))
            seen.add(case.case_id)
            cases.append(case)
    return cases


def save_cases(cases, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for case in cases:
            f.write(json.dumps(case.to_dict(), ensure_ascii=False))
            f.write('\n')


CompileResult = namedtuple('CompileResult', 'compile_ok diagnostics binary')


@dataclass
class CompilerSettings:
    command: str = DEFAULT_COMMAND
    serial_command: str = DEFAULT_SERIAL_COMMAND
    timeout: float = DEFAULT_COMPILE_TIMEOUT

    @classmethod
    def from_config(cls, config):
        return cls(command=config.get('Compiler', 'command'),
                   serial_command=config.get('Compiler', 'serial_command'),
                   timeout=config.getfloat('Compiler', 'timeout'))


def _compiler_env():
    env = dict(os.environ)
    # ASCII quotes in diagnostics
    env['LC_ALL'] = 'C'
    env['LANG'] = 'C'
    return env


def compile_gate(source, work_dir, command=DEFAULT_COMMAND,
                 timeout=DEFAULT_COMPILE_TIMEOUT, name='case'):
    """
    Compile C++ source.

    The source is written to <work_dir>/<name>.cpp and the compiler runs
    inside work_dir with relative paths, so diagnostics do not depend on
    where work_dir lives.

    :param source: C++ source text
    :param work_dir: directory for the source and the binary
    :param command: command template with {src} and {bin}
    :param timeout: compile timeout in seconds
    :param name: file stem for source and binary
    :return: CompileResult(compile_ok, diagnostics, binary path or None)
    :raises ToolchainError: if the compiler binary is missing
    :raises CompileTimeoutError: if compilation times out
    """
    os.makedirs(work_dir, exist_ok=True)
    src = '{}.cpp'.format(name)
    binary = name
    with open(os.path.join(work_dir, src), 'w', encoding='utf-8',
              newline='\n') as f:
        f.write(source)
    args = [token.format(src=src, bin=binary)
            for token in shlex.split(command)]
    logger.debug('Compiling "{}" in {}'.format(' '.join(args), work_dir))
    try:
        p = subprocess.run(args, cwd=work_dir, stdout=subprocess.PIPE,
                           stderr=subprocess.PIPE, timeout=timeout,
                           env=_compiler_env())
    except FileNotFoundError:
        raise ToolchainError('Compiler "{}" not found'.format(args[0]))
    except subprocess.TimeoutExpired:
        raise CompileTimeoutError('Compiling {} timed out after {} s'.format(
            name, timeout))
    diagnostics = p.stderr.decode('utf-8', errors='replace')
    if p.returncode != 0:
        return CompileResult(False, diagnostics, None)
    return CompileResult(True, diagnostics, os.path.join(work_dir, binary))


def openmp_available(command=DEFAULT_COMMAND, work_dir=None):
    """
    Check that the configured compiler builds an OpenMP program.
    """
    source = ('#include <omp.h>\n'
              'int main() { return omp_get_max_threads() > 0 ? 0 : 1; }\n')
    with tempfile.TemporaryDirectory(dir=work_dir) as d:
        try:
            return compile_gate(source, d, command=command).compile_ok
        except (ToolchainError, CompileTimeoutError):
            return False


#
# Failure classification
#

CLAUSE = re.compile(r'\b(private|firstprivate|lastprivate|shared|reduction|'
                    r'copyin|copyprivate|linear|aligned)\s*\(([^)]*)\)')
PRAGMA_LINE = re.compile(r'^\s*#\s*pragma\s+omp\b(.*)$', re.MULTILINE)
UNDECLARED = re.compile(r"'(?P<name>[A-Za-z_]\w*)' (?:was not declared|has "
                        r"not been declared|is not a variable in clause)|"
                        r"use of undeclared identifier '(?P<clang>[A-Za-z_]\w*)'")
DUPLICATE_CLAUSE = re.compile(r"'(?P<name>[A-Za-z_]\w*)' appears more than "
                              r"once in (?:data|reduction) clauses")
ITERATOR_OPERATOR = re.compile(r"no match for 'operator(?:-|<|\+|\+=|<=)'|"
                               r'difference between .* does not have integer')
ERROR_LINE = re.compile(r"\b(?:fatal )?error:")


def _clause_variables(source, clauses=None):
    """
    Names listed in OpenMP data clauses of the source.
    """
    names = set()
    for m in PRAGMA_LINE.finditer(source):
        for clause in CLAUSE.finditer(m.group(1)):
            if clauses and clause.group(1) not in clauses:
                continue
            items = clause.group(2)
            if ':' in items:
                items = items.split(':', 1)[1]
            names.update(n.strip() for n in items.split(',') if n.strip())
    return names


def _has(*patterns):
    compiled = [re.compile(p, re.IGNORECASE) for p in patterns]

    def predicate(diagnostics, source):
        return any(p.search(diagnostics) for p in compiled)
    return predicate


def _undeclared_in_clause(diagnostics, source):
    listed = _clause_variables(source)
    for m in UNDECLARED.finditer(diagnostics):
        if (m.group('name') or m.group('clang')) in listed:
            return True
    return 'is not a variable in clause' in diagnostics


def _duplicate_reduction(diagnostics, source):
    reduced = _clause_variables(source, clauses=('reduction',))
    return any(m.group('name') in reduced
               for m in DUPLICATE_CLAUSE.finditer(diagnostics))


def _iterator_operator(diagnostics, source):
    return (ITERATOR_OPERATOR.search(diagnostics) is not None and
            'iterator' in diagnostics.lower())


Rule = namedtuple('Rule', 'category predicate')

RULES = (
    Rule(FailureCategory.DEFAULT_NONE_VIOLATION,
         _has(r"not specified in enclosing '(?:parallel|teams|task)",
              r'must have explicitly specified data sharing attributes')),
    Rule(FailureCategory.DEPRECATED_CONSTRUCT,
         _has(r'\bbind[12](?:nd|st)\b', r'\bptr_fun\b', r'\bmem_fun(?:_ref)?\b',
              r'\bauto_ptr\b', r'\brandom_shuffle\b',
              r'\b(?:unary|binary)_function\b',
              r'ISO C\+\+\d+ does not allow')),
    Rule(FailureCategory.INVALID_REDUCTION,
         _has(r'user defined reduction not found',
              r"has invalid type for 'reduction'",
              r'not valid for specified reduction operation',
              r'reduction variable .* (?:must|should) be',
              r'invalid reduction')),
    Rule(FailureCategory.INVALID_REDUCTION, _duplicate_reduction),
    Rule(FailureCategory.ATOMIC_MISUSE,
         _has(r"'#pragma omp atomic'", r"statement for 'atomic'",
              r"for 'atomic' must be", r'invalid form of .*atomic')),
    Rule(FailureCategory.COLLAPSE_MISUSE,
         _has(r'not enough (?:perfectly nested |for |nested )?loops',
              r'collapsed loops not perfectly nested',
              r'expected \d+ for loops after')),
    Rule(FailureCategory.ITERATOR_LIMITATION, _iterator_operator),
    Rule(FailureCategory.UNDECLARED_IN_CLAUSE, _undeclared_in_clause),
    Rule(FailureCategory.SYNTAX_ERROR,
         _has(r"expected '[()]'", r"expected .* before",
              r'expected .* at end of input', r'invalid controlling predicate',
              r'invalid increment expression', r'invalid initializer',
              r'expected an OpenMP directive', r"'#pragma omp \w+' "
              r"(?:must|may only) be", r'expected (?:an? )?(?:expression|'
              r'identifier|statement)', r'stray .* in program')),
)


def error_lines(diagnostics):
    """
    The error lines of compiler output; warnings and notes are dropped.
    Output without any error line is returned whole.
    """
    lines = [line for line in diagnostics.splitlines()
             if ERROR_LINE.search(line)]
    return '\n'.join(lines) if lines else diagnostics


def classify_failure(diagnostics, source=''):
    """
    Map a failed compilation onto a FailureCategory.

    Rules are tried in order against the error lines; the first match
    wins, OtherCompileError is the fallthrough.

    :param diagnostics: compiler stderr
    :param source: source that failed to compile
    :return: FailureCategory
    """
    text = (error_lines(diagnostics).replace('‘', "'").replace('’', "'")
            .replace('“', '"').replace('”', '"'))
    for rule in RULES:
        if rule.predicate(text, source):
            return rule.category
    return FailureCategory.OTHER_COMPILE_ERROR


#
# Differential validation
#

RunResult = namedtuple('RunResult', 'ok output error')


def run_program(binary, args=(), threads=None, timeout=DEFAULT_RUN_TIMEOUT,
                stdin=None):
    """
    Run a program and capture stdout.

    :param binary: program path
    :param args: program arguments
    :param threads: value for OMP_NUM_THREADS, None to leave it unset
    :param timeout: run timeout in seconds
    :param stdin: optional text fed to standard input
    :return: RunResult(ok, stdout text, error message or None)
    """
    env = dict(os.environ)
    if threads is not None:
        env[THREADS_VARIABLE] = str(threads)
    try:
        p = subprocess.run([os.path.abspath(binary)] + list(args),
                           input=stdin.encode('utf-8') if stdin else None,
                           stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                           timeout=timeout, env=env)
    except subprocess.TimeoutExpired:
        return RunResult(False, '', 'timed out after {} s'.format(timeout))
    except OSError as e:
        return RunResult(False, '', str(e))
    output = p.stdout.decode('utf-8', errors='replace')
    if p.returncode != 0:
        return RunResult(False, output, 'exit status {}: {}'.format(
            p.returncode, p.stderr.decode('utf-8', errors='replace').strip()))
    return RunResult(True, output, None)


def normalize_output(text):
    """
    Canonicalize program output: line endings, trailing whitespace,
    trailing blank lines, and timing lines removed.

    :param text: program stdout
    :return: list of lines
    """
    lines = [line.rstrip() for line in
             text.replace('\r\n', '\n').replace('\r', '\n').split('\n')]
    lines = [line for line in lines if not TIMING_LINE.match(line)]
    while lines and not lines[-1]:
        lines.pop()
    return lines


def _number(token):
    try:
        return float(token)
    except ValueError:
        return None


def _numbers_match(a, b, tolerance):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return math.isclose(a, b, rel_tol=tolerance, abs_tol=1e-12)


def tokens_match(expected, actual, tolerance=DEFAULT_TOLERANCE):
    """
    Compare two whitespace tokens; numbers within relative tolerance.

    Numbers embedded in a token (`sum=1.5`, `(1.0,2.0)`) are compared the
    same way; the text around them must be equal.
    """
    if expected == actual:
        return True
    a, b = _number(expected), _number(actual)
    if a is not None and b is not None:
        return _numbers_match(a, b, tolerance)
    e_parts, a_parts = NUMBER_PART.split(expected), NUMBER_PART.split(actual)
    if len(e_parts) != len(a_parts) or len(e_parts) == 1:
        return False
    # odd indexes hold the numbers
    for index, (e, a) in enumerate(zip(e_parts, a_parts)):
        if index % 2 == 0:
            if e != a:
                return False
        elif not _numbers_match(float(e), float(a), tolerance):
            return False
    return True


def outputs_match(expected, actual, tolerance=DEFAULT_TOLERANCE):
    """
    Compare two program outputs after normalization.

    :param expected: reference stdout
    :param actual: candidate stdout
    :param tolerance: relative tolerance for numeric tokens
    :return: True if equivalent
    """
    expected_lines = normalize_output(expected)
    actual_lines = normalize_output(actual)
    if len(expected_lines) != len(actual_lines):
        return False
    for e_line, a_line in zip(expected_lines, actual_lines):
        e_tokens, a_tokens = e_line.split(), a_line.split()
        if len(e_tokens) != len(a_tokens):
            return False
        if not all(tokens_match(e, a, tolerance)
                   for e, a in zip(e_tokens, a_tokens)):
            return False
    return True


def differential_validate(serial_binary, parallel_binary,
                          thread_counts=DEFAULT_THREADS, input_args=(),
                          timeout=DEFAULT_RUN_TIMEOUT,
                          tolerance=DEFAULT_TOLERANCE):
    """
    Compare a parallel program against its serial original.

    The serial program runs once; the parallel program runs once per thread
    count with OMP_NUM_THREADS set. Runs are sequential.

    :param serial_binary: serial program path
    :param parallel_binary: parallel program path
    :param thread_counts: thread counts to test
    :param input_args: canonical program arguments
    :param timeout: per-run timeout in seconds
    :param tolerance: relative tolerance for numeric tokens
    :return: DifferentialVerdict
    """
    if not thread_counts:
        raise InvalidInputError('Differential validation needs thread counts')
    serial = run_program(serial_binary, input_args, threads=1, timeout=timeout)
    if not serial.ok:
        logger.warning('Serial program {} failed: {}'.format(
            serial_binary, serial.error))
        return DifferentialVerdict.RUNTIME_ERROR
    verdict = DifferentialVerdict.PASS
    for threads in thread_counts:
        parallel = run_program(parallel_binary, input_args, threads=threads,
                               timeout=timeout)
        if not parallel.ok:
            logger.info('Parallel program {} failed at {} threads: {}'.format(
                parallel_binary, threads, parallel.error))
            return DifferentialVerdict.RUNTIME_ERROR
        if not outputs_match(serial.output, parallel.output, tolerance):
            logger.info('Parallel program {} output differs at {} '
                        'threads'.format(parallel_binary, threads))
            verdict = DifferentialVerdict.MISMATCH
    return verdict


@dataclass
class ValidationSettings:
    compiler: CompilerSettings = field(default_factory=CompilerSettings)
    thread_counts: tuple = DEFAULT_THREADS
    timeout: float = DEFAULT_RUN_TIMEOUT
    tolerance: float = DEFAULT_TOLERANCE

    @classmethod
    def from_config(cls, config):
        return cls(compiler=CompilerSettings.from_config(config),
                   thread_counts=tuple(omp_config.get_int_list(
                       config, 'Validation', 'threads')),
                   timeout=config.getfloat('Validation', 'timeout'),
                   tolerance=config.getfloat('Validation', 'tolerance'))


def validate_case(case, serial_source, parallel_source, work_dir,
                  settings=None):
    """
    Compile gate, classification and differential validation of one case.

    :param case: CaseSpec
    :param serial_source: serial original
    :param parallel_source: generated program (None when generation failed)
    :param work_dir: per-case working directory
    :param settings: ValidationSettings
    :return: ValidationReport
    :raises ToolchainError: if the compiler is missing
    """
    settings = settings or ValidationSettings()
    compiler = settings.compiler
    if parallel_source is None or not parallel_source.strip():
        logger.warning('Case "{}" has no generated program'.format(
            case.case_id))
        return ValidationReport(
            case_id=case.case_id, compile_ok=False,
            failure_category=FailureCategory.OTHER_COMPILE_ERROR,
            diagnostics='no program was generated',
            excluded_unparallelizable=case.unparallelizable)
    try:
        result = compile_gate(parallel_source, work_dir,
                              command=compiler.command,
                              timeout=compiler.timeout, name='parallel')
    except CompileTimeoutError as e:
        return ValidationReport(
            case_id=case.case_id, compile_ok=False,
            failure_category=FailureCategory.OTHER_COMPILE_ERROR,
            diagnostics=str(e),
            excluded_unparallelizable=case.unparallelizable)
    if not result.compile_ok:
        category = classify_failure(result.diagnostics, parallel_source)
        logger.info('Case "{}" failed to compile: {}'.format(
            case.case_id, category.value))
        return ValidationReport(
            case_id=case.case_id, compile_ok=False, failure_category=category,
            diagnostics=result.diagnostics,
            excluded_unparallelizable=case.unparallelizable)
    if case.unparallelizable:
        return ValidationReport(case_id=case.case_id, compile_ok=True,
                                diagnostics=result.diagnostics,
                                excluded_unparallelizable=True)
    try:
        serial = compile_gate(serial_source, work_dir,
                              command=compiler.command,
                              timeout=compiler.timeout, name='serial')
    except CompileTimeoutError as e:
        logger.warning('Serial original of case "{}": {}'.format(
            case.case_id, e))
        serial = CompileResult(False, str(e), None)
    if not serial.compile_ok:
        logger.warning('Serial original of case "{}" does not compile'.format(
            case.case_id))
        verdict = DifferentialVerdict.RUNTIME_ERROR
    else:
        verdict = differential_validate(
            serial.binary, result.binary, settings.thread_counts,
            input_args=case.input_args, timeout=settings.timeout,
            tolerance=settings.tolerance)
    return ValidationReport(case_id=case.case_id, compile_ok=True,
                            diagnostics=result.diagnostics,
                            differential_verdict=verdict,
                            threads_tested=list(settings.thread_counts))
