"""
Benchmark case harvesting from a Q&A site

Accepted answers are fetched per algorithmic category through the Stack
Exchange API (or recorded fixtures), code blocks are extracted and run
through the filters in order:

  (i)   remove input/output statements
  (ii)  remove comments
  (iii) require an #include directive and a for-loop with a body
  (iv)  require a minimum number of non-blank lines

Survivors that compile are appended to the case manifest.
"""

import bisect
import enum
import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional
from urllib.parse import urlencode

import requests
from bs4 import BeautifulSoup

from omp_rag import config as omp_config
from omp_rag.errors import InvalidInputError, OmpRagError, ReplayMissError
from omp_rag.http import create_session
from omp_rag.validation import (CaseSpec, CompileTimeoutError, compile_gate,
                                DEFAULT_SERIAL_COMMAND,
                                DEFAULT_COMPILE_TIMEOUT)

logger = logging.getLogger(__name__)

CATEGORIES = ('dot product', 'matrix multiplication', 'quicksort',
              'histogram', 'prefix sum', 'Jacobi 2D method', 'Mandelbrot set',
              'Monte Carlo simulation', 'vector addition', 'convolution')
DEFAULT_MIN_LINES = 10
DEFAULT_MAX_PAGES = 15
ANSWER_URL = 'https://stackoverflow.com/a/{}'


class FetchError(OmpRagError):
    """
    Q&A API request failed.

    :param status: HTTP status, if any
    :param backoff: seconds the API asked clients to wait, if any
    """

    def __init__(self, message, status=None, backoff=None):
        super().__init__(message)
        self.status = status
        self.backoff = backoff


class RejectionReason(enum.Enum):
    NO_INCLUDE = 'NoInclude'
    NO_FOR_LOOP = 'NoForLoop'
    TOO_SHORT = 'TooShort'
    COMPILE_FAIL = 'CompileFail'
    EMPTY = 'Empty'


@dataclass(frozen=True)
class SnippetCandidate:
    origin_url: str
    category: str
    raw_code: str
    cleaned_code: Optional[str] = None
    rejection_reason: Optional[RejectionReason] = None
    printed_results: tuple = ()

    @property
    def accepted(self):
        return self.cleaned_code is not None and self.rejection_reason is None


#
# Q&A API access
#

def request_key(path, params):
    """
    Stable key of an API request; the API key itself is not part of it.
    """
    cleaned = sorted((k, str(v)) for k, v in params.items() if k != 'key')
    return '{}?{}'.format(path.strip('/'), urlencode(cleaned))


def fixture_name(path, params):
    return hashlib.sha256(request_key(path, params).encode(
        'utf-8')).hexdigest()[:24] + '.json'


class StackExchangeApi(object):
    """
    Live Stack Exchange API client.
    """

    def __init__(self, base_url='https://api.stackexchange.com/2.3',
                 key=None, session=None, sleep=time.sleep, timeout=30):
        self.base_url = base_url.rstrip('/')
        self.key = key
        self.session = session or create_session(retries=3)
        self.sleep = sleep
        self.timeout = timeout
        self.backoff = 0

    def get(self, path, params):
        """
        GET an API path.

        :param path: API path, e.g. search/advanced
        :param params: query parameters
        :return: decoded JSON payload
        :raises FetchError: on transport errors, quota errors or HTTP errors
        """
        if self.backoff:
            # the API asks clients to honour "backoff" between requests
            self.sleep(self.backoff)
            self.backoff = 0
        query = dict(params)
        if self.key:
            query['key'] = self.key
        url = '{}/{}'.format(self.base_url, path.strip('/'))
        try:
            response = self.session.get(url, params=query,
                                        timeout=self.timeout)
        except requests.RequestException as e:
            raise FetchError('Request to {} failed: {}'.format(url, e))
        try:
            data = response.json()
        except ValueError:
            data = dict()
        if response.status_code != 200 or 'error_id' in data:
            backoff = data.get('backoff')
            advice = (' retry after {} s'.format(backoff) if backoff else
                      ' back off before retrying')
            raise FetchError('API returned HTTP {} ({}):{}'.format(
                response.status_code, data.get('error_name', 'error'), advice),
                status=response.status_code, backoff=backoff)
        self.backoff = data.get('backoff', 0)
        return data


class FixtureApi(object):
    """
    Replays recorded API responses from a fixture directory.
    """

    def __init__(self, fixture_dir):
        self.fixture_dir = fixture_dir

    def get(self, path, params):
        name = os.path.join(self.fixture_dir, fixture_name(path, params))
        if not os.path.exists(name):
            raise ReplayMissError('No fixture for request {}'.format(
                request_key(path, params)))
        with open(name, encoding='utf-8') as f:
            return json.load(f)

    def store(self, path, params, data):
        os.makedirs(self.fixture_dir, exist_ok=True)
        with open(os.path.join(self.fixture_dir, fixture_name(path, params)),
                  'w', encoding='utf-8', newline='\n') as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write('\n')


class RecordingApi(object):
    """
    Wraps a live API client and stores every response as a fixture.
    """

    def __init__(self, inner, fixture_dir):
        self.inner = inner
        self.fixtures = FixtureApi(fixture_dir)

    def get(self, path, params):
        data = self.inner.get(path, params)
        self.fixtures.store(path, params, data)
        return data


def api_from_config(config, record=False, session=None):
    """
    Create the Q&A API handle: fixture replay when [Harvest] fixture_dir is
    set, the live API otherwise (recording into fixture_dir if asked).
    """
    fixture_dir = config.get('Harvest', 'fixture_dir')
    if fixture_dir and not record:
        return FixtureApi(fixture_dir)
    api = StackExchangeApi(base_url=config.get('Harvest', 'api_url'),
                           key=omp_config.api_key(config, 'Harvest'),
                           session=session)
    if record:
        if not fixture_dir:
            raise InvalidInputError('Recording needs [Harvest] fixture_dir')
        return RecordingApi(api, fixture_dir)
    return api


def code_blocks(html):
    """
    Code blocks of an answer body.

    :param html: answer body HTML
    :return: list of code texts
    """
    soup = BeautifulSoup(html, 'html.parser')
    blocks = list()
    for pre in soup.find_all('pre'):
        code = pre.find('code') or pre
        text = code.get_text()
        if text.strip():
            blocks.append(text)
    return blocks


def fetch_candidates(category, max_pages, api, keywords=None, site='stackoverflow',
                     tagged='c++', page_size=30):
    """
    Fetch raw snippet candidates of one category.

    Questions with accepted answers are searched by relevance; the accepted
    answers are then fetched with their bodies and every code block becomes
    a candidate. Pages are fetched in order until max_pages or the last
    page.

    :param category: category name
    :param max_pages: number of search pages, at least 1
    :param api: object with get(path, params)
    :param keywords: search keywords, defaults to the category name
    :param site: API site parameter
    :param tagged: tag filter
    :param page_size: search page size
    :return: list of raw SnippetCandidate
    :raises InvalidInputError: if max_pages < 1
    :raises FetchError: on API failures
    :raises ReplayMissError: on a fixture miss
    """
    if max_pages < 1:
        raise InvalidInputError('max_pages must be at least 1, got {}'.format(
            max_pages))
    candidates = list()
    for page in range(1, max_pages + 1):
        search = api.get('search/advanced', {
            'q': keywords or category, 'accepted': 'True',
            'sort': 'relevance', 'order': 'desc', 'tagged': tagged,
            'site': site, 'page': page, 'pagesize': page_size})
        answer_ids = [str(item['accepted_answer_id'])
                      for item in search.get('items', [])
                      if item.get('accepted_answer_id')]
        if answer_ids:
            answers = api.get('answers/{}'.format(';'.join(answer_ids)), {
                'filter': 'withbody', 'site': site})
            by_id = dict((str(a['answer_id']), a)
                         for a in answers.get('items', []))
            for answer_id in answer_ids:
                answer = by_id.get(answer_id)
                if answer is None:
                    continue
                for block in code_blocks(answer.get('body', '')):
                    candidates.append(SnippetCandidate(
                        origin_url=ANSWER_URL.format(answer_id),
                        category=category, raw_code=block))
        if not search.get('has_more'):
            break
    logger.info('Category "{}": {} raw candidates'.format(
        category, len(candidates)))
    return candidates


#
# Cleaning and filtering
#

STREAM_OUT = re.compile(r'(?<![\w:.])(?:std::)?(?:cout|cerr|clog)\s*<<')
STREAM_IN = re.compile(r'(?<![\w:.])(?:std::)?cin\s*>>')
C_IO = re.compile(r'(?<![\w:.])(?:std::)?(?:printf|fprintf|puts|putchar|'
                  r'scanf|fscanf|getchar|fputs|sscanf_s|scanf_s)\s*\(')
GETLINE = re.compile(r'(?<![\w:.])(?:std::)?getline\s*\(\s*(?:std::)?cin\b')
INCLUDE = re.compile(r'^\s*#\s*include\b', re.MULTILINE)
FOR_HEAD = re.compile(r'\bfor\s*\(')
CONTROL_HEAD = re.compile(r'^\s*(?:\}\s*)?(?:for|while|if|else\s+if|switch)\s*'
                          r'\(.*\)\s*$|^\s*(?:\}\s*)?(?:else|do)\s*$')
MAIN = re.compile(r'\bint\s+main\s*\([^)]*\)\s*\{')
RESULT_PRINT = 'std::cout << "RESULT"'


def _opaque_spans(code):
    """
    Sorted (start, end) spans of string/character literals and comments.
    """
    spans = list()
    i = 0
    while i < len(code):
        if code.startswith('//', i):
            end = code.find('\n', i)
            end = len(code) if end < 0 else end
        elif code.startswith('/*', i):
            end = code.find('*/', i + 2)
            end = len(code) if end < 0 else end + 2
        elif code[i] in '"\'':
            end = min(_skip_literal(code, i), len(code))
        else:
            i += 1
            continue
        spans.append((i, end))
        i = end
    return spans


def _statement_end(text, start, opaque=None):
    """
    Index just past the ';' ending the statement starting at start,
    skipping literals, comments and nested parentheses.
    """
    if opaque is None:
        opaque = dict(_opaque_spans(text))
    depth = 0
    i = start
    while i < len(text):
        if i in opaque:
            i = opaque[i]
            continue
        ch = text[i]
        if ch in '([{':
            depth += 1
        elif ch in ')]}':
            if depth == 0:
                return i
            depth -= 1
        elif ch == ';' and depth == 0:
            return i + 1
        i += 1
    return len(text)


def _skip_literal(text, i):
    quote = text[i]
    i += 1
    while i < len(text) and text[i] != quote:
        if text[i] == '\\':
            i += 1
        elif text[i] == '\n':
            break
        i += 1
    return i + 1


def _in_spans(spans, position):
    index = bisect.bisect_right(spans, (position, float('inf')))
    return index > 0 and spans[index - 1][0] <= position < spans[index - 1][1]


def _io_statements(code):
    """
    Spans (start, end, kind, text) of input/output statements outside
    literals and comments.
    """
    opaque_spans = _opaque_spans(code)
    opaque = dict(opaque_spans)
    spans = list()
    for pattern, kind in ((STREAM_OUT, 'out'), (STREAM_IN, 'in'),
                          (C_IO, 'c'), (GETLINE, 'in')):
        for m in pattern.finditer(code):
            if _in_spans(opaque_spans, m.start()):
                continue
            end = _statement_end(code, m.start(), opaque)
            spans.append((m.start(), end, kind, code[m.start():end]))
    spans.sort()
    merged = list()
    for span in spans:
        if merged and span[0] < merged[-1][1]:
            continue
        merged.append(span)
    return merged


def _input_replacement(statement):
    """
    `cin >> a >> b[i];` becomes `a = {}; b[i] = {};`.
    """
    if GETLINE.match(statement.strip()):
        inner = statement[statement.index('(') + 1:statement.rindex(')')]
        parts = inner.split(',', 1)
        if len(parts) == 2:
            return '{} = {{}};'.format(parts[1].strip())
        return ';'
    targets = [t.strip() for t in STREAM_IN.split(statement, 1)[1].rstrip(
        ' ;\n').split('>>')]
    return ' '.join('{} = {{}};'.format(t) for t in targets if t) or ';'


def _output_expressions(statement):
    if not STREAM_OUT.match(statement.strip()):
        return ()
    parts = [p.strip() for p in statement.rstrip(' ;\n').split('<<')[1:]]
    return tuple(p for p in parts
                 if p and p not in ('std::endl', 'endl', '"\\n"', "'\\n'",
                                    '" "', "' '", 'std::flush', 'flush')
                 and not p.startswith('"'))


def remove_io(code):
    """
    Remove input/output statements.

    Input statements are replaced by value-initialization of their targets
    so that declarations they fed keep a defined value. A statement that is
    the body of a brace-less control header is replaced by ';'.

    :param code: C++ source
    :return: (cleaned code, tuple of output expressions of the last output
             statement inside main)
    """
    spans = _io_statements(code)
    main = MAIN.search(code)
    printed = ()
    pieces = list()
    last = 0
    for start, end, kind, statement in spans:
        pieces.append(code[last:start])
        if kind == 'in':
            pieces.append(_input_replacement(statement))
        else:
            if main and start > main.end():
                printed = _output_expressions(statement) or printed
            before = ''.join(pieces).rstrip()
            last_line = before[before.rfind('\n') + 1:]
            if CONTROL_HEAD.match(last_line) or before.endswith(')'):
                pieces.append(';')
        last = end
    pieces.append(code[last:])
    cleaned = ''.join(pieces)
    lines = [line.rstrip() for line in cleaned.split('\n')]
    original_blank = set(i for i, line in enumerate(code.split('\n'))
                         if not line.strip())
    kept = [line for i, line in enumerate(lines)
            if line.strip() or i in original_blank]
    return '\n'.join(kept).strip('\n'), printed


def remove_comments(code):
    """
    Remove // and /* */ comments; lines left empty by the removal are
    dropped.

    :param code: C++ source
    :return: source without comments
    """
    out = list()
    i = 0
    while i < len(code):
        ch = code[i]
        if ch in '"\'':
            end = _skip_literal(code, i)
            out.append(code[i:end])
            i = end
        elif code.startswith('//', i):
            newline = code.find('\n', i)
            i = len(code) if newline < 0 else newline
        elif code.startswith('/*', i):
            end = code.find('*/', i + 2)
            comment = code[i:len(code) if end < 0 else end + 2]
            # keep line structure
            out.append('\n' * comment.count('\n'))
            i = len(code) if end < 0 else end + 2
        else:
            out.append(ch)
            i += 1
    original = code.split('\n')
    stripped = ''.join(out).split('\n')
    kept = list()
    for before, after in zip(original, stripped):
        if after.strip() or not before.strip():
            kept.append(after.rstrip())
    return '\n'.join(kept).strip('\n')


def has_for_loop_with_body(code):
    """
    True if some for-loop header is followed by a body (not just ';').
    """
    for m in FOR_HEAD.finditer(code):
        close = _matching_paren(code, m.end() - 1)
        if close < 0:
            continue
        rest = code[close + 1:].lstrip()
        if rest and not rest.startswith(';'):
            return True
    return False


def _matching_paren(code, open_index):
    depth = 0
    for i in range(open_index, len(code)):
        if code[i] == '(':
            depth += 1
        elif code[i] == ')':
            depth -= 1
            if depth == 0:
                return i
    return -1


def non_blank_lines(code):
    return sum(1 for line in code.split('\n') if line.strip())


def clean_and_filter(candidate, min_lines=DEFAULT_MIN_LINES):
    """
    Apply the cleaning filters in order; the first failing filter names the
    rejection.

    :param candidate: raw SnippetCandidate
    :param min_lines: minimum non-blank lines after cleaning
    :return: SnippetCandidate, cleaned or rejected
    """
    if not candidate.raw_code.strip():
        return _reject(candidate, RejectionReason.EMPTY)
    code, printed = remove_io(candidate.raw_code)
    code = remove_comments(code)
    if not code.strip():
        return _reject(candidate, RejectionReason.EMPTY)
    if not INCLUDE.search(code):
        return _reject(candidate, RejectionReason.NO_INCLUDE)
    if not has_for_loop_with_body(code):
        return _reject(candidate, RejectionReason.NO_FOR_LOOP)
    if non_blank_lines(code) < min_lines:
        return _reject(candidate, RejectionReason.TOO_SHORT)
    return replace(candidate, cleaned_code=code + '\n', rejection_reason=None,
                   printed_results=printed or candidate.printed_results)


def _reject(candidate, reason):
    logger.debug('Rejected {} snippet from {}: {}'.format(
        candidate.category, candidate.origin_url, reason.value))
    return replace(candidate, cleaned_code=None, rejection_reason=reason)


#
# Compile filter and case manifest
#

def add_result_harness(code, expressions):
    """
    Print the given expressions on one canonical RESULT line just before
    main returns.

    :param code: cleaned source
    :param expressions: expressions printed by the original snippet
    :return: source with the harness, or None if main cannot be located
    """
    main = MAIN.search(code)
    if not main or not expressions:
        return None
    depth = 1
    i = main.end()
    last_return = None
    while i < len(code) and depth:
        ch = code[i]
        if ch in '"\'':
            i = _skip_literal(code, i)
            continue
        if ch == '{':
            depth += 1
        elif ch == '}':
            depth -= 1
        elif depth == 1 and re.match(r'\breturn\b', code[i:i + 7]) and \
                not re.match(r'\w', code[i - 1]):
            last_return = i
        i += 1
    if depth:
        return None
    if last_return is None:
        insert_at, indent = i - 1, '    '
    else:
        insert_at = code.rfind('\n', 0, last_return) + 1
        indent = code[insert_at:last_return]
        if indent.strip():
            insert_at, indent = last_return, ''
    line = indent + '{}{};\n'.format(RESULT_PRINT, ''.join(
        " << ' ' << ({})".format(e) for e in expressions) + " << '\\n'")
    header = '' if re.search(r'#\s*include\s*<iostream>', code) else \
        '#include <iostream>\n'
    return header + code[:insert_at] + line + code[insert_at:]


class CaseManifestBuilder(object):
    """
    Appends compiled survivors to a case manifest with sequential case ids
    case<N>, N continuing after the existing (curated) cases.
    """

    def __init__(self, cases_dir, existing=None):
        self.cases_dir = cases_dir
        self.cases = list(existing or [])
        numbers = [int(m.group(1)) for m in
                   (re.match(r'^case(\d+)$', c.case_id) for c in self.cases)
                   if m]
        self.next_number = max(numbers) + 1 if numbers else 1
        os.makedirs(cases_dir, exist_ok=True)

    def add(self, candidate, source):
        case_id = 'case{}'.format(self.next_number)
        self.next_number += 1
        filename = '{}.cc'.format(case_id)
        with open(os.path.join(self.cases_dir, filename), 'w',
                  encoding='utf-8', newline='\n') as f:
            f.write(source)
        case = CaseSpec(case_id=case_id, serial_path=filename,
                        category=candidate.category,
                        origin_url=candidate.origin_url)
        self.cases.append(case)
        return case


def compile_filter(candidate, work_dir, builder=None,
                   command=DEFAULT_SERIAL_COMMAND,
                   timeout=DEFAULT_COMPILE_TIMEOUT):
    """
    Keep a cleaned snippet only if it compiles.

    The snippet is compiled without OpenMP. When the original printed
    results, a RESULT print harness is added; if the harness does not
    compile, the plain snippet is kept.

    :param candidate: SnippetCandidate with cleaned_code
    :param work_dir: compile directory
    :param builder: CaseManifestBuilder receiving survivors, optional
    :param command: compiler command template
    :param timeout: compile timeout in seconds
    :return: (SnippetCandidate, CaseSpec or None)
    :raises InvalidInputError: if the candidate was not cleaned
    :raises ToolchainError: if the compiler is missing
    """
    if candidate.cleaned_code is None:
        raise InvalidInputError('Candidate from {} has no cleaned code'.format(
            candidate.origin_url))
    try:
        result = compile_gate(candidate.cleaned_code, work_dir,
                              command=command, timeout=timeout,
                              name='snippet')
    except CompileTimeoutError:
        result = None
    if result is None or not result.compile_ok:
        return _reject(candidate, RejectionReason.COMPILE_FAIL), None
    source = candidate.cleaned_code
    harnessed = add_result_harness(source, candidate.printed_results)
    if harnessed is not None:
        try:
            if compile_gate(harnessed, work_dir, command=command,
                            timeout=timeout, name='harness').compile_ok:
                source = harnessed
            else:
                logger.info('Result harness for {} does not compile, keeping '
                            'the plain snippet'.format(candidate.origin_url))
        except CompileTimeoutError:
            pass
    case = builder.add(candidate, source) if builder is not None else None
    return candidate, case


def harvest(categories, api, work_dir, builder, max_pages=DEFAULT_MAX_PAGES,
            min_lines=DEFAULT_MIN_LINES, command=DEFAULT_SERIAL_COMMAND,
            timeout=DEFAULT_COMPILE_TIMEOUT, workers=4, site='stackoverflow',
            tagged='c++', page_size=30):
    """
    Fetch, clean, filter and compile-gate snippets of every category.

    Fetching is sequential; cleaning runs on a thread pool. Survivors are
    compiled and numbered in fetch order.

    :param categories: dict category name -> keywords (or None)
    :param api: Q&A API handle
    :param work_dir: compile directory
    :param builder: CaseManifestBuilder
    :return: list of every processed SnippetCandidate
    """
    processed = list()
    for category, keywords in categories.items():
        raw = fetch_candidates(category, max_pages, api, keywords=keywords,
                               site=site, tagged=tagged, page_size=page_size)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cleaned = list(pool.map(
                lambda c: clean_and_filter(c, min_lines=min_lines), raw))
        for candidate in cleaned:
            if candidate.accepted:
                candidate, case = compile_filter(
                    candidate, os.path.join(work_dir, 'harvest'), builder,
                    command=command, timeout=timeout)
                if case is not None:
                    logger.info('Retained {} from {} as {}'.format(
                        category, candidate.origin_url, case.case_id))
            processed.append(candidate)
    rejected = [c for c in processed if c.rejection_reason is not None]
    logger.info('Harvest: {} candidates, {} retained, {} rejected'.format(
        len(processed), len(processed) - len(rejected), len(rejected)))
    return processed
