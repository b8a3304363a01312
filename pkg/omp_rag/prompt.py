"""
Prompt assembly

A prompt is the instruction template rendered with two sections: the
retrieved tutorial context (in rank order) and the serial program. Each
section is wrapped in sentinel lines carrying a nonce derived from the
section contents, so the sections can be re-extracted exactly with
extract_sections().
"""

import hashlib
import os
import re
from dataclasses import dataclass

import jinja2
import jinja2.meta

from omp_rag.errors import IntegrityError, InvalidInputError

TEMPLATE_PATH = os.path.join(os.path.dirname(__file__), 'data',
                             'prompt-template.txt')
EMPHASIS_CLAUSE = ('Emphasize syntactic correctness and semantic '
                   'preservation: the parallel program must compile and '
                   'must produce the same results as the serial program.')
CONTEXT_PLACEHOLDER = re.compile(r'\{\{\s*context\s*\}\}')
CODE_PLACEHOLDER = re.compile(r'\{\{\s*code\s*\}\}')

_environment = jinja2.Environment(autoescape=False,
                                  keep_trailing_newline=True,
                                  undefined=jinja2.StrictUndefined)


@dataclass(frozen=True)
class PromptBundle:
    instruction: str
    context_blocks: tuple
    serial_code: str
    rendered: str
    token_estimate: int
    delimiter: str

    def sha256(self):
        return hashlib.sha256(self.rendered.encode('utf-8')).hexdigest()


def load_template(path=None):
    """
    Read an instruction template.

    :param path: template file, None for the packaged template
    :return: template text
    """
    with open(path or TEMPLATE_PATH, encoding='utf-8') as f:
        return f.read()


def check_template(template):
    """
    Validate a template and make sure it carries the emphasis clause.

    :param template: template text with {{context}} and {{code}}
    :return: template text, with the emphasis clause prepended if missing
    :raises InvalidInputError: if placeholders are missing, repeated or out
                               of order, or the template does not parse
    """
    try:
        variables = jinja2.meta.find_undeclared_variables(
            _environment.parse(template))
    except jinja2.TemplateSyntaxError as e:
        raise InvalidInputError('Prompt template does not parse: {}'.format(e))
    unknown = variables - {'context', 'code'}
    if unknown:
        raise InvalidInputError('Prompt template uses unknown placeholders: '
                                '{}'.format(', '.join(sorted(unknown))))
    contexts = CONTEXT_PLACEHOLDER.findall(template)
    codes = CODE_PLACEHOLDER.findall(template)
    if len(contexts) != 1 or len(codes) != 1:
        raise InvalidInputError('Prompt template needs exactly one {{context}} '
                                'and one {{code}} placeholder')
    if (CONTEXT_PLACEHOLDER.search(template).start() >
            CODE_PLACEHOLDER.search(template).start()):
        raise InvalidInputError('{{context}} must come before {{code}} in the '
                                'prompt template')
    lowered = ' '.join(template.lower().split())
    if ('syntactic correctness' not in lowered or
            'semantic preservation' not in lowered):
        template = EMPHASIS_CLAUSE + '\n\n' + template
    return template


def _nonce(serial_code, context_blocks):
    digest = hashlib.sha256()
    digest.update(serial_code.encode('utf-8'))
    for chunk_id, body in context_blocks:
        digest.update(b'\0')
        digest.update(chunk_id.encode('utf-8'))
        digest.update(b'\0')
        digest.update(body.encode('utf-8'))
    return 'OMP-RAG-{}'.format(digest.hexdigest()[:12])


def _sentinel(delimiter, text):
    return '====={} {}====='.format(delimiter, text)


def render_context(context_blocks, delimiter):
    if not context_blocks:
        return _sentinel(delimiter, 'NO RETRIEVED CONTEXT')
    sections = list()
    for rank, (chunk_id, body) in enumerate(context_blocks, start=1):
        sections.append('\n'.join([
            _sentinel(delimiter, 'CONTEXT {} {} BEGIN'.format(rank, chunk_id)),
            body,
            _sentinel(delimiter, 'CONTEXT {} END'.format(rank))]))
    return '\n\n'.join(sections)


def render_code(serial_code, delimiter):
    return '\n'.join([_sentinel(delimiter, 'SERIAL CODE BEGIN'), serial_code,
                      _sentinel(delimiter, 'SERIAL CODE END')])


def build_prompt(serial_code, hits, manifest, template=None):
    """
    Assemble the prompt.

    :param serial_code: serial C++ source, reproduced byte-identically
    :param hits: retrieval hits (any order, placed by rank); empty for the
                 baseline profile
    :param manifest: CorpusManifest the hits refer to (may be None when
                     hits is empty)
    :param template: template text, None for the packaged template
    :return: PromptBundle
    :raises InvalidInputError: for empty code or a bad template
    :raises IntegrityError: if a hit references an unknown chunk id
    """
    if not serial_code or not serial_code.strip():
        raise InvalidInputError('Serial code is empty')
    template = check_template(load_template() if template is None
                              else template)
    chunks = manifest.by_id() if manifest is not None else dict()
    context_blocks = list()
    for hit in sorted(hits, key=lambda h: h.rank):
        if hit.chunk_id not in chunks:
            raise IntegrityError('Retrieved chunk "{}" is not in the '
                                 'corpus'.format(hit.chunk_id))
        context_blocks.append((hit.chunk_id, chunks[hit.chunk_id].body))
    delimiter = _nonce(serial_code, context_blocks)
    rendered = _environment.from_string(template).render(
        context=render_context(context_blocks, delimiter),
        code=render_code(serial_code, delimiter))
    return PromptBundle(instruction=template,
                        context_blocks=tuple(context_blocks),
                        serial_code=serial_code, rendered=rendered,
                        token_estimate=len(rendered.split()),
                        delimiter=delimiter)


def extract_sections(rendered, delimiter):
    """
    Re-extract the context blocks and serial code from a rendered prompt.

    :param rendered: rendered prompt
    :param delimiter: PromptBundle.delimiter
    :return: (list of (chunk_id, body), serial code)
    :raises InvalidInputError: if the code section is missing
    """
    d = re.escape(delimiter)
    blocks = list()
    pattern = re.compile(
        r'^=====' + d + r' CONTEXT (\d+) (.+?) BEGIN=====\n(.*?)\n=====' +
        d + r' CONTEXT \1 END=====$', re.DOTALL | re.MULTILINE)
    for m in pattern.finditer(rendered):
        blocks.append((m.group(2), m.group(3)))
    begin = _sentinel(delimiter, 'SERIAL CODE BEGIN') + '\n'
    end = '\n' + _sentinel(delimiter, 'SERIAL CODE END')
    start = rendered.find(begin)
    stop = rendered.find(end, start + len(begin)) if start >= 0 else -1
    if start < 0 or stop < 0:
        raise InvalidInputError('Rendered prompt has no serial code section')
    return blocks, rendered[start + len(begin):stop]
