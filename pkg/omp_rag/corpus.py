"""
OpenMP tutorial corpus: ingestion, chunking and manifest persistence

Documents are split on markdown headings (levels 1-3). Sections larger than
the token budget are split further on blank-line paragraph boundaries.
Headings and paragraph breaks inside fenced code blocks are not split
points.
"""

import datetime
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import List

from omp_rag.errors import IntegrityError, InvalidInputError, OmpRagError

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 400
MIN_MAX_TOKENS = 32
DOCUMENT_SUFFIXES = ('.md', '.markdown', '.txt')
CHUNK_FIELDS = ('chunk_id', 'source_doc', 'heading_path', 'body',
                'token_estimate')

HEADING = re.compile(r'^(#{1,3})[ \t]+(?P<title>.*?)[ \t#]*$')
FENCE = re.compile(r'^[ \t]*(```|~~~)')


class CorpusEmptyError(OmpRagError):
    """
    Corpus directory has no usable documents.
    """
    pass


def token_count(text):
    """
    Whitespace-token count.

    :param text: any text
    :return: number of whitespace separated tokens
    """
    return len(text.split())


@dataclass(frozen=True)
class CorpusChunk:
    chunk_id: str
    source_doc: str
    heading_path: tuple
    body: str
    token_estimate: int

    def __post_init__(self):
        if not self.body.strip():
            raise InvalidInputError('Chunk "{}" has an empty body'.format(
                self.chunk_id))
        object.__setattr__(self, 'heading_path', tuple(self.heading_path))
        if self.token_estimate != token_count(self.body):
            raise InvalidInputError(
                'Chunk "{}" token estimate {} does not match body ({})'.format(
                    self.chunk_id, self.token_estimate,
                    token_count(self.body)))

    def to_dict(self):
        return {'chunk_id': self.chunk_id, 'source_doc': self.source_doc,
                'heading_path': list(self.heading_path), 'body': self.body,
                'token_estimate': self.token_estimate}

    @classmethod
    def from_dict(cls, data):
        return cls(chunk_id=data['chunk_id'], source_doc=data['source_doc'],
                   heading_path=tuple(data['heading_path']),
                   body=data['body'], token_estimate=data['token_estimate'])


@dataclass
class CorpusManifest:
    """
    Ordered chunk list with version and creation time.

    Construction does not reject duplicate chunk ids, so that consumers
    such as the index builder can report them; see duplicate_ids().
    """
    chunks: List[CorpusChunk]
    corpus_version: str
    created_at: str = field(default_factory=lambda: utc_now())

    def __len__(self):
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)

    def duplicate_ids(self):
        seen = set()
        duplicates = list()
        for chunk in self.chunks:
            if chunk.chunk_id in seen and chunk.chunk_id not in duplicates:
                duplicates.append(chunk.chunk_id)
            seen.add(chunk.chunk_id)
        return duplicates

    def chunk(self, chunk_id):
        """
        Look up a chunk.

        :param chunk_id: chunk identifier
        :return: CorpusChunk
        :raises IntegrityError: if the id is not in the manifest
        """
        for chunk in self.chunks:
            if chunk.chunk_id == chunk_id:
                return chunk
        raise IntegrityError('Chunk "{}" is not in corpus {}'.format(
            chunk_id, self.corpus_version))

    def by_id(self):
        return dict((c.chunk_id, c) for c in self.chunks)


def utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def corpus_version(chunks):
    """
    Content hash of a chunk list; equal chunk lists give equal versions.
    """
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(json.dumps(chunk.to_dict(), sort_keys=True,
                                 ensure_ascii=False).encode('utf-8'))
        digest.update(b'\n')
    return digest.hexdigest()[:16]


def _sections(text):
    """
    Split document text into (heading_path, lines) sections.

    Text before the first heading forms a section with an empty path.
    """
    sections = list()
    path = list()
    lines = list()
    in_fence = False
    for line in text.splitlines():
        if FENCE.match(line):
            in_fence = not in_fence
        m = None if in_fence else HEADING.match(line)
        if m:
            sections.append((tuple(path), lines))
            level = len(m.group(1))
            path = path[:level - 1]
            # Skipped levels (## directly under nothing) keep the path short.
            path.append(m.group('title'))
            lines = list()
        else:
            lines.append(line)
    sections.append((tuple(path), lines))
    return sections


def _paragraphs(lines):
    """
    Group lines into paragraphs separated by blank lines outside fences.
    """
    paragraphs = list()
    current = list()
    in_fence = False
    for line in lines:
        if FENCE.match(line):
            in_fence = not in_fence
        if not line.strip() and not in_fence:
            if current:
                paragraphs.append(current)
                current = list()
            continue
        current.append(line)
    if current:
        paragraphs.append(current)
    return ['\n'.join(p) for p in paragraphs]


def _pack(paragraphs, max_tokens):
    """
    Greedily pack paragraphs into bodies of at most max_tokens tokens. A
    paragraph larger than the budget becomes a body of its own.
    """
    bodies = list()
    current = list()
    current_tokens = 0
    for paragraph in paragraphs:
        tokens = token_count(paragraph)
        if current and current_tokens + tokens > max_tokens:
            bodies.append('\n\n'.join(current))
            current = list()
            current_tokens = 0
        current.append(paragraph)
        current_tokens += tokens
    if current:
        bodies.append('\n\n'.join(current))
    return bodies


def chunk_document(text, max_tokens=DEFAULT_MAX_TOKENS, source_doc='document'):
    """
    Split a document into chunks.

    :param text: document body
    :param max_tokens: token budget per chunk, at least 32
    :param source_doc: document name used for chunk ids
    :return: list of CorpusChunk in document order
    :raises InvalidInputError: if max_tokens is below 32
    """
    if max_tokens < MIN_MAX_TOKENS:
        raise InvalidInputError('max_tokens must be at least {}, got {}'.format(
            MIN_MAX_TOKENS, max_tokens))
    chunks = list()
    for heading_path, lines in _sections(text):
        for body in _pack(_paragraphs(lines), max_tokens):
            if not body.strip():
                continue
            chunk_id = '{}#{:04d}'.format(source_doc, len(chunks) + 1)
            chunks.append(CorpusChunk(chunk_id=chunk_id, source_doc=source_doc,
                                      heading_path=heading_path, body=body,
                                      token_estimate=token_count(body)))
    return chunks


def find_documents(root_path):
    """
    List tutorial documents under a directory in a stable order.

    :param root_path: corpus directory
    :return: list of (relative name, absolute path)
    """
    found = list()
    for directory, dirnames, filenames in os.walk(root_path):
        dirnames.sort()
        for filename in sorted(filenames):
            if filename.lower().endswith(DOCUMENT_SUFFIXES):
                path = os.path.join(directory, filename)
                name = os.path.relpath(path, root_path).replace(os.sep, '/')
                found.append((name, path))
    return sorted(found)


def ingest_corpus(root_path, max_tokens=DEFAULT_MAX_TOKENS):
    """
    Ingest a directory of .md/.txt tutorial documents.

    Unreadable documents are logged and skipped.

    :param root_path: corpus directory
    :param max_tokens: token budget per chunk
    :return: CorpusManifest
    :raises CorpusEmptyError: if no document could be chunked
    """
    if not os.path.isdir(root_path):
        raise CorpusEmptyError('Corpus directory not found: {}'.format(
            root_path))
    documents = find_documents(root_path)
    if not documents:
        raise CorpusEmptyError('Corpus directory {} has no .md/.txt '
                               'documents'.format(root_path))
    chunks = list()
    for name, path in documents:
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except (OSError, UnicodeDecodeError) as e:
            logger.warning('Skipping unreadable document "{}": {}'.format(
                name, e))
            continue
        document_chunks = chunk_document(text, max_tokens, source_doc=name)
        if not document_chunks:
            logger.warning('Skipping document "{}": no body text'.format(name))
            continue
        logger.debug('Document "{}": {} chunks'.format(
            name, len(document_chunks)))
        chunks.extend(document_chunks)
    if not chunks:
        raise CorpusEmptyError('No readable documents in {}'.format(root_path))
    logger.info('Ingested {} chunks from {} documents'.format(
        len(chunks), len(documents)))
    return CorpusManifest(chunks=chunks, corpus_version=corpus_version(chunks))


def meta_path(path):
    return '{}.meta.json'.format(os.path.splitext(path)[0])


def save_manifest(manifest, path):
    """
    Write the manifest as line-delimited JSON, one chunk per line, plus a
    sidecar meta file with corpus_version and created_at.

    :param manifest: CorpusManifest
    :param path: output path, e.g. corpus.jsonl
    :return: None
    """
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for chunk in manifest.chunks:
            f.write(json.dumps(chunk.to_dict(), ensure_ascii=False))
            f.write('\n')
    with open(meta_path(path), 'w', encoding='utf-8', newline='\n') as f:
        json.dump({'corpus_version': manifest.corpus_version,
                   'created_at': manifest.created_at,
                   'chunk_count': len(manifest.chunks)}, f, indent=2)
        f.write('\n')


def load_manifest(path):
    """
    Read a manifest written by save_manifest.

    :param path: manifest path
    :return: CorpusManifest
    :raises InvalidInputError: if a line is not a chunk record
    """
    chunks = list()
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                chunks.append(CorpusChunk.from_dict(data))
            except (ValueError, KeyError, TypeError) as e:
                raise InvalidInputError('{}:{}: not a chunk record: {}'.format(
                    path, number, e))
    meta = dict()
    if os.path.exists(meta_path(path)):
        with open(meta_path(path), encoding='utf-8') as f:
            meta = json.load(f)
    return CorpusManifest(
        chunks=chunks,
        corpus_version=meta.get('corpus_version', corpus_version(chunks)),
        created_at=meta.get('created_at', utc_now()))
