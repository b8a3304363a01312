"""
Exact flat vector index over corpus chunks

Scores are exact cosine similarities; results are ordered by descending
score, ties broken by ascending chunk id. The index file is a JSON header
line (provider_tag, dimension, count) followed by one JSON entry per line.
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from omp_rag.embedder import EmbeddingVector
from omp_rag.errors import (IntegrityError, InvalidInputError, OmpRagError,
                            ProviderError)

logger = logging.getLogger(__name__)

DEFAULT_K = 4


class IndexBuildError(OmpRagError):
    """
    Index could not be built from the manifest.
    """

    def __init__(self, message, chunk_id=None):
        super().__init__(message)
        self.chunk_id = chunk_id


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    vector: EmbeddingVector


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    rank: int

    def to_dict(self):
        return {'chunk_id': self.chunk_id, 'score': self.score,
                'rank': self.rank}

    @classmethod
    def from_dict(cls, data):
        return cls(chunk_id=data['chunk_id'], score=float(data['score']),
                   rank=int(data['rank']))


class VectorIndex(object):
    """
    Immutable flat index. Safe for concurrent queries.
    """

    def __init__(self, provider_tag, dimension, entries):
        self.provider_tag = provider_tag
        self.dimension = dimension
        self.entries = tuple(entries)
        for entry in self.entries:
            if entry.vector.provider_tag != provider_tag:
                raise InvalidInputError(
                    'Entry "{}" was embedded by "{}", index is "{}"'.format(
                        entry.chunk_id, entry.vector.provider_tag,
                        provider_tag))
            if entry.vector.dimension != dimension:
                raise InvalidInputError(
                    'Entry "{}" has dimension {}, index is {}'.format(
                        entry.chunk_id, entry.vector.dimension, dimension))
        if self.entries:
            self.matrix = np.vstack([e.vector.array for e in self.entries])
        else:
            self.matrix = np.zeros((0, dimension), dtype=np.float64)

    def __len__(self):
        return len(self.entries)

    def scores(self, query_vector):
        """
        Cosine similarity of the query against every entry, in entry order.

        Elementwise products summed with math.fsum, the same arithmetic as
        embedder.cosine_similarity.
        """
        products = (self.matrix * query_vector.array).tolist()
        return [max(-1.0, min(1.0, math.fsum(row))) for row in products]

    def verify(self, manifest):
        """
        Check that every entry references a chunk of the manifest.

        :param manifest: CorpusManifest
        :return: None
        :raises IntegrityError: if an entry references an unknown chunk
        """
        known = set(c.chunk_id for c in manifest.chunks)
        for entry in self.entries:
            if entry.chunk_id not in known:
                raise IntegrityError(
                    'Index entry "{}" is not in corpus {}'.format(
                        entry.chunk_id, manifest.corpus_version))

    def save(self, path):
        """
        Persist the index.

        :param path: index file path
        :return: None
        """
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(json.dumps({'provider_tag': self.provider_tag,
                                'dimension': self.dimension,
                                'count': len(self.entries)}))
            f.write('\n')
            for entry in self.entries:
                f.write(json.dumps({'chunk_id': entry.chunk_id,
                                    'vector': list(entry.vector.values)}))
                f.write('\n')

    @classmethod
    def load(cls, path):
        """
        Load an index written by save().

        :param path: index file path
        :return: VectorIndex
        :raises InvalidInputError: if the file is malformed
        """
        with open(path, encoding='utf-8') as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise InvalidInputError('Index file {} is empty'.format(path))
        try:
            header = json.loads(lines[0])
            provider_tag = header['provider_tag']
            dimension = int(header['dimension'])
            count = int(header['count'])
            entries = list()
            for line in lines[1:]:
                data = json.loads(line)
                entries.append(IndexEntry(
                    chunk_id=data['chunk_id'],
                    vector=EmbeddingVector(values=tuple(data['vector']),
                                           dimension=dimension,
                                           provider_tag=provider_tag)))
        except (ValueError, KeyError, TypeError) as e:
            raise InvalidInputError('Index file {} is malformed: {}'.format(
                path, e))
        if count != len(entries):
            raise InvalidInputError(
                'Index file {} declares {} entries, has {}'.format(
                    path, count, len(entries)))
        return cls(provider_tag, dimension, entries)


def build_index(manifest, provider):
    """
    Embed every chunk of the manifest.

    :param manifest: CorpusManifest
    :param provider: EmbeddingProvider
    :return: VectorIndex
    :raises InvalidInputError: for an empty manifest
    :raises IndexBuildError: on duplicate chunk ids or a failing chunk
    """
    if not len(manifest):
        raise InvalidInputError('Cannot build an index from an empty corpus')
    duplicates = manifest.duplicate_ids()
    if duplicates:
        raise IndexBuildError('Duplicate chunk ids: {}'.format(
            ', '.join(duplicates)), chunk_id=duplicates[0])
    entries = list()
    for chunk in manifest.chunks:
        try:
            vector = provider.embed(chunk.body)
        except (ProviderError, InvalidInputError) as e:
            raise IndexBuildError('Embedding chunk "{}" failed: {}'.format(
                chunk.chunk_id, e), chunk_id=chunk.chunk_id)
        entries.append(IndexEntry(chunk_id=chunk.chunk_id, vector=vector))
    dimension = entries[0].vector.dimension
    logger.info('Built index of {} entries ({}, dimension {})'.format(
        len(entries), provider.tag, dimension))
    return VectorIndex(entries[0].vector.provider_tag, dimension, entries)


def query_topk(index, query_vector, k=DEFAULT_K):
    """
    Exact top-k retrieval.

    :param index: VectorIndex
    :param query_vector: EmbeddingVector from the index's provider
    :param k: number of hits, at least 1
    :return: list of min(k, len(index)) RetrievalHit, ranks 1..k
    :raises InvalidInputError: for k < 1 or a provider/dimension mismatch
    """
    if k < 1:
        raise InvalidInputError('k must be at least 1, got {}'.format(k))
    if query_vector.provider_tag != index.provider_tag:
        raise InvalidInputError(
            'Query vector from "{}" cannot search index "{}"'.format(
                query_vector.provider_tag, index.provider_tag))
    if query_vector.dimension != index.dimension:
        raise InvalidInputError('Query dimension {} does not match index '
                                '{}'.format(query_vector.dimension,
                                            index.dimension))
    scored = zip(index.scores(query_vector),
                 (e.chunk_id for e in index.entries))
    ordered = sorted(scored, key=lambda pair: (-pair[0], pair[1]))
    return [RetrievalHit(chunk_id=chunk_id, score=score, rank=rank)
            for rank, (score, chunk_id) in enumerate(ordered[:k], start=1)]
