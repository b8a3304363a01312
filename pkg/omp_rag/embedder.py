"""
Text embedding providers

Two providers map text to unit-normalized vectors:

- LocalLexicalProvider: feature-hashed TF-IDF with signed hashing. Fully
  deterministic, no network. Fit it on the corpus so IDF weights reflect
  the tutorial vocabulary.
- RemoteEmbeddingProvider: any HTTP endpoint speaking the common embeddings
  wire format ({model, input: [text]} -> {data: [{embedding: [...]}]}).

Vectors from different providers live in different spaces; comparing them
is an error.
"""

import hashlib
import logging
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np
import requests

from omp_rag import config as omp_config
from omp_rag.errors import InvalidInputError, ProviderError
from omp_rag.http import create_session

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 512
NORM_TOLERANCE = 1e-6
TOKEN = re.compile(r'[A-Za-z_][A-Za-z0-9_]*|[0-9]+')


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple
    dimension: int
    provider_tag: str

    def __post_init__(self):
        object.__setattr__(self, 'values',
                           tuple(float(v) for v in self.values))
        if self.dimension < 1:
            raise InvalidInputError('Embedding dimension must be positive')
        if len(self.values) != self.dimension:
            raise InvalidInputError(
                'Embedding has {} values, dimension is {}'.format(
                    len(self.values), self.dimension))
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidInputError('Embedding has non-finite components')
        norm = math.sqrt(math.fsum(v * v for v in self.values))
        if norm == 0.0:
            raise InvalidInputError('Embedding is the all-zero vector')
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise InvalidInputError(
                'Embedding is not unit-normalized (norm {!r})'.format(norm))

    @property
    def array(self):
        return np.asarray(self.values, dtype=np.float64)


def normalize(values, provider_tag):
    """
    L2-normalize raw values into an EmbeddingVector.

    :param values: sequence of real numbers
    :param provider_tag: tag of the producing provider
    :return: EmbeddingVector
    :raises InvalidInputError: for the zero vector or non-finite values
    """
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1 or array.size == 0:
        raise InvalidInputError('Embedding must be a non-empty 1-d vector')
    if not np.all(np.isfinite(array)):
        raise InvalidInputError('Embedding has non-finite components')
    norm = float(np.linalg.norm(array))
    if norm == 0.0:
        raise InvalidInputError('Cannot normalize the all-zero vector')
    return EmbeddingVector(values=tuple((array / norm).tolist()),
                           dimension=int(array.size),
                           provider_tag=provider_tag)


def cosine_similarity(a, b):
    """
    Cosine similarity of two unit-normalized vectors.

    The dot product is summed with math.fsum, which is correctly rounded
    and therefore exactly symmetric.

    :param a: EmbeddingVector
    :param b: EmbeddingVector
    :return: similarity in [-1, 1]
    :raises InvalidInputError: on dimension or provider mismatch
    """
    if a.dimension != b.dimension:
        raise InvalidInputError('Dimension mismatch: {} vs {}'.format(
            a.dimension, b.dimension))
    if a.provider_tag != b.provider_tag:
        raise InvalidInputError(
            'Cannot compare vectors from providers "{}" and "{}"'.format(
                a.provider_tag, b.provider_tag))
    score = math.fsum((a.array * b.array).tolist())
    return max(-1.0, min(1.0, score))


def tokenize(text):
    return [t.lower() for t in TOKEN.findall(text)]


def _require_text(text):
    if not isinstance(text, str) or not text.strip():
        raise InvalidInputError('Cannot embed empty text')


class EmbeddingProvider(object):
    """
    Provider interface.
    """
    tag = 'abstract'
    dimension = None

    def embed(self, text):
        raise NotImplementedError

    def embed_many(self, texts):
        return [self.embed(t) for t in texts]


class LocalLexicalProvider(EmbeddingProvider):
    """
    Feature-hashed TF-IDF embedder.

    Each term is hashed with BLAKE2b into a bucket and a sign. Term
    frequency is the raw count, IDF is the smoothed
    ln((1 + N) / (1 + df)) + 1 learned by fit(). Before fitting, every term
    has weight 1.
    """

    def __init__(self, dimension=DEFAULT_DIMENSION):
        if dimension < 1:
            raise InvalidInputError('Embedding dimension must be positive')
        self.dimension = dimension
        self.document_count = 0
        self.document_frequency = dict()
        self.tag = 'local-tfidf-{}'.format(dimension)

    def fit(self, texts):
        """
        Learn document frequencies from corpus texts.

        :param texts: iterable of corpus texts
        :return: self
        """
        frequency = Counter()
        count = 0
        for text in texts:
            frequency.update(set(tokenize(text)))
            count += 1
        self.document_count = count
        self.document_frequency = dict(frequency)
        fingerprint = hashlib.sha256()
        fingerprint.update(str(count).encode())
        for term in sorted(frequency):
            fingerprint.update('{}\t{}\n'.format(term, frequency[term]).encode(
                'utf-8'))
        self.tag = 'local-tfidf-{}-{}'.format(self.dimension,
                                              fingerprint.hexdigest()[:12])
        return self

    def idf(self, term):
        if not self.document_count:
            return 1.0
        df = self.document_frequency.get(term, 0)
        return math.log((1.0 + self.document_count) / (1.0 + df)) + 1.0

    def bucket(self, term):
        """
        Hashed (index, sign) of a term.
        """
        digest = hashlib.blake2b(term.encode('utf-8'), digest_size=8).digest()
        value = int.from_bytes(digest, 'big')
        sign = 1.0 if (value >> 63) & 1 == 0 else -1.0
        return value % self.dimension, sign

    def raw_vector(self, text):
        vector = np.zeros(self.dimension, dtype=np.float64)
        # sorted: identical accumulation order for identical texts
        for term, count in sorted(Counter(tokenize(text)).items()):
            index, sign = self.bucket(term)
            vector[index] += sign * count * self.idf(term)
        return vector

    def embed(self, text):
        """
        Embed text.

        :param text: non-empty text
        :return: EmbeddingVector
        :raises InvalidInputError: for empty text or text without terms
        """
        _require_text(text)
        vector = self.raw_vector(text)
        if not np.any(vector):
            raise InvalidInputError('Text has no indexable terms')
        return normalize(vector, self.tag)


class RemoteEmbeddingProvider(EmbeddingProvider):
    """
    HTTP embeddings provider.

    The dimension is taken from the first response and enforced thereafter.
    Concurrent requests are bounded by max_in_flight; the session retries
    transport failures and transient statuses with exponential backoff.
    """

    def __init__(self, endpoint, model, api_key=None, session=None,
                 max_in_flight=4, retries=3, timeout=60):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or create_session(retries=retries)
        self.semaphore = threading.BoundedSemaphore(max_in_flight)
        self.lock = threading.Lock()
        self.dimension = None
        self.tag = 'remote:{}'.format(model)

    def headers(self):
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = 'Bearer {}'.format(self.api_key)
        return headers

    def embed(self, text):
        """
        Embed text through the remote endpoint.

        :param text: non-empty text
        :return: EmbeddingVector
        :raises InvalidInputError: for empty text
        :raises ProviderError: on transport, status or payload failures
        """
        _require_text(text)
        with self.semaphore:
            try:
                response = self.session.post(
                    self.endpoint, json={'model': self.model, 'input': [text]},
                    headers=self.headers(), timeout=self.timeout)
            except requests.RequestException as e:
                raise ProviderError('Embedding request failed: {}'.format(e))
        if response.status_code != 200:
            raise ProviderError('Embedding endpoint returned HTTP {}'.format(
                response.status_code), status=response.status_code)
        try:
            values = response.json()['data'][0]['embedding']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError('Malformed embedding response: {}'.format(e),
                                status=response.status_code)
        with self.lock:
            if self.dimension is None:
                self.dimension = len(values)
                logger.info('Remote embedding dimension is {}'.format(
                    self.dimension))
            elif len(values) != self.dimension:
                raise ProviderError(
                    'Embedding dimension changed from {} to {}'.format(
                        self.dimension, len(values)),
                    status=response.status_code)
        try:
            return normalize(values, self.tag)
        except InvalidInputError as e:
            raise ProviderError('Unusable embedding: {}'.format(e),
                                status=response.status_code)


def provider_from_config(config, corpus_texts=None, session=None):
    """
    Create the embedding provider named in [Embedding].

    :param config: parsed configuration
    :param corpus_texts: corpus texts used to fit the local provider
    :param session: optional requests session for the remote provider
    :return: EmbeddingProvider
    :raises InvalidInputError: for an unknown provider name
    """
    name = config.get('Embedding', 'provider')
    if name == 'local':
        provider = LocalLexicalProvider(
            dimension=config.getint('Embedding', 'dimension'))
        if corpus_texts is not None:
            provider.fit(corpus_texts)
        return provider
    if name == 'remote':
        return RemoteEmbeddingProvider(
            endpoint=config.get('Embedding', 'endpoint'),
            model=config.get('Embedding', 'model'),
            api_key=omp_config.api_key(config, 'Embedding'),
            session=session,
            max_in_flight=config.getint('Embedding', 'max_in_flight'),
            retries=config.getint('Embedding', 'retries'),
            timeout=config.getfloat('Embedding', 'timeout'))
    raise InvalidInputError('Unknown embedding provider "{}"'.format(name))


def embed(text, provider):
    """
    Embed text with a provider.

    :param text: non-empty text
    :param provider: EmbeddingProvider
    :return: EmbeddingVector
    """
    return provider.embed(text)
