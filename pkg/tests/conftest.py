import functools
import os

import pytest
import requests

from omp_rag import config as omp_config
from omp_rag.validation import openmp_available

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')


class NetworkUsed(AssertionError):
    pass


@functools.lru_cache(maxsize=None)
def compiler_available():
    return openmp_available()


def pytest_collection_modifyitems(config, items):
    if compiler_available():
        return
    skip = pytest.mark.skip(reason='no OpenMP-capable g++ on this host')
    for item in items:
        if 'requires_compiler' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """
    Any real HTTP request fails the test.
    """
    def send(self, request, **kwargs):
        raise NetworkUsed('Network access to {}'.format(request.url))
    monkeypatch.setattr(requests.adapters.HTTPAdapter, 'send', send)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def config():
    return omp_config.parse(environ={})


class FakeResponse(object):

    def __init__(self, status_code=200, payload=None):
        self.status_code = status_code
        self.payload = payload

    def json(self):
        if self.payload is None:
            raise ValueError('no JSON body')
        return self.payload


class StubSession(object):
    """
    Records requests and answers them from a queue of FakeResponses.
    """

    def __init__(self, responses=()):
        self.responses = list(responses)
        self.calls = list()

    def _answer(self, method, url, kwargs):
        self.calls.append((method, url, kwargs))
        response = self.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response

    def get(self, url, **kwargs):
        return self._answer('GET', url, kwargs)

    def post(self, url, **kwargs):
        return self._answer('POST', url, kwargs)


class FailingSession(object):
    """
    Session that fails on any use.
    """

    def get(self, url, **kwargs):
        raise NetworkUsed('GET {}'.format(url))

    def post(self, url, **kwargs):
        raise NetworkUsed('POST {}'.format(url))


@pytest.fixture
def stub_session():
    return StubSession


@pytest.fixture
def fake_response():
    return FakeResponse


@pytest.fixture
def failing_session():
    return FailingSession()
