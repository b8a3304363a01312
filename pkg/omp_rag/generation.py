"""
Chat-completion client and reply parsing

Providers:

- HttpChatProvider: live chat-completions endpoint. The whole rendered
  prompt is sent as a single user message.
- ReplayProvider: returns recorded replies keyed by (case_id, SHA-256 of
  the rendered prompt) and never touches the network.
- RecordingProvider: wraps a live provider and writes replay records.
"""

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import requests

from omp_rag import config as omp_config
from omp_rag.errors import InvalidInputError, ProviderError, ReplayMissError
from omp_rag.http import create_session

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
CODE_LABELS = ('cpp', 'c++', 'c')
OPEN_FENCE = re.compile(r'^[ \t]*(?P<fence>`{3,}|~{3,})[ \t]*(?P<info>[^\s`]*)')


def prompt_sha256(prompt):
    return hashlib.sha256(prompt.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class GenerationRequest:
    case_id: str
    prompt: str
    model_name: str = 'gpt-3.5-turbo'
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInputError('Temperature must be non-negative')


@dataclass
class GenerationOutcome:
    case_id: str
    raw_reply: str
    extracted_code: Optional[str]
    provider_latency: float
    provider: str
    error: Optional[str] = field(default=None)

    def to_dict(self):
        return {'case_id': self.case_id, 'raw_reply': self.raw_reply,
                'extracted_code': self.extracted_code,
                'provider_latency': self.provider_latency,
                'provider': self.provider, 'error': self.error}

    @classmethod
    def from_dict(cls, data):
        return cls(case_id=data['case_id'], raw_reply=data['raw_reply'],
                   extracted_code=data.get('extracted_code'),
                   provider_latency=float(data.get('provider_latency', 0.0)),
                   provider=data['provider'], error=data.get('error'))


def fenced_blocks(text):
    """
    Find fenced code blocks.

    A block opens with ``` or ~~~ (optionally followed by a label) and
    closes with a line of at least as many of the same fence characters.
    An unterminated block runs to the end of the text.

    :param text: markdown text
    :return: list of (label, content)
    """
    blocks = list()
    lines = text.split('\n')
    i = 0
    while i < len(lines):
        m = OPEN_FENCE.match(lines[i])
        if not m:
            i += 1
            continue
        fence = m.group('fence')
        label = m.group('info').lower()
        closing = re.compile(r'^[ \t]*' + re.escape(fence[0]) + '{' +
                             str(len(fence)) + r',}[ \t]*$')
        content = list()
        i += 1
        while i < len(lines) and not closing.match(lines[i]):
            content.append(lines[i])
            i += 1
        if i >= len(lines) and content and not content[-1].strip():
            # unterminated: the final newline is not part of the block
            content.pop()
        blocks.append((label, '\n'.join(content)))
        i += 1
    return blocks


def extract_code(raw_reply):
    """
    Extract the program from a model reply.

    :param raw_reply: reply text
    :return: content of the first block labeled cpp/c++/c, else of the
             longest fenced block, else None
    """
    blocks = [(label, content) for label, content in fenced_blocks(raw_reply)
              if content.strip()]
    for label, content in blocks:
        if label in CODE_LABELS:
            return content
    if blocks:
        return max(blocks, key=lambda b: len(b[1]))[1]
    return None


class ChatProvider(object):
    """
    Provider interface: complete(request) -> reply text.
    """
    name = 'abstract'

    def complete(self, request):
        raise NotImplementedError


class HttpChatProvider(ChatProvider):
    """
    Live chat-completions provider.
    """
    name = 'http'

    def __init__(self, endpoint, api_key=None, session=None, timeout=120,
                 retries=3, max_in_flight=4):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or create_session(retries=retries)
        self.semaphore = threading.BoundedSemaphore(max_in_flight)

    def complete(self, request):
        """
        Send one chat completion.

        :param request: GenerationRequest
        :return: reply text
        :raises ProviderError: on transport failure, non-200 status or a
                               malformed payload
        """
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = 'Bearer {}'.format(self.api_key)
        payload = {'model': request.model_name,
                   'temperature': request.temperature,
                   'messages': [{'role': 'user', 'content': request.prompt}]}
        with self.semaphore:
            try:
                response = self.session.post(self.endpoint, json=payload,
                                             headers=headers,
                                             timeout=self.timeout)
            except requests.RequestException as e:
                raise ProviderError('Chat request for case "{}" failed: '
                                    '{}'.format(request.case_id, e))
        if response.status_code != 200:
            raise ProviderError('Chat endpoint returned HTTP {} for case '
                                '"{}"'.format(response.status_code,
                                              request.case_id),
                                status=response.status_code)
        try:
            return response.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError('Malformed chat response for case "{}": '
                                '{}'.format(request.case_id, e),
                                status=response.status_code)


def record_path(replay_dir, case_id, sha256):
    return os.path.join(replay_dir, '{}-{}.json'.format(case_id, sha256[:16]))


class ReplayProvider(ChatProvider):
    """
    Replays recorded replies from a directory of JSON records
    {case_id, prompt_sha256, raw_reply}.
    """
    name = 'replay'

    def __init__(self, replay_dir):
        self.replay_dir = replay_dir
        self.records = dict()
        if not os.path.isdir(replay_dir):
            raise InvalidInputError('Replay directory not found: {}'.format(
                replay_dir))
        for filename in sorted(os.listdir(replay_dir)):
            if not filename.endswith('.json'):
                continue
            with open(os.path.join(replay_dir, filename),
                      encoding='utf-8') as f:
                record = json.load(f)
            self.records[(record['case_id'], record['prompt_sha256'])] = \
                record['raw_reply']
        logger.debug('Loaded {} replay records from {}'.format(
            len(self.records), replay_dir))

    def complete(self, request):
        key = (request.case_id, prompt_sha256(request.prompt))
        if key not in self.records:
            raise ReplayMissError('No replay record for case "{}" with prompt '
                                  'sha256 {}'.format(request.case_id, key[1]),
                                  case_id=request.case_id)
        return self.records[key]


class RecordingProvider(ChatProvider):
    """
    Wraps a live provider and stores every reply as a replay record.
    """

    def __init__(self, inner, replay_dir):
        self.inner = inner
        self.replay_dir = replay_dir
        self.name = inner.name
        os.makedirs(replay_dir, exist_ok=True)

    def complete(self, request):
        reply = self.inner.complete(request)
        sha256 = prompt_sha256(request.prompt)
        with open(record_path(self.replay_dir, request.case_id, sha256), 'w',
                  encoding='utf-8', newline='\n') as f:
            json.dump({'case_id': request.case_id, 'prompt_sha256': sha256,
                       'raw_reply': reply}, f, indent=2, ensure_ascii=False)
            f.write('\n')
        return reply


def provider_from_config(config, session=None):
    """
    Create the chat provider named in [Generation].

    :param config: parsed configuration
    :param session: optional requests session for live providers
    :return: ChatProvider
    :raises InvalidInputError: for an unknown provider or missing replay dir
    """
    name = config.get('Generation', 'provider')
    replay_dir = config.get('Generation', 'replay_dir')
    if name == 'replay':
        if not replay_dir:
            raise InvalidInputError('Replay provider needs a replay directory')
        return ReplayProvider(replay_dir)
    if name in ('http', 'record'):
        provider = HttpChatProvider(
            endpoint=config.get('Generation', 'endpoint'),
            api_key=omp_config.api_key(config, 'Generation'),
            session=session,
            timeout=config.getfloat('Generation', 'timeout'),
            retries=config.getint('Generation', 'retries'),
            max_in_flight=config.getint('Generation', 'max_in_flight'))
        if name == 'record':
            if not replay_dir:
                raise InvalidInputError('Recording needs a replay directory')
            return RecordingProvider(provider, replay_dir)
        return provider
    raise InvalidInputError('Unknown generation provider "{}"'.format(name))


def generate(request, provider):
    """
    Run one generation and extract the program from the reply.

    :param request: GenerationRequest
    :param provider: ChatProvider
    :return: GenerationOutcome
    :raises InvalidInputError: for an empty prompt
    :raises ProviderError: if the provider fails after its retries
    :raises ReplayMissError: if a replay provider has no record
    """
    if not request.prompt.strip():
        raise InvalidInputError('Prompt for case "{}" is empty'.format(
            request.case_id))
    started = time.monotonic()
    reply = provider.complete(request)
    latency = 0.0 if provider.name == 'replay' else time.monotonic() - started
    code = extract_code(reply)
    if code is None:
        logger.warning('Reply for case "{}" has no fenced code block'.format(
            request.case_id))
    return GenerationOutcome(case_id=request.case_id, raw_reply=reply,
                             extracted_code=code, provider_latency=latency,
                             provider=provider.name)
