import json
import os

import pytest

from omp_rag import generation
from omp_rag.errors import InvalidInputError, ProviderError, ReplayMissError
from omp_rag.generation import (ChatProvider, GenerationOutcome,
                                GenerationRequest, HttpChatProvider,
                                RecordingProvider, ReplayProvider,
                                extract_code, generate, prompt_sha256,
                                record_path)

REPLY = '''Here is the parallel version:

```cpp
#include <omp.h>
int main() { return 0; }
```

It uses a reduction.'''


class ScriptedProvider(ChatProvider):
    name = 'scripted'

    def __init__(self, reply):
        self.reply = reply
        self.requests = list()

    def complete(self, request):
        self.requests.append(request)
        return self.reply


def write_record(replay_dir, case_id, prompt, reply):
    sha = prompt_sha256(prompt)
    with open(record_path(str(replay_dir), case_id, sha), 'w',
              encoding='utf-8') as f:
        json.dump({'case_id': case_id, 'prompt_sha256': sha,
                   'raw_reply': reply}, f)


def test_request_defaults():
    request = GenerationRequest(case_id='case1', prompt='p')
    assert request.temperature == 0.2
    assert request.model_name == 'gpt-3.5-turbo'
    with pytest.raises(InvalidInputError):
        GenerationRequest(case_id='case1', prompt='p', temperature=-0.1)


def test_extract_single_block():
    assert extract_code(REPLY) == '#include <omp.h>\nint main() { return 0; }'


def test_extract_prefers_labeled_block():
    long_block = '\n'.join('line {}'.format(i) for i in range(10))
    short_block = '\n'.join('int x{} = 0;'.format(i) for i in range(5))
    reply = '```\n{}\n```\n\n```cpp\n{}\n```\n'.format(long_block,
                                                        short_block)
    assert extract_code(reply) == short_block


def test_extract_longest_unlabeled_block():
    reply = '```\nshort\n```\n```text\nthe longer block\n```\n'
    assert extract_code(reply) == 'the longer block'


def test_extract_without_fences():
    assert extract_code('int main() { return 0; }') is None
    assert extract_code('') is None


def test_extract_is_idempotent():
    code = extract_code(REPLY)
    assert extract_code('```cpp\n' + code + '\n```') == code


def test_extract_tilde_fence_and_unterminated_block():
    assert extract_code('~~~c++\nint x;\n~~~') == 'int x;'
    assert extract_code('```cpp\nint y;\n') == 'int y;'
    assert extract_code('```cpp\nint y;') == 'int y;'
    assert extract_code('```cpp\nint y;\n\nint z;\n') == 'int y;\n\nint z;'


def test_replay_returns_recorded_reply(tmp_path):
    write_record(tmp_path, 'case1', 'the prompt', REPLY)
    outcome = generate(GenerationRequest(case_id='case1',
                                         prompt='the prompt'),
                       ReplayProvider(str(tmp_path)))
    assert outcome.raw_reply == REPLY
    assert outcome.extracted_code == extract_code(REPLY)
    assert outcome.provider == 'replay'
    assert outcome.provider_latency == 0.0


def test_replay_miss_on_prompt_drift(tmp_path):
    write_record(tmp_path, 'case1', 'the prompt', REPLY)
    with pytest.raises(ReplayMissError) as e:
        generate(GenerationRequest(case_id='case1', prompt='the prompt!'),
                 ReplayProvider(str(tmp_path)))
    assert e.value.case_id == 'case1'
    assert 'case1' in str(e.value)


def test_replay_directory_must_exist(tmp_path):
    with pytest.raises(InvalidInputError):
        ReplayProvider(str(tmp_path / 'missing'))


def test_recording_then_replay(tmp_path):
    request = GenerationRequest(case_id='case7', prompt='prompt text')
    recorder = RecordingProvider(ScriptedProvider(REPLY), str(tmp_path))
    recorded = generate(request, recorder)
    replayed = generate(request, ReplayProvider(str(tmp_path)))
    assert replayed.raw_reply == recorded.raw_reply == REPLY
    assert len(os.listdir(str(tmp_path))) == 1


def test_empty_prompt():
    with pytest.raises(InvalidInputError):
        generate(GenerationRequest(case_id='c', prompt=' '),
                 ScriptedProvider(REPLY))


def test_reply_without_block_is_kept():
    outcome = generate(GenerationRequest(case_id='c', prompt='p'),
                       ScriptedProvider('no code here'))
    assert outcome.raw_reply == 'no code here'
    assert outcome.extracted_code is None


def test_http_wire_format(stub_session, fake_response):
    session = stub_session([fake_response(200, {
        'choices': [{'message': {'role': 'assistant', 'content': REPLY}}]})])
    provider = HttpChatProvider('https://chat.example/v1', api_key='key',
                                session=session)
    outcome = generate(GenerationRequest(case_id='case1', prompt='prompt'),
                       provider)
    assert outcome.raw_reply == REPLY
    method, url, kwargs = session.calls[0]
    assert method == 'POST'
    assert kwargs['json'] == {
        'model': 'gpt-3.5-turbo', 'temperature': 0.2,
        'messages': [{'role': 'user', 'content': 'prompt'}]}
    assert kwargs['headers']['Authorization'] == 'Bearer key'
    assert kwargs['timeout'] == 120


def test_http_status_error(stub_session, fake_response):
    provider = HttpChatProvider(
        'https://chat.example/v1',
        session=stub_session([fake_response(401, {'error': 'bad key'})]))
    with pytest.raises(ProviderError) as e:
        generate(GenerationRequest(case_id='case1', prompt='p'), provider)
    assert e.value.status == 401


def test_http_malformed_payload(stub_session, fake_response):
    provider = HttpChatProvider(
        'https://chat.example/v1',
        session=stub_session([fake_response(200, {'choices': []})]))
    with pytest.raises(ProviderError):
        generate(GenerationRequest(case_id='case1', prompt='p'), provider)


def test_outcome_round_trip():
    outcome = GenerationOutcome(case_id='c', raw_reply='r',
                                extracted_code=None, provider_latency=0.0,
                                provider='replay', error='boom')
    assert GenerationOutcome.from_dict(outcome.to_dict()) == outcome


def test_provider_from_config(config, tmp_path):
    config.set('Generation', 'replay_dir', str(tmp_path))
    assert isinstance(generation.provider_from_config(config),
                      ReplayProvider)
    config.set('Generation', 'provider', 'record')
    assert isinstance(generation.provider_from_config(config),
                      RecordingProvider)
    config.set('Generation', 'provider', 'unknown')
    with pytest.raises(InvalidInputError):
        generation.provider_from_config(config)


def test_replay_without_directory(config):
    with pytest.raises(InvalidInputError):
        generation.provider_from_config(config)
