"""
Experiment pipeline

Stages and the files they leave under the output directory:

  ingest     corpus.jsonl, corpus.meta.json
  index      index.jsonl
  transform  transform/<case_id>/prompt.txt, hits.json, outcome.json,
             parallel.cpp (when a program was extracted)
  validate   work/<case_id>/ (compiler artifacts), reports.jsonl
  report     summary.txt, summary.json
  bench      bench/records.csv, bench/speedups.csv,
             bench/speedup-series.tsv, bench/runtime-table.txt

Each stage reads only the files of the previous stages, so running the
stages one by one gives the same files as run_pipeline().
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from omp_rag import bench
from omp_rag import config as omp_config
from omp_rag import embedder
from omp_rag.corpus import load_manifest
from omp_rag.errors import (IntegrityError, InvalidInputError, ProviderError,
                            ReplayMissError)
from omp_rag.generation import (DEFAULT_TEMPERATURE, GenerationOutcome,
                                GenerationRequest, generate)
from omp_rag.index import DEFAULT_K, VectorIndex, query_topk
from omp_rag.prompt import build_prompt, load_template
from omp_rag.report import report, summarize
from omp_rag.validation import (ValidationSettings, compile_gate,
                                save_reports, validate_case)

logger = logging.getLogger(__name__)

PROFILES = ('p4omp', 'baseline')
CORPUS_FILE = 'corpus.jsonl'
INDEX_FILE = 'index.jsonl'
TRANSFORM_DIR = 'transform'
WORK_DIR = 'work'
BENCH_DIR = 'bench'
REPORTS_FILE = 'reports.jsonl'
SUMMARY_TEXT = 'summary.txt'
SUMMARY_JSON = 'summary.json'


class Retriever(object):
    """
    Corpus manifest, its index and the query embedder, checked to belong
    together.
    """

    def __init__(self, manifest, index, provider, k=DEFAULT_K):
        index.verify(manifest)
        if provider.tag != index.provider_tag:
            raise IntegrityError('Index was built by "{}", queries would be '
                                 'embedded by "{}"'.format(index.provider_tag,
                                                           provider.tag))
        self.manifest = manifest
        self.index = index
        self.provider = provider
        self.k = k

    @classmethod
    def from_files(cls, config, corpus_path, index_path, session=None):
        manifest = load_manifest(corpus_path)
        index = VectorIndex.load(index_path)
        provider = embedder.provider_from_config(
            config, corpus_texts=[c.body for c in manifest.chunks],
            session=session)
        return cls(manifest, index, provider, k=config.getint('Index', 'k'))

    def retrieve(self, serial_code):
        return query_topk(self.index, embedder.embed(serial_code,
                                                     self.provider), self.k)


@dataclass
class TransformSettings:
    profile: str = 'p4omp'
    model: str = 'gpt-3.5-turbo'
    temperature: float = DEFAULT_TEMPERATURE
    workers: int = 4
    template: Optional[str] = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidInputError('Unknown profile "{}", expected one of '
                                    '{}'.format(self.profile,
                                                ', '.join(PROFILES)))

    @classmethod
    def from_config(cls, config, profile='p4omp'):
        template_path = config.get('Prompt', 'template')
        return cls(profile=profile, model=config.get('Generation', 'model'),
                   temperature=config.getfloat('Generation', 'temperature'),
                   workers=config.getint('Generation', 'max_in_flight'),
                   template=(load_template(template_path) if template_path
                             else None))


def case_dir(out_dir, case_id):
    return os.path.join(out_dir, TRANSFORM_DIR, case_id)


def _write(path, text):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)


def _write_json(path, data):
    _write(path, json.dumps(data, indent=2, sort_keys=True,
                            ensure_ascii=False) + '\n')


def transform_case(case, cases_dir, out_dir, provider, settings,
                   retriever=None):
    """
    Retrieve, build the prompt, generate and extract for one case.

    Provider failures and replay misses are recorded in the outcome.

    :param case: CaseSpec
    :param cases_dir: directory the case serial_path is relative to
    :param out_dir: output directory
    :param provider: ChatProvider
    :param settings: TransformSettings
    :param retriever: Retriever, unused for the baseline profile
    :return: GenerationOutcome
    """
    serial = case.source(cases_dir)
    if settings.profile == 'baseline':
        hits, manifest = [], None
    else:
        hits, manifest = retriever.retrieve(serial), retriever.manifest
    bundle = build_prompt(serial, hits, manifest, template=settings.template)
    request = GenerationRequest(case_id=case.case_id, prompt=bundle.rendered,
                                model_name=settings.model,
                                temperature=settings.temperature)
    try:
        outcome = generate(request, provider)
    except (ProviderError, ReplayMissError) as e:
        logger.warning('Generation for case "{}" failed: {}'.format(
            case.case_id, e))
        outcome = GenerationOutcome(case_id=case.case_id, raw_reply='',
                                    extracted_code=None, provider_latency=0.0,
                                    provider=provider.name, error=str(e))
    directory = case_dir(out_dir, case.case_id)
    os.makedirs(directory, exist_ok=True)
    _write(os.path.join(directory, 'prompt.txt'), bundle.rendered)
    _write_json(os.path.join(directory, 'hits.json'),
                [hit.to_dict() for hit in hits])
    _write_json(os.path.join(directory, 'outcome.json'), outcome.to_dict())
    program = os.path.join(directory, 'parallel.cpp')
    if outcome.extracted_code is not None:
        _write(program, outcome.extracted_code)
    elif os.path.exists(program):
        os.remove(program)
    return outcome


def transform_cases(cases, cases_dir, out_dir, provider, settings,
                    retriever=None):
    """
    Transform every case with a bounded worker pool.

    :return: list of GenerationOutcome in case order
    :raises InvalidInputError: if the p4omp profile has no retriever
    """
    if settings.profile == 'p4omp' and retriever is None:
        raise InvalidInputError('The p4omp profile needs a corpus index')
    logger.info('Transforming {} cases ({} profile)'.format(
        len(cases), settings.profile))
    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        return list(pool.map(
            lambda case: transform_case(case, cases_dir, out_dir, provider,
                                        settings, retriever), cases))


def load_outcome(out_dir, case_id):
    path = os.path.join(case_dir(out_dir, case_id), 'outcome.json')
    if not os.path.exists(path):
        raise InvalidInputError('Case "{}" has not been transformed: {} is '
                                'missing'.format(case_id, path))
    with open(path, encoding='utf-8') as f:
        return GenerationOutcome.from_dict(json.load(f))


def program_source(outcome):
    """
    Program to compile for an outcome: the extracted block, the raw reply
    when it had no fenced block, nothing when generation failed.
    """
    if outcome.error:
        return None
    if outcome.extracted_code is not None:
        return outcome.extracted_code
    return outcome.raw_reply


def validate_cases(cases, cases_dir, out_dir, settings=None, workers=4):
    """
    Validate the transformed programs of every case and write
    reports.jsonl.

    :return: list of ValidationReport in case order
    :raises HostEnvironmentError: if the toolchain is missing
    """
    settings = settings or ValidationSettings()

    def validate(case):
        outcome = load_outcome(out_dir, case.case_id)
        return validate_case(case, case.source(cases_dir),
                             program_source(outcome),
                             os.path.join(out_dir, WORK_DIR, case.case_id),
                             settings)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(validate, cases))
    os.makedirs(out_dir, exist_ok=True)
    save_reports(reports, os.path.join(out_dir, REPORTS_FILE))
    return reports


def write_summary(reports, out_dir):
    """
    Write summary.txt and summary.json.

    :return: RunSummary
    """
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, SUMMARY_TEXT), report(reports, 'text'))
    _write(os.path.join(out_dir, SUMMARY_JSON), report(reports, 'json'))
    return summarize(reports)


def run_pipeline(cases, cases_dir, out_dir, provider, settings,
                 validation=None, retriever=None, workers=4):
    """
    Transform, validate and summarize every case of a manifest.

    :param cases: list of CaseSpec
    :param cases_dir: directory case serial paths are relative to
    :param out_dir: output directory
    :param provider: ChatProvider
    :param settings: TransformSettings (carries the profile)
    :param validation: ValidationSettings
    :param retriever: Retriever for the p4omp profile
    :param workers: validation workers
    :return: (list of ValidationReport, RunSummary)
    :raises HostEnvironmentError: aborts the run
    """
    transform_cases(cases, cases_dir, out_dir, provider, settings, retriever)
    reports = validate_cases(cases, cases_dir, out_dir, validation, workers)
    summary = write_summary(reports, out_dir)
    logger.info('Run finished: {} of {} evaluated cases compiled'.format(
        summary.compile_success, summary.evaluated_cases))
    return reports, summary


def bench_sources(sources, out_dir, config, thread_counts=None,
                  imported=None):
    """
    Compile OpenMP benchmark programs, sweep them across thread counts and
    write the bench reports.

    :param sources: list of C++ source paths; the case id is the file stem
    :param out_dir: output directory (reports go to <out_dir>/bench)
    :param config: parsed configuration
    :param thread_counts: thread sweep, defaults to [Bench] threads
    :param imported: BenchRecords to report alongside the measured ones
    :return: list of SpeedupRow
    :raises ToolchainError: if the compiler is missing
    :raises BenchError: if a program fails to compile or run
    """
    thread_counts = thread_counts or omp_config.get_int_list(
        config, 'Bench', 'threads')
    records = list(imported or [])
    bench_dir = os.path.join(out_dir, BENCH_DIR)
    for path in sources:
        case_id = os.path.splitext(os.path.basename(path))[0]
        with open(path, encoding='utf-8') as f:
            source = f.read()
        result = compile_gate(source, os.path.join(bench_dir, WORK_DIR,
                                                   case_id),
                              command=config.get('Compiler', 'command'),
                              timeout=config.getfloat('Compiler', 'timeout'),
                              name=case_id)
        if not result.compile_ok:
            raise bench.BenchError('Benchmark "{}" does not compile:\n'
                                   '{}'.format(case_id, result.diagnostics))
        records.extend(bench.run_sweep(
            result.binary, thread_counts,
            repetitions=config.getint('Bench', 'repetitions'),
            case_id=case_id, timeout=config.getfloat('Bench', 'timeout'),
            lock_file=config.get('Bench', 'lock_file')))
    return bench.write_reports(records, bench_dir)
