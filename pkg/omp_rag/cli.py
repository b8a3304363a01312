"""
omp-rag command line interface

Every stage of the experiment is a subcommand working on files under
--out-dir; `omp-rag run` chains them.
"""

import io
import logging
import os

import click

from omp_rag import bench
from omp_rag import config as omp_config
from omp_rag import embedder
from omp_rag import generation
from omp_rag import harvester
from omp_rag import pipeline
from omp_rag.corpus import ingest_corpus, load_manifest, save_manifest
from omp_rag.errors import HostEnvironmentError, OmpRagError
from omp_rag.index import build_index
from omp_rag.info import info
from omp_rag.log import setup_logging
from omp_rag.report import (FORMATS, ReportFormatError, render_comparison,
                            report)
from omp_rag.validation import (ValidationSettings, load_cases, load_reports,
                                save_cases)

logger = logging.getLogger(__name__)

ENVIRONMENT_EXIT_STATUS = 2


class PipelineGroup(click.Group):
    """
    Maps omp_rag errors onto exit statuses: environment errors exit with
    status 2, other errors with click's usage/error status.
    """

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except HostEnvironmentError as e:
            logger.error('{}'.format(e))
            click.echo('Error: {}'.format(e), err=True)
            ctx.exit(ENVIRONMENT_EXIT_STATUS)
        except (OmpRagError, omp_config.ParseError) as e:
            raise click.ClickException(str(e))


def _override(config, section, option, value):
    if value is not None:
        config.set(section, option, str(value))


def _out_path(out_dir, given, default_name):
    return given or os.path.join(out_dir, default_name)


def _cases(manifest):
    return load_cases(manifest), os.path.dirname(os.path.abspath(manifest))


def _generation_options(f):
    for option in reversed([
            click.option('--profile', type=click.Choice(pipeline.PROFILES),
                         default='p4omp', show_default=True,
                         help='p4omp adds retrieved context, baseline '
                              'does not'),
            click.option('--k', type=click.IntRange(min=1), default=None,
                         help='Retrieved chunks per prompt'),
            click.option('--model', default=None, help='Chat model name'),
            click.option('--temperature', type=click.FloatRange(min=0),
                         default=None, help='Sampling temperature'),
            click.option('--replay-dir', type=click.Path(file_okay=False),
                         default=None, help='Replay record directory'),
            click.option('--corpus', 'corpus_path', type=click.Path(),
                         default=None,
                         help='Corpus manifest [OUT_DIR/corpus.jsonl]'),
            click.option('--index', 'index_path', type=click.Path(),
                         default=None,
                         help='Index file [OUT_DIR/index.jsonl]')]):
        f = option(f)
    return f


def _apply_generation_options(config, k, model, temperature, replay_dir):
    _override(config, 'Index', 'k', k)
    _override(config, 'Generation', 'model', model)
    _override(config, 'Generation', 'temperature', temperature)
    _override(config, 'Generation', 'replay_dir', replay_dir)


def _retriever(config, profile, out_dir, corpus_path, index_path):
    if profile == 'baseline':
        return None
    return pipeline.Retriever.from_files(
        config, _out_path(out_dir, corpus_path, pipeline.CORPUS_FILE),
        _out_path(out_dir, index_path, pipeline.INDEX_FILE))


@click.group(cls=PipelineGroup)
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              default=None, help='Configuration file')
@click.option('--log-level', type=click.Choice(
    ['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
    default=None, help='Override [Logger] level')
@click.pass_context
def cli(ctx, config_path, log_level):
    """
    Retrieval-augmented OpenMP parallelization of serial C++ programs.
    """
    config = omp_config.load(config_path)
    setup_logging(config, level=log_level)
    ctx.obj = config


@cli.command()
@click.argument('corpus_dir', type=click.Path(exists=True, file_okay=False))
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--max-tokens', type=int, default=None,
              help='Token budget per chunk')
@click.pass_obj
def ingest(config, corpus_dir, out_dir, max_tokens):
    """
    Chunk a tutorial corpus into OUT_DIR/corpus.jsonl.
    """
    _override(config, 'Corpus', 'max_tokens', max_tokens)
    os.makedirs(out_dir, exist_ok=True)
    manifest = ingest_corpus(corpus_dir,
                             config.getint('Corpus', 'max_tokens'))
    save_manifest(manifest, os.path.join(out_dir, pipeline.CORPUS_FILE))
    click.echo('{} chunks, corpus version {}'.format(
        len(manifest), manifest.corpus_version))


@cli.command()
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--corpus', 'corpus_path', type=click.Path(), default=None,
              help='Corpus manifest [OUT_DIR/corpus.jsonl]')
@click.pass_obj
def index(config, out_dir, corpus_path):
    """
    Embed every corpus chunk into OUT_DIR/index.jsonl.
    """
    manifest = load_manifest(_out_path(out_dir, corpus_path,
                                       pipeline.CORPUS_FILE))
    provider = embedder.provider_from_config(
        config, corpus_texts=[c.body for c in manifest.chunks])
    vector_index = build_index(manifest, provider)
    vector_index.save(os.path.join(out_dir, pipeline.INDEX_FILE))
    click.echo('{} entries, {}'.format(len(vector_index),
                                       vector_index.provider_tag))


@cli.command()
@click.option('--manifest', type=click.Path(dir_okay=False), required=True,
              help='Case manifest to append survivors to')
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--category', 'selected', multiple=True,
              help='Harvest only this category (repeatable)')
@click.option('--max-pages', type=click.IntRange(min=1), default=None)
@click.option('--record', is_flag=True,
              help='Query the live API and record fixtures')
@click.pass_obj
def harvest(config, manifest, out_dir, selected, max_pages, record):
    """
    Collect compiling serial snippets from the Q&A site.
    """
    _override(config, 'Harvest', 'max_pages', max_pages)
    categories = dict((name, options.get('keywords'))
                      for name, options in
                      omp_config.categories(config).items())
    if not categories:
        categories = dict((name, None) for name in harvester.CATEGORIES)
    if selected:
        categories = dict((name, categories.get(name)) for name in selected)
    existing = load_cases(manifest) if os.path.exists(manifest) else []
    builder = harvester.CaseManifestBuilder(
        os.path.dirname(os.path.abspath(manifest)), existing)
    processed = harvester.harvest(
        categories, harvester.api_from_config(config, record=record),
        out_dir, builder, max_pages=config.getint('Harvest', 'max_pages'),
        min_lines=config.getint('Harvest', 'min_lines'),
        command=config.get('Compiler', 'serial_command'),
        timeout=config.getfloat('Compiler', 'timeout'),
        site=config.get('Harvest', 'site'),
        tagged=config.get('Harvest', 'tagged'),
        page_size=config.getint('Harvest', 'page_size'))
    save_cases(builder.cases, manifest)
    click.echo('{} candidates, {} cases in {}'.format(
        len(processed), len(builder.cases), manifest))


@cli.command()
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Case manifest')
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@_generation_options
@click.pass_obj
def transform(config, manifest, out_dir, profile, k, model, temperature,
              replay_dir, corpus_path, index_path):
    """
    Retrieve, prompt, generate and extract for every case.
    """
    _apply_generation_options(config, k, model, temperature, replay_dir)
    cases, cases_dir = _cases(manifest)
    outcomes = pipeline.transform_cases(
        cases, cases_dir, out_dir, generation.provider_from_config(config),
        pipeline.TransformSettings.from_config(config, profile),
        _retriever(config, profile, out_dir, corpus_path, index_path))
    extracted = sum(1 for o in outcomes if o.extracted_code is not None)
    click.echo('{} cases transformed, {} programs extracted'.format(
        len(outcomes), extracted))


@cli.command()
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Case manifest')
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.pass_obj
def validate(config, manifest, out_dir):
    """
    Compile, classify and differentially validate transformed cases.
    """
    cases, cases_dir = _cases(manifest)
    reports = pipeline.validate_cases(
        cases, cases_dir, out_dir, ValidationSettings.from_config(config),
        workers=config.getint('Validation', 'workers'))
    click.echo('{} of {} cases compiled'.format(
        sum(1 for r in reports if r.compile_ok), len(reports)))


@cli.command('report')
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--format', 'fmt', default='text', show_default=True,
              help='One of {}'.format(', '.join(FORMATS)))
@click.option('--compare', 'baseline_dir', type=click.Path(file_okay=False),
              default=None,
              help='Output directory of a baseline run to compare against')
def report_command(out_dir, fmt, baseline_dir):
    """
    Summarize OUT_DIR/reports.jsonl.
    """
    reports = load_reports(os.path.join(out_dir, pipeline.REPORTS_FILE))
    if baseline_dir:
        baseline = load_reports(os.path.join(baseline_dir,
                                             pipeline.REPORTS_FILE))
        click.echo(render_comparison(baseline, reports), nl=False)
        return
    try:
        rendered = report(reports, fmt)
    except ReportFormatError as e:
        raise click.BadParameter(str(e), param_hint="'--format'")
    click.echo(rendered, nl=False)


@cli.command('bench')
@click.argument('sources', nargs=-1, type=click.Path(exists=True,
                                                     dir_okay=False))
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--threads-sweep', default=None,
              help='Comma separated thread counts, e.g. 1,2,4,8')
@click.option('--import', 'imported', type=click.Path(exists=True,
                                                      dir_okay=False),
              default=None, help='CSV of published runtimes to add')
@click.pass_obj
def bench_command(config, sources, out_dir, threads_sweep, imported):
    """
    Time OpenMP programs across a thread sweep.
    """
    _override(config, 'Bench', 'threads', threads_sweep)
    if not sources and not imported:
        raise click.UsageError('Give benchmark sources or --import')
    rows = pipeline.bench_sources(
        list(sources), out_dir, config,
        thread_counts=omp_config.get_int_list(config, 'Bench', 'threads'),
        imported=bench.import_records(imported) if imported else None)
    click.echo('{} speedup rows written to {}'.format(
        len(rows), os.path.join(out_dir, pipeline.BENCH_DIR)))


@cli.command()
@click.argument('csv_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out-dir', type=click.Path(file_okay=False), default=None,
              help='Also write the bench reports here')
def speedup(csv_path, out_dir):
    """
    Runtime table and speedups of published timings.
    """
    records = bench.import_records(csv_path)
    rows = bench.compute_speedups(records)
    if out_dir:
        bench.write_reports(records, os.path.join(out_dir,
                                                  pipeline.BENCH_DIR))
    out = io.StringIO()
    bench.write_speedups_csv(rows, out)
    click.echo(bench.render_runtime_table(records))
    click.echo(out.getvalue(), nl=False)


@cli.command()
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Case manifest')
@click.option('--out-dir', type=click.Path(file_okay=False), default='.',
              show_default=True)
@click.option('--corpus-dir', type=click.Path(exists=True, file_okay=False),
              default=None, help='Tutorial corpus to ingest and index first')
@_generation_options
@click.pass_obj
def run(config, manifest, out_dir, corpus_dir, profile, k, model,
        temperature, replay_dir, corpus_path, index_path):
    """
    Run the whole experiment and print the summary.
    """
    _apply_generation_options(config, k, model, temperature, replay_dir)
    os.makedirs(out_dir, exist_ok=True)
    if corpus_dir and profile == 'p4omp':
        corpus_path = os.path.join(out_dir, pipeline.CORPUS_FILE)
        index_path = os.path.join(out_dir, pipeline.INDEX_FILE)
        corpus = ingest_corpus(corpus_dir, config.getint('Corpus',
                                                         'max_tokens'))
        save_manifest(corpus, corpus_path)
        build_index(corpus, embedder.provider_from_config(
            config, corpus_texts=[c.body for c in corpus.chunks])).save(
            index_path)
    cases, cases_dir = _cases(manifest)
    reports, _ = pipeline.run_pipeline(
        cases, cases_dir, out_dir, generation.provider_from_config(config),
        pipeline.TransformSettings.from_config(config, profile),
        validation=ValidationSettings.from_config(config),
        retriever=_retriever(config, profile, out_dir, corpus_path,
                             index_path),
        workers=config.getint('Validation', 'workers'))
    click.echo(report(reports, 'text'), nl=False)


@cli.command()
def version():
    """
    Show name, version and license.
    """
    click.echo(info)


def main():
    cli(prog_name='omp-rag')


if __name__ == '__main__':
    main()
