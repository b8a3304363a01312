"""
Configuration parsing

The configuration is a single INI document. Built-in defaults are read
first, then the configuration file, then ``OMP_RAG_<SECTION>_<OPTION>``
environment variables. Command line flags are applied last by the CLI.
"""

import configparser
import os


class ParseError(Exception):
    """
    Error found during configuration parsing.
    """
    pass


OMP_RAG_CONF = '/etc/omp-rag/omp-rag.conf'
ENV_PREFIX = 'OMP_RAG_'

DEFAULTS = {
    'Corpus': {
        'max_tokens': '400',
    },
    'Embedding': {
        'provider': 'local',
        'dimension': '512',
        'endpoint': 'https://api.openai.com/v1/embeddings',
        'model': 'text-embedding-3-small',
        'api_key_env': 'OMP_RAG_EMBEDDING_API_KEY',
        'max_in_flight': '4',
        'retries': '3',
        'timeout': '60',
    },
    'Index': {
        'k': '4',
    },
    'Prompt': {
        'template': '',
    },
    'Generation': {
        'provider': 'replay',
        'endpoint': 'https://api.openai.com/v1/chat/completions',
        'model': 'gpt-3.5-turbo',
        'temperature': '0.2',
        'api_key_env': 'OMP_RAG_API_KEY',
        'timeout': '120',
        'retries': '3',
        'max_in_flight': '4',
        'replay_dir': '',
    },
    'Compiler': {
        'command': 'g++ -fopenmp -std=c++17 -O2 {src} -o {bin}',
        'serial_command': 'g++ -std=c++17 -O2 {src} -o {bin}',
        'timeout': '60',
    },
    'Validation': {
        'threads': '1,8',
        'timeout': '120',
        'tolerance': '1e-6',
        'workers': '4',
    },
    'Bench': {
        'threads': '1,2,4,8',
        'repetitions': '3',
        'lock_file': '/tmp/omp-rag-bench.lock',
        'timeout': '3600',
    },
    'Harvest': {
        'api_url': 'https://api.stackexchange.com/2.3',
        'site': 'stackoverflow',
        'tagged': 'c++',
        'max_pages': '15',
        'page_size': '30',
        'min_lines': '10',
        'api_key_env': 'OMP_RAG_STACKEXCHANGE_KEY',
        'fixture_dir': '',
    },
    'Logger': {
        'level': 'INFO',
        'syslog': 'false',
        'file': '',
        'stderr': 'true',
    },
}


def parse(file_path=None, environ=None):
    """
    Parse configuration file on top of the built-in defaults.

    :param file_path: path to the configuration file, or None for defaults
                      only
    :param environ: environment mapping used for overrides, defaults to
                    os.environ
    :return: parsed configuration
    :raises ParseError: if the file is missing or malformed
    """
    config = configparser.ConfigParser(interpolation=None)
    config.read_dict(DEFAULTS)
    if file_path:
        if not os.path.exists(file_path):
            raise ParseError('Configuration file not found: {}'.format(
                file_path))
        try:
            config.read(file_path, encoding='utf-8')
        except configparser.Error as e:
            raise ParseError('Configuration file {} is malformed: {}'.format(
                file_path, e))
    apply_environment(config, os.environ if environ is None else environ)
    return config


def apply_environment(config, environ):
    """
    Override options from OMP_RAG_<SECTION>_<OPTION> environment variables.

    :param config: configuration to update in place
    :param environ: environment mapping
    :return: None
    """
    for section in config.sections():
        for option in list(config[section].keys()):
            name = env_name(section, option)
            if name in environ:
                config.set(section, option, environ[name])


def env_name(section, option):
    """
    Environment variable name overriding an option.

    :param section: configuration section
    :param option: option name
    :return: variable name, e.g. OMP_RAG_INDEX_K
    """
    return '{}{}_{}'.format(ENV_PREFIX, section, option).upper().replace(
        ' ', '_')


def load(file_path=None, environ=None):
    """
    Locate and parse the configuration.

    The file is taken from the argument, then the OMP_RAG_CONF environment
    variable, then the system-wide default if it exists.

    :param file_path: explicit configuration file
    :param environ: environment mapping, defaults to os.environ
    :return: parsed configuration
    :raises ParseError: if an explicitly named file is missing or malformed
    """
    environ = os.environ if environ is None else environ
    if not file_path:
        file_path = environ.get('OMP_RAG_CONF')
    if not file_path and os.path.exists(OMP_RAG_CONF):
        file_path = OMP_RAG_CONF
    return parse(file_path, environ=environ)


def get_int_list(config, section, option):
    """
    Read a comma separated list of positive integers.

    :param config: parsed configuration
    :param section: configuration section
    :param option: option name
    :return: list of integers
    :raises ParseError: if an item is not a positive integer
    """
    value = config.get(section, option, fallback='')
    return parse_int_list(value, '{}.{}'.format(section, option))


def parse_int_list(value, what='value'):
    """
    Parse "1,2,4,8" into [1, 2, 4, 8].

    :param value: comma separated text
    :param what: name used in error messages
    :return: list of positive integers
    :raises ParseError: on malformed or non-positive items
    """
    items = list()
    for item in value.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            number = int(item)
        except ValueError:
            raise ParseError('{} must be a list of integers, got "{}"'.format(
                what, value))
        if number < 1:
            raise ParseError('{} items must be positive, got {}'.format(
                what, number))
        items.append(number)
    return items


def api_key(config, section):
    """
    Read the API key named by the section's api_key_env option.

    :param config: parsed configuration
    :param section: configuration section
    :return: API key or None
    """
    variable = config.get(section, 'api_key_env', fallback='')
    if not variable:
        return None
    return os.getenv(variable) or None


def categories(config):
    """
    Create harvest category dict from the configuration.

    :param config: parsed configuration
    :return: dict category name -> dict of category options
    """
    found = dict()
    prefix = 'Category '
    for section in [s for s in config.sections() if s.startswith(prefix)]:
        found[section[len(prefix):].strip()] = dict(config[section])
    return found
