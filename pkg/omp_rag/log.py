"""
Logging setup from the [Logger] configuration block
"""

import logging
import logging.handlers


def setup_logging(config, level=None):
    """
    Configure the root logger.

    :param config: parsed configuration
    :param level: log level overriding the configuration
    :return: root logger
    """
    log_level = (level or config.get('Logger', 'level',
                                     fallback='INFO')).upper()
    use_syslog = config.getboolean('Logger', 'syslog', fallback=False)
    log_file = config.get('Logger', 'file', fallback=None)
    log_stderr = config.getboolean('Logger', 'stderr', fallback=True)

    logger = logging.getLogger()
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        if getattr(handler, '_omp_rag', False):
            logger.removeHandler(handler)

    if use_syslog:
        handler = logging.handlers.SysLogHandler(address='/dev/log')
        formatter = logging.Formatter('omp-rag: %(levelname)s: %(message)s')
        _add_handler(logger, handler, formatter)

    if log_file:
        handler = logging.FileHandler(log_file)
        formatter = logging.Formatter('%(asctime)s: %(levelname)s: '
                                      '%(name)s: %(message)s')
        _add_handler(logger, handler, formatter)

    if log_stderr:
        # stdout carries rendered reports
        handler = logging.StreamHandler()
        formatter = logging.Formatter('%(asctime)s: %(levelname)s: '
                                      '%(name)s: %(message)s')
        _add_handler(logger, handler, formatter)

    return logger


def _add_handler(logger, handler, formatter):
    handler.setFormatter(formatter)
    handler._omp_rag = True
    logger.addHandler(handler)
