"""
Logger module for vflow
Daily log file plus a run.log kept inside each series directory while a
run or a certification writes there. VFLOW_LOG_LEVEL sets the console level
"""

import logging
import os
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional

LOGGER_NAME = 'VFlow'
RUN_LOG_NAME = 'run.log'
DAILY_FORMAT = '%(asctime)s | %(levelname)-8s | %(run)s | %(message)s'
RUN_FORMAT = '%(asctime)s.%(msecs)03d | %(levelname)-8s | %(message)s'


class RunContext(logging.Filter):
    """Stamps every record with the series directory being written ('-' outside a run)"""

    def __init__(self):
        super().__init__()
        self.run = '-'

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = self.run
        return True


_context = RunContext()


def console_level() -> int:
    """Console threshold from VFLOW_LOG_LEVEL (default ERROR)"""
    raw = os.environ.get('VFLOW_LOG_LEVEL', '').strip().upper()
    level = logging.getLevelName(raw) if raw else logging.ERROR
    return level if isinstance(level, int) else logging.ERROR


def setup_logger(log_dir: Optional[Path] = None) -> logging.Logger:
    """Setup and return the application logger"""

    if log_dir is None:
        log_dir = Path(__file__).parent.resolve() / 'logs'

    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    log_file = log_dir / f'vflow_{datetime.now().strftime("%Y%m%d")}.log'

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)
    if _context not in logger.filters:
        logger.addFilter(_context)

    # Avoid adding handlers multiple times
    if logger.handlers:
        return logger

    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter(DAILY_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level())
    console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    return logger


# Global logger instance
_logger = None


def get_logger() -> logging.Logger:
    """Get the global logger instance"""
    global _logger
    if _logger is None:
        _logger = setup_logger()
    return _logger


@contextmanager
def run_log(directory: Path, mode: str = 'a') -> Iterator[Path]:
    """Copy every record, per-step debug lines included, to <directory>/run.log"""
    logger = get_logger()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RUN_LOG_NAME
    handler = logging.FileHandler(path, mode=mode, encoding='utf-8')
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(RUN_FORMAT, datefmt='%H:%M:%S'))
    previous = _context.run
    _context.run = directory.name
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()
        _context.run = previous


def log_info(message: str):
    get_logger().info(message)


def log_error(message: str, exc_info: bool = False):
    get_logger().error(message, exc_info=exc_info)


def log_warning(message: str):
    get_logger().warning(message)


def log_debug(message: str):
    get_logger().debug(message)


def log_run_start(name: str, n: int, dt: float, t_end: float):
    log_info(f"Run started: {name} (n={n}, dt={dt:g}, t_end={t_end:g})")


def log_step(step: int, time: float, kinetic: float, balance_residual: float):
    log_debug(f"step {step:6d} t={time:.6f} kinetic={kinetic:.6e} balance={balance_residual:+.3e}")


def log_run_stop(name: str, status: str, time: float):
    if status == 'completed':
        log_info(f"Run complete: {name} at t={time:g}")
    else:
        log_error(f"Run stopped: {name} ({status}) at t={time:g}")


def log_certify_result(series: str, verdict: bool, failed_clauses: list):
    if verdict:
        log_info(f"Certification passed: {series}")
    else:
        log_error(f"Certification failed: {series} - clauses {', '.join(failed_clauses)}")
