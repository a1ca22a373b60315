"""
Tests for the per-run log and the console threshold
"""

import json
import logging

import pytest

import logger
import main as cli

from conftest import equilibrium_document


class TestRunLog:
    """run.log inside the series directory"""

    def test_records_only_while_open(self, tmp_path):
        before = list(logger.get_logger().handlers)
        with logger.run_log(tmp_path / 'series') as path:
            logger.log_step(3, 0.003, 1.5e-2, -2e-9)
            logger.log_info('inside')
        logger.log_info('outside')
        text = path.read_text(encoding='utf-8')
        assert path == tmp_path / 'series' / logger.RUN_LOG_NAME
        assert 'step      3 t=0.003000' in text
        assert '| INFO     | inside' in text
        assert 'outside' not in text
        assert logger.get_logger().handlers == before

    def test_records_carry_run_name(self, tmp_path):
        seen = []

        class Collect(logging.Handler):
            def emit(self, record):
                seen.append(record.run)

        collector = Collect()
        logger.get_logger().addHandler(collector)
        try:
            with logger.run_log(tmp_path / 'shear'):
                logger.log_info('during')
            logger.log_info('after')
        finally:
            logger.get_logger().removeHandler(collector)
        assert seen == ['shear', '-']

    def test_simulate_then_certify_share_run_log(self, tmp_path):
        scenario = tmp_path / 'equilibrium.json'
        scenario.write_text(json.dumps(equilibrium_document()), encoding='utf-8')
        out = tmp_path / 'series'
        assert cli.main(['simulate', str(scenario), '--out', str(out)]) == cli.EXIT_OK
        text = (out / logger.RUN_LOG_NAME).read_text(encoding='utf-8')
        assert sum('| DEBUG    | step ' in line for line in text.splitlines()) == 20
        assert 'Run complete' in text
        assert cli.main(['certify', str(out), '--tests', '1']) == cli.EXIT_OK
        text = (out / logger.RUN_LOG_NAME).read_text(encoding='utf-8')
        assert 'Run started' in text
        assert 'Certification passed' in text


class TestConsoleLevel:
    """VFLOW_LOG_LEVEL"""

    @pytest.mark.parametrize('raw, expected', [
        (None, logging.ERROR), ('debug', logging.DEBUG), ('WARNING', logging.WARNING), ('loud', logging.ERROR),
    ])
    def test_console_level(self, monkeypatch, raw, expected):
        if raw is None:
            monkeypatch.delenv('VFLOW_LOG_LEVEL', raising=False)
        else:
            monkeypatch.setenv('VFLOW_LOG_LEVEL', raw)
        assert logger.console_level() == expected
