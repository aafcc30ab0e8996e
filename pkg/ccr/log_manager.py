# ccr/log_manager.py
"""Per-run logging: console output plus a run log and an error log under the log directory."""

import logging
import sys
from datetime import datetime
from pathlib import Path

CONSOLE_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
QUIET_LOGGERS = ("urllib3", "numexpr", "matplotlib", "kaleido")


class LogManager:
    """
    Installs the handlers for one `ccr` run on the root logger.

    The run log is named after the command (``ccr_fit_20240131.log``) and keeps
    DEBUG records; ``errors_<date>.log`` collects ERROR records across commands.
    Only the handlers installed here are removed by `close`, so handlers set up
    by an embedding application survive a run.
    """

    def __init__(self, log_dir="logs", console_level=logging.INFO, command="run", file_level=logging.DEBUG):
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.console_level = console_level
        self.file_level = file_level
        self.command = command
        self._handlers: list[logging.Handler] = []
        self._previous_level = None
        self.setup_logging()

    @property
    def log_files(self) -> list[Path]:
        return [Path(h.baseFilename) for h in self._handlers if isinstance(h, logging.FileHandler)]

    def _add(self, handler: logging.Handler, level: int, fmt: str) -> None:
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter(fmt))
        logging.getLogger().addHandler(handler)
        self._handlers.append(handler)

    def setup_logging(self):
        root_logger = logging.getLogger()
        self._previous_level = root_logger.level
        root_logger.setLevel(min(self.console_level, self.file_level))

        stamp = datetime.now().strftime("%Y%m%d")
        self.main_log_file = self.log_dir / f"ccr_{self.command}_{stamp}.log"
        self.error_log_file = self.log_dir / f"errors_{stamp}.log"
        self._add(logging.StreamHandler(sys.stderr), self.console_level, CONSOLE_FORMAT)
        self._add(logging.FileHandler(self.main_log_file, encoding="utf-8"), self.file_level, FILE_FORMAT)
        self._add(logging.FileHandler(self.error_log_file, encoding="utf-8"), logging.ERROR, FILE_FORMAT)

        for noisy in QUIET_LOGGERS:
            logging.getLogger(noisy).setLevel(logging.WARNING)
        logging.getLogger(__name__).debug(f"ccr {self.command}: logging to {self.main_log_file}")

    def close(self):
        root_logger = logging.getLogger()
        for handler in self._handlers:
            root_logger.removeHandler(handler)
            handler.close()
        self._handlers.clear()
        if self._previous_level is not None:
            root_logger.setLevel(self._previous_level)
            self._previous_level = None
