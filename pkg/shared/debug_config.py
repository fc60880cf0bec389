"""
Debug configuration for gwldp runs.
Provides leveled logging and tracing for samplers, solvers and estimators.
"""

import logging
import sys
import traceback
from datetime import datetime
from pathlib import Path

from .config import get_settings

# Debug levels
DEBUG_LEVELS = {
    'BASIC': 1,      # Run starts/ends and failures
    'DETAILED': 2,   # Per-step summaries (rejections, solver iterations)
    'VERBOSE': 3,    # Intermediate matrices and measures
    'TRACE': 4       # Timings
}


class RunDebugger:
    """Leveled logging for simulation and rate computations"""

    def __init__(self, debug_level='BASIC', log_to_file=False):
        self.debug_level = DEBUG_LEVELS.get(debug_level.upper(), 1)
        self.start_time = datetime.now()

        self.setup_logging(log_to_file)

        self.trace_steps = self.debug_level >= 2
        self.dump_full_state = self.debug_level >= 3
        self.trace_timing = self.debug_level >= 4

        self.step_counter = 0
        self.warning_counter = 0
        self.error_counter = 0

    def setup_logging(self, log_to_file):
        """stderr console handler plus an optional DEBUG file under ./logs"""
        self.logger = logging.getLogger('gwldp')
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False
        self.logger.handlers.clear()

        # stdout carries command output, so the console handler uses stderr
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(logging.Formatter(
            '[gwldp] %(levelname)s [%(asctime)s] %(message)s',
            datefmt='%H:%M:%S'
        ))
        self.logger.addHandler(console_handler)

        if log_to_file:
            log_dir = Path("./logs")
            log_dir.mkdir(exist_ok=True)
            log_file = log_dir / f"gwldp_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(logging.Formatter(
                '%(levelname)s [%(asctime)s] %(funcName)s:%(lineno)d - %(message)s'
            ))
            self.logger.addHandler(file_handler)
            self.logger.info(f"also logging to {log_file}")

    def log_step(self, step_name, details=None, level='INFO'):
        """Log a sampler or solver step; warnings are always shown"""
        self.step_counter += 1
        if level == 'WARNING':
            self.warning_counter += 1
        elif level == 'INFO' and not self.trace_steps:
            return

        msg = f"{step_name}: {details}" if details else step_name
        self.logger.log(getattr(logging, level, logging.INFO), msg)

    def log_run(self, message):
        """Log a run boundary; shown at every level"""
        self.logger.info(message)

    def dump_state(self, state, label="state"):
        """Dump a matrix, measure or dict of intermediate values"""
        if not self.dump_full_state:
            return
        if isinstance(state, dict):
            body = "\n".join(f"  {key} = {value}" for key, value in state.items())
        else:
            body = f"  {state}"
        self.logger.info(f"{label}:\n{body}")

    def log_timing(self, operation, start_time, end_time=None):
        """Log operation timing"""
        if not self.trace_timing:
            return
        if end_time is None:
            end_time = datetime.now()
        duration = (end_time - start_time).total_seconds()
        self.logger.info(f"{operation} took {duration:.3f}s")

    def log_error(self, error, context=None):
        """Log a failed run with the command it came from"""
        self.error_counter += 1
        msg = f"{type(error).__name__}: {error}"
        if context:
            msg += f" ({', '.join(f'{k}={v}' for k, v in context.items())})"
        self.logger.error(msg)
        if self.debug_level >= 3:
            self.logger.debug(traceback.format_exc())

    def summary(self):
        """One line with step, warning and error counts"""
        elapsed = (datetime.now() - self.start_time).total_seconds()
        self.logger.info(f"run summary: {self.step_counter} steps, {self.warning_counter} warnings, "
                         f"{self.error_counter} errors in {elapsed:.2f}s")


# Global debugger instance
_debugger = None


def get_debugger():
    """Process-wide debugger, built from settings on first use"""
    global _debugger
    if _debugger is None:
        settings = get_settings()
        _debugger = RunDebugger(settings.debug_level, settings.debug_log_to_file)
    return _debugger


def set_debug_level(level, log_to_file=False):
    """Replace the process-wide debugger (BASIC, DETAILED, VERBOSE, TRACE)"""
    global _debugger
    _debugger = RunDebugger(level, log_to_file)
    return _debugger


# Convenience functions
def debug_step(step_name, details=None, level='INFO'):
    get_debugger().log_step(step_name, details, level)


def debug_run(message):
    get_debugger().log_run(message)


def debug_dump_state(state, label="state"):
    get_debugger().dump_state(state, label)


def debug_timing(operation, start_time, end_time=None):
    get_debugger().log_timing(operation, start_time, end_time)


def debug_error(error, context=None):
    get_debugger().log_error(error, context)


def debug_summary():
    get_debugger().summary()
