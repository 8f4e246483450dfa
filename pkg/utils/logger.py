import functools
import logging
import logging.handlers
import sys
from pathlib import Path
from config import config

ROOT_LOGGER = "fairlane"


class Logger:
    """Centralized logging utility; handlers live on the package root logger"""

    _loggers = {}

    @classmethod
    def get_logger(cls, name: str = ROOT_LOGGER) -> logging.Logger:
        """Get or create a logger instance"""
        if name not in cls._loggers:
            cls._loggers[name] = cls._create_logger(name)
        return cls._loggers[name]

    @classmethod
    def _create_logger(cls, name: str) -> logging.Logger:
        """Create a new logger instance"""
        level = logging.DEBUG if config.app.debug else getattr(logging, config.logging.level.upper())
        if name != ROOT_LOGGER:
            cls.get_logger(ROOT_LOGGER)
            logger = logging.getLogger(f"{ROOT_LOGGER}.{name}")
            logger.setLevel(level)
            logger.propagate = True
            return logger

        logger = logging.getLogger(ROOT_LOGGER)

        # Avoid duplicate handlers
        if logger.handlers:
            return logger

        logger.setLevel(level)
        logger.propagate = False

        detailed_formatter = logging.Formatter(
            fmt=config.logging.format,
            datefmt="%Y-%m-%d %H:%M:%S"
        )

        simple_formatter = logging.Formatter(
            fmt="%(levelname)s - %(name)s - %(message)s"
        )

        # Console handler
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(getattr(logging, config.logging.console_level.upper()))
        console_handler.setFormatter(simple_formatter)
        logger.addHandler(console_handler)

        # File handler with rotation
        log_file = Path(config.logging.file_path)
        log_file.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            filename=log_file,
            maxBytes=config.logging.max_file_size,
            backupCount=config.logging.backup_count,
            encoding='utf-8',
            delay=True,
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        # Error file handler
        error_log_file = log_file.parent / f"{log_file.stem}_error{log_file.suffix}"
        error_handler = logging.handlers.RotatingFileHandler(
            filename=error_log_file,
            maxBytes=config.logging.max_file_size,
            backupCount=config.logging.backup_count,
            encoding='utf-8',
            delay=True,
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

        return logger

    @classmethod
    def attach_run_log(cls, path: Path) -> logging.Handler:
        """Mirror every fairlane logger, including ones created later, into a per-run log file until detached."""
        handler = logging.FileHandler(path, mode="w", encoding="utf-8")
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(fmt=config.logging.format, datefmt="%Y-%m-%d %H:%M:%S"))
        cls.get_logger(ROOT_LOGGER).addHandler(handler)
        return handler

    @classmethod
    def detach_run_log(cls, handler: logging.Handler) -> None:
        cls.get_logger(ROOT_LOGGER).removeHandler(handler)
        handler.close()

# Convenience functions
def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    """Get a logger instance"""
    return Logger.get_logger(name)

def log_exceptions(logger_name: str = ROOT_LOGGER):
    """Decorator to log exceptions"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger(logger_name)
            try:
                return func(*args, **kwargs)
            except Exception as e:
                logger.error(f"Exception in {func.__name__}: {e}", exc_info=True)
                raise
        return wrapper
    return decorator
