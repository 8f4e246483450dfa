import os
from typing import Dict, Any
from dataclasses import dataclass
from pathlib import Path

@dataclass
class LoggingConfig:
    """Logging configuration settings"""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file_path: str = "logs/fairlane.log"
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5
    console_level: str = "WARNING"

@dataclass
class AppConfig:
    """Main application configuration"""
    name: str = "FairLane"
    version: str = "1.0.0"
    debug: bool = False
    output_dir: str = "runs"
    cache_dir: str = "cache/trajectories"
    default_jobs: int = 1

class Config:
    """Centralized configuration management"""

    def __init__(self):
        self._load_environment()
        self._setup_directories()

    def _load_environment(self):
        """Load configuration from environment variables"""
        # Logging Configuration
        self.logging = LoggingConfig(
            level=os.getenv("FAIRLANE_LOG_LEVEL", "INFO"),
            format=os.getenv("FAIRLANE_LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"),
            file_path=os.getenv("FAIRLANE_LOG_FILE", "logs/fairlane.log"),
            max_file_size=int(os.getenv("FAIRLANE_LOG_MAX_SIZE", str(10 * 1024 * 1024))),
            backup_count=int(os.getenv("FAIRLANE_LOG_BACKUP_COUNT", "5")),
            console_level=os.getenv("FAIRLANE_CONSOLE_LOG_LEVEL", "WARNING"),
        )

        # Application Configuration
        self.app = AppConfig(
            name=os.getenv("FAIRLANE_APP_NAME", "FairLane"),
            version=os.getenv("FAIRLANE_VERSION", "1.0.0"),
            debug=os.getenv("FAIRLANE_DEBUG", "False").lower() == "true",
            output_dir=os.getenv("FAIRLANE_OUTPUT_DIR", "runs"),
            cache_dir=os.getenv("FAIRLANE_CACHE_DIR", "cache/trajectories"),
            default_jobs=int(os.getenv("FAIRLANE_JOBS", "1")),
        )

    def _setup_directories(self):
        """Create necessary directories"""
        Path(os.path.dirname(self.logging.file_path) or ".").mkdir(parents=True, exist_ok=True)

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {
            "logging": {
                "level": self.logging.level,
                "format": self.logging.format,
                "file_path": self.logging.file_path,
                "max_file_size": self.logging.max_file_size,
                "backup_count": self.logging.backup_count,
                "console_level": self.logging.console_level,
            },
            "app": {
                "name": self.app.name,
                "version": self.app.version,
                "debug": self.app.debug,
                "output_dir": self.app.output_dir,
                "cache_dir": self.app.cache_dir,
                "default_jobs": self.app.default_jobs,
            }
        }

# Global configuration instance
config = Config()
