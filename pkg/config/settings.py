"""
Lab Settings Module
-------------------
This module holds environment-driven defaults for the credit reset lab.
It includes functionality for:
- Loading environment variables from a .env file
- Default artifact root, worker count and shard size
- Configuring logging for entry points and test runners
"""

import os
import logging
from typing import Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Probability rows are accepted within this tolerance of summing to 1
PROBABILITY_TOLERANCE = 1e-9


def get_output_root() -> str:
    """Default artifact root directory"""
    return os.environ.get('CREDIT_LAB_OUTPUT_ROOT', 'artifacts')


def get_worker_count() -> int:
    """Number of replicate-shard worker threads"""
    return max(1, int(os.environ.get('CREDIT_LAB_WORKERS', 4)))


def get_shard_size() -> int:
    """Number of replicates written per shard file"""
    return max(1, int(os.environ.get('CREDIT_LAB_SHARD_SIZE', 250)))


def configure_logging(log_file: Optional[str] = None, level: Optional[str] = None) -> None:
    """
    Configure root logging with the lab's file and stream handlers

    Args:
        log_file: Log file name. If None, uses CREDIT_LAB_LOG_FILE or credit_lab.log
        level: Logging level name. If None, uses CREDIT_LAB_LOG_LEVEL or INFO
    """
    if log_file is None:
        log_file = os.environ.get('CREDIT_LAB_LOG_FILE', 'credit_lab.log')
    if level is None:
        level = os.environ.get('CREDIT_LAB_LOG_LEVEL', 'INFO')

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
