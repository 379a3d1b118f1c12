#!/usr/bin/env python3
"""
Utility functions for the gatefuse toolkit.
"""

import os
import json
import logging
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union
from pathlib import Path

import dotenv

# Load environment variables from .env file
dotenv.load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO"),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def get_env_var(name: str, default: Optional[str] = None) -> Optional[str]:
    """
    Get an environment variable or raise an exception if it's not set.

    Args:
        name: The name of the environment variable.
        default: The default value to return if the environment variable is not set.
            If None, an exception will be raised if the variable is not set.

    Returns:
        The value of the environment variable or the default value.

    Raises:
        ValueError: If the environment variable is not set and no default is provided.
    """
    value = os.getenv(name, default)
    if value is None and default is None:
        raise ValueError(f"Environment variable {name} is not set")
    return value


def get_num_threads() -> int:
    """
    Number of worker threads allowed by FUSION_NUM_THREADS (at least 1).
    """
    raw = get_env_var("FUSION_NUM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring non-integer FUSION_NUM_THREADS={raw!r}")
        return 1


def load_json_file(file_path: Union[str, Path]) -> Dict[str, Any]:
    """
    Load a JSON file.

    Args:
        file_path: The path to the JSON file.

    Returns:
        The parsed JSON data.

    Raises:
        FileNotFoundError: If the file does not exist.
        json.JSONDecodeError: If the file is not valid JSON.
    """
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File {file_path} does not exist")

    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json_file(data: Dict[str, Any], file_path: Union[str, Path], indent: int = 2) -> None:
    """
    Save data to a JSON file.

    Args:
        data: The data to save.
        file_path: The path to the JSON file.
        indent: The indentation level for the JSON file.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)

    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True)


def dump_json_line(record: Dict[str, Any]) -> str:
    """
    Serialize one record as a compact, key-sorted JSON line (no trailing newline).
    """
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_json_lines(records: Iterable[Dict[str, Any]], file_path: Union[str, Path]) -> int:
    """
    Write records to a JSON-lines file.

    Args:
        records: The records to write, one per line.
        file_path: The destination path.

    Returns:
        The number of records written.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)

    count = 0
    with open(file_path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dump_json_line(record))
            f.write("\n")
            count += 1
    return count


def append_json_line(record: Dict[str, Any], file_path: Union[str, Path]) -> None:
    """
    Append one record to a JSON-lines file, creating it if needed.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "a", encoding="utf-8", newline="\n") as f:
        f.write(dump_json_line(record))
        f.write("\n")


def read_json_lines(file_path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """
    Iterate over the records of a JSON-lines file, skipping blank lines.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File {file_path} does not exist")

    with open(file_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def format_error_message(error: Exception) -> str:
    """
    Format an exception into a user-friendly error message.

    Args:
        error: The exception to format.

    Returns:
        A formatted error message.
    """
    return f"Error: {type(error).__name__} - {str(error)}"


def error_payload(error: Exception) -> Dict[str, str]:
    """
    Structured form of an exception for machine-readable output.
    """
    return {"error": type(error).__name__, "message": str(error)}


def chunked(items: List[Any], size: int) -> List[List[Any]]:
    """
    Split a list into consecutive chunks of at most ``size`` items.

    Args:
        items: The list to split.
        size: The maximum chunk size.

    Returns:
        A list of chunks; the last chunk may be shorter.
    """
    if size < 1:
        raise ValueError(f"Chunk size must be >= 1, got {size}")
    return [items[i:i + size] for i in range(0, len(items), size)]
