import csv
import json
import logging
import os
from pathlib import Path

import crc8
import yaml

from linecounter.errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
THREADS_ENV = "LINECOUNTER_THREADS"


def signalHandler(signal, frame, trainer):
    # The trainer saves its checkpoint and state once the current step finishes
    print("\nInterrupted. Saving checkpoint after the current step...")
    trainer.requestStop()


def loadConfig(path=None):
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    try:
        with open(path, "r") as file:
            config = yaml.safe_load(file) or {}
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config


def threadCount():
    """Worker cap from LINECOUNTER_THREADS (default 1)."""
    value = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    return max(1, threads)


def writeCSV(file_path, row, fieldnames):
    """Append one row; the header goes in only when the file is new."""
    new_file = not os.path.isfile(file_path)
    with open(file_path, mode="a", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=fieldnames)
        if new_file:
            writer.writeheader()
        writer.writerow(row)


def writeJson(file_path, data):
    with open(file_path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def setupLogger(config, name, mode="w"):
    """
    Set up the package logger for one run.

    This function configures the "linecounter" logger so that every module
    logger below it writes to a file in the logs folder named after the run,
    and echoes INFO and above to the console.

    Args:
        config (dict): The configuration dictionary loaded from the config.yaml file.
        name (str): Run name, e.g. "train" or "ablate_h_first".
        mode (str): "w" starts a fresh log file, "a" appends to it.

    Returns:
        logger (Logger): The logger object for the run.
    """
    logs_dir = config.get("folder", {}).get("logs", "logs")
    os.makedirs(logs_dir, exist_ok=True)
    log_path = os.path.join(logs_dir, f"{name}_log.txt")  # to logs/<name>_log.txt file

    logger = logging.getLogger("linecounter")
    logger.setLevel(logging.DEBUG)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    file_handler = logging.FileHandler(log_path, mode=mode)
    file_handler.setLevel(logging.DEBUG)
    file_format = logging.Formatter("%(name)s - %(levelname)s - %(message)s")
    file_handler.setFormatter(file_format)
    logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(console_handler)

    return logger


def getCRC(data):
    """CRC-8 of a byte string as an int, the checkpoint trailer byte."""
    checksum = crc8.crc8()
    checksum.update(data)
    return checksum.digest()[0]


def getThroughput(time_diff, page_count):
    """Pages per second, 0 when no time was measured."""
    return page_count / time_diff if time_diff > 0 else 0.0


def logEpochStats(logger, epoch, loss, dr, ra, fm, lr, seconds, skipped):
    """
    Log the statistics of one training epoch.
    """
    logger.info(f"--------- EPOCH {epoch} ---------")
    logger.info(f"Train loss: {loss:.4f}")
    logger.info(f"Val DR/RA/FM: {dr:.4f} / {ra:.4f} / {fm:.4f}")
    logger.info(f"Learning rate: {lr:.3g}")
    logger.info(f"Skipped batches: {skipped}")
    logger.info(f"Epoch time: {seconds:.1f} s")
    logger.info("--------------------------------")
