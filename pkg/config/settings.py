import os
from dotenv import load_dotenv

load_dotenv()

STORAGE_DIR = os.getenv("ALGAE_STORAGE_DIR", "storage")
LOG_LEVEL = os.getenv("ALGAE_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("ALGAE_LOG_FILE", os.path.join(STORAGE_DIR, "logs", "algae.log"))
DB_PATH = os.getenv("ALGAE_DB_PATH", os.path.join(STORAGE_DIR, "db", "runs.sqlite"))
RUNS_DIR = os.path.join(STORAGE_DIR, "runs")

CHECK_CONJUGATES = os.getenv("ALGAE_CHECK_CONJUGATES", "1") not in {"0", "false", "False", "no"}
DEFAULT_SMOOTHING = float(os.getenv("ALGAE_DEFAULT_SMOOTHING", "1e-6"))

if LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
    raise RuntimeError(f"ALGAE_LOG_LEVEL '{LOG_LEVEL}' is not a logging level")

if DEFAULT_SMOOTHING < 0:
    raise RuntimeError("ALGAE_DEFAULT_SMOOTHING must be >= 0")
