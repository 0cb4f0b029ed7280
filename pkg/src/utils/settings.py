import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

TOOL_NAME = "mcf-arrival-lab"
TOOL_VERSION = "0.3.0"

OUTPUT_ROOT_ENV = "MCFLAB_OUTPUT_ROOT"
LOG_LEVEL_ENV = "MCFLAB_LOG_LEVEL"

SCENARIO_DIR = Path(__file__).resolve().parents[2] / "data" / "scenarios"


def default_output_root() -> Path:
    """Directory that receives run artifacts when `--out` is not given."""
    return Path(os.getenv(OUTPUT_ROOT_ENV, "runs"))


def configure_logging() -> None:
    level_name = os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
