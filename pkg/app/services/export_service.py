# app/services/export_service.py
import io
import json
import math
import sys
import logging
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd

from app.core.errors import OutputError
from app.core.settings import TOOL_NAME, TOOL_VERSION
from app.schemas.physics import SystemParams

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# "
FLOAT_FORMAT = "%.12g"


def to_plain(value: Any) -> Any:
    """JSON-safe copy: non-finite floats become strings, complex splits into re/im."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, complex):
        return {"re": to_plain(value.real), "im": to_plain(value.imag)}
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if hasattr(value, "value") and hasattr(value, "name"):  # Enum
        return value.value
    return value


def metadata_header(
    command: str,
    params: SystemParams,
    seed: Optional[int] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Everything needed to regenerate a dataset. Deliberately carries no timestamp."""
    meta = {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "command": command,
        "params": params.model_dump(),
        "seed": seed,
    }
    if extra:
        meta.update(extra)
    return to_plain(meta)


def read_metadata(text: str) -> Dict[str, Any]:
    """Inverse of the CSV header: merges every '# {...}' line at the top of a file."""
    meta: Dict[str, Any] = {}
    for line in text.splitlines():
        if not line.startswith(HEADER_PREFIX):
            break
        meta.update(json.loads(line[len(HEADER_PREFIX):]))
    return meta


def render_csv(frame: pd.DataFrame, metadata: Dict[str, Any]) -> str:
    buffer = io.StringIO()
    buffer.write(HEADER_PREFIX + json.dumps(metadata, sort_keys=True) + "\n")
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def render_json(frame: pd.DataFrame, metadata: Dict[str, Any]) -> str:
    rows = [to_plain(row) for row in frame.to_dict(orient="records")]
    return json.dumps({"metadata": metadata, "rows": rows}, sort_keys=True, indent=2) + "\n"


def write_dataset(frame: pd.DataFrame, metadata: Dict[str, Any], out: Optional[str], fmt: str = "csv") -> str:
    """Renders and writes a dataset; out of None or '-' means stdout. Returns the rendered text."""
    if fmt not in ("csv", "json"):
        raise OutputError(f"Unknown output format '{fmt}'")
    text = render_csv(frame, metadata) if fmt == "csv" else render_json(frame, metadata)
    if out in (None, "-"):
        sys.stdout.write(text)
        return text
    try:
        with open(out, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    except OSError as e:
        raise OutputError(f"Could not write {out}: {e}") from e
    logger.info(f"write_dataset path='{out}' rows={len(frame)} format={fmt}")
    return text


def long_frame(rows: Iterable[Dict[str, Any]], columns: List[str]) -> pd.DataFrame:
    """Long-format table with a fixed column order, empty tables included."""
    return pd.DataFrame(list(rows), columns=columns)
