"""
Artifact readers and writers.

* Surfaces: CSV with header `x0,...,xn` (curves, level-set samples) or `x,r` (profiles).
* Fields: flat little-endian float64 binary plus a JSON sidecar holding shape,
  spacing, origin, symmetry and a run-length encoding of the domain mask.
* Tables: long-format CSV through pandas.
* Summaries: JSON with sorted keys so that equal reports are byte-identical.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from src.utils.errors import ArtifactError, GeometryError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# surfaces -----------------------------------------------------------------------------

def write_surface_csv(surface, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if surface.kind == "profile_of_revolution":
        columns = ["x", "r"]
    else:
        columns = [f"x{i}" for i in range(surface.samples.shape[1])]
    pd.DataFrame(surface.samples, columns=columns).to_csv(path, index=False, float_format="%.17g")
    return path


def read_surface_csv(source, n: int = None, ends: str = "capped", period: float = 0.0,
                     mean_convex: bool = False):
    """
    Parse a surface CSV. A header `x,r` yields a profile of revolution (ambient
    dimension n + 1, n required); `x0,x1` yields a closed plane curve.
    """
    from src.services.geometry_core import Surface

    try:
        frame = pd.read_csv(source)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ArtifactError(f"cannot read surface CSV: {exc}") from exc
    columns = [c.strip() for c in frame.columns]
    samples = frame.to_numpy(dtype=float)
    if columns == ["x", "r"]:
        if n is None:
            raise GeometryError("profile CSVs need the surface dimension n")
        return Surface(kind="profile_of_revolution", ambient_dimension=n + 1, samples=samples,
                       ends=ends, period=period, mean_convex=mean_convex)
    if columns == ["x0", "x1"]:
        return Surface(kind="plane_curve", ambient_dimension=2, samples=samples, mean_convex=mean_convex)
    raise GeometryError(f"unsupported surface CSV header {columns}")


# fields -------------------------------------------------------------------------------

def encode_mask(mask: np.ndarray) -> List[int]:
    """Run lengths of the flattened (C-order) mask, starting with a run of False."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def decode_mask(runs: List[int], shape: Tuple[int, ...]) -> np.ndarray:
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    if flat.size != int(np.prod(shape)):
        raise ArtifactError("mask run lengths do not match the field shape")
    return flat.reshape(shape)


def write_field(field, stem: PathLike) -> Tuple[Path, Path]:
    """Write `<stem>.bin` and `<stem>.json` for an ArrivalField."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data_path = stem.with_suffix(".bin")
    meta_path = stem.with_suffix(".json")
    values = np.where(field.mask, field.values, np.nan).astype("<f8")
    values.tofile(data_path)
    meta = {
        "shape": list(field.values.shape),
        "spacing": float(field.spacing),
        "origin": [float(v) for v in field.origin],
        "ambient_dimension": int(field.ambient_dimension),
        "symmetry": field.symmetry,
        "mask_rle": encode_mask(field.mask),
        "dtype": "float64-le",
    }
    write_json(meta, meta_path)
    return data_path, meta_path


def read_field(stem: PathLike):
    from src.services.arrival_time import ArrivalField

    stem = Path(stem)
    try:
        meta = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        values = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(meta["shape"])
    except (OSError, ValueError, KeyError) as exc:
        raise ArtifactError(f"cannot read field {stem}: {exc}") from exc
    mask = decode_mask(meta["mask_rle"], tuple(meta["shape"]))
    return ArrivalField(values=np.where(mask, values, 0.0), spacing=meta["spacing"],
                        origin=np.asarray(meta["origin"]), mask=mask,
                        ambient_dimension=meta["ambient_dimension"], symmetry=meta["symmetry"])


# tables and summaries -----------------------------------------------------------------

def write_table(rows: Union[List[Dict[str, Any]], pd.DataFrame], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    frame.to_csv(path, index=False, float_format="%.12g")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    return pd.read_csv(path)


def to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
