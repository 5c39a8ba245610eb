"""File formats: path archives, JSON reports and CSV tables.

Path archives are zip files holding ``paths.npy`` (n, L, d), ``chain_ids.npy``
and ``header.json``.  Entries carry a fixed timestamp, so equal inputs give
byte-identical archives.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from .sampler import SampleSet

__all__ = ["save_samples", "load_samples", "write_json", "read_json", "jsonable", "ArchiveError"]

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    pass


def jsonable(x):
    """Plain-Python copy of ``x``; infinities become the strings ``"inf"``/``"-inf"``, NaN becomes null."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path, obj) -> None:
    text = json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_samples(path, samples: SampleSet, extra: dict | None = None) -> None:
    header = {
        "T": samples.T,
        "dt": samples.dt,
        "bulk_half_width": samples.bulk_half_width,
        "fingerprint": samples.fingerprint,
        "pinned": samples.pinned,
        "chains": samples.chains,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(jsonable(header), sort_keys=True, indent=2).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, data in (("header.json", blob), ("paths.npy", _npy_bytes(samples.paths)),
                           ("chain_ids.npy", _npy_bytes(samples.chain_ids.astype(np.int64)))):
            info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)


def load_samples(path, fingerprint: str | None = None) -> SampleSet:
    """Read an archive; raises :class:`ArchiveError` on a fingerprint mismatch."""
    p = Path(path)
    if not p.exists():
        raise ArchiveError(f"path archive not found: {p}")
    with zipfile.ZipFile(p) as zf:
        header = json.loads(zf.read("header.json"))
        paths = np.lib.format.read_array(io.BytesIO(zf.read("paths.npy")), allow_pickle=False)
        ids = np.lib.format.read_array(io.BytesIO(zf.read("chain_ids.npy")), allow_pickle=False)
    if fingerprint is not None and header["fingerprint"] != fingerprint:
        raise ArchiveError(
            f"archive fingerprint {header['fingerprint']} does not match the config fingerprint {fingerprint}"
        )
    return SampleSet(
        T=float(header["T"]),
        dt=float(header["dt"]),
        paths=paths,
        chain_ids=ids,
        bulk_half_width=float(header["bulk_half_width"]),
        chains=header.get("chains", []),
        fingerprint=header["fingerprint"],
        pinned=bool(header.get("pinned", False)),
    )
