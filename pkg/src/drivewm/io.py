"""Text record formats for trajectories and rollout dumps.

Trajectory files (``*.traj``) hold one pose per line after a header::

    #drivewm-trajectory version=1 flavor=quat rate=10 frames=3
    0.0 0.0 0.0 0.0 1.0 0.0 0.0 0.0
    0.1 1.0 0.0 0.0 1.0 0.0 0.0 0.0
    ...

``flavor=matrix`` records are ``t`` followed by the 16 row-major entries of
the 4x4 extrinsic; ``flavor=quat`` records are ``t x y z qw qx qy qz``.
Fields are whitespace separated; blank lines and ``#`` comments after the
header are ignored.

Rollout dumps are JSON lines, one frame per line::

    {"role": "generated", "frame": 0, "kind": "tokens", "shape": [4, 4], "data": [...]}
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InconsistentRate, InvalidPose, InvalidRate, ParseError, PreconditionError
from .trajectory import ORTHO_TOL, PoseSequence

log = logging.getLogger(__name__)

FORMAT_TAG = "#drivewm-trajectory"
FORMAT_VERSION = 1
TRAJ_SUFFIX = ".traj"
FLAVORS = ("matrix", "quat")
QUAT_TOL = 1e-6


def _parse_header(line: str, path: Path) -> dict[str, str]:
    parts = line.split()
    if not parts or parts[0] != FORMAT_TAG:
        raise ParseError(str(path), 1, f"missing header; expected a line starting with {FORMAT_TAG!r}")
    fields = {}
    for tok in parts[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(str(path), 1, f"malformed header field {tok!r}")
        fields[key] = value
    for key in ("version", "flavor", "rate", "frames"):
        if key not in fields:
            raise ParseError(str(path), 1, f"header lacks {key}=")
    if fields["version"] != str(FORMAT_VERSION):
        raise ParseError(str(path), 1, f"unsupported format version {fields['version']!r}")
    if fields["flavor"] not in FLAVORS:
        raise ParseError(str(path), 1, f"unknown flavor {fields['flavor']!r}")
    return fields


def _record_pose(values: list[float], flavor: str, path: Path, lineno: int) -> tuple[np.ndarray, np.ndarray]:
    if flavor == "matrix":
        if len(values) != 16:
            raise ParseError(str(path), lineno, f"matrix record needs 17 fields, got {len(values) + 1}")
        T = np.array(values).reshape(4, 4)
        if np.max(np.abs(T[3] - [0.0, 0.0, 0.0, 1.0])) > ORTHO_TOL:
            raise ParseError(str(path), lineno, "bottom row of extrinsic must be 0 0 0 1")
        R, p = T[:3, :3], T[:3, 3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1) > ORTHO_TOL:
            raise ParseError(str(path), lineno, "rotation block is not a proper orthonormal matrix")
        return R, p
    if len(values) != 7:
        raise ParseError(str(path), lineno, f"quat record needs 8 fields, got {len(values) + 1}")
    p = np.array(values[:3])
    q = np.array(values[3:])
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > QUAT_TOL:
        raise ParseError(str(path), lineno, f"quaternion norm {norm:.9g} is not 1 within {QUAT_TOL}")
    R = Rotation.from_quat(q / norm, scalar_first=True).as_matrix()
    return R, p


def load_trajectory(path: str | Path, flavor: str | None = None) -> PoseSequence:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(str(path), None, f"not a text file: {exc}") from None
    if not lines:
        raise ParseError(str(path), 1, "empty file")
    header = _parse_header(lines[0], path)
    if flavor is not None and header["flavor"] != flavor:
        raise ParseError(str(path), 1, f"flavor {header['flavor']!r} but {flavor!r} was requested")
    try:
        rate = float(header["rate"])
        frames = int(header["frames"])
    except ValueError:
        raise ParseError(str(path), 1, "rate and frames must be numeric") from None

    times, rots, poss = [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError(str(path), lineno, "non-numeric field") from None
        if not np.all(np.isfinite(values)):
            raise ParseError(str(path), lineno, "non-finite value")
        t, rest = values[0], values[1:]
        if times and t <= times[-1]:
            raise ParseError(str(path), lineno, f"timestamp {t} does not increase")
        R, p = _record_pose(rest, header["flavor"], path, lineno)
        times.append(t)
        rots.append(R)
        poss.append(p)
    if len(times) != frames:
        raise ParseError(str(path), None, f"header declares {frames} frames, found {len(times)}")
    try:
        return PoseSequence(np.array(rots), np.array(poss), np.array(times), rate)
    except InvalidRate as exc:
        raise InconsistentRate(f"{path}: {exc}") from None
    except (InvalidPose, PreconditionError) as exc:
        raise ParseError(str(path), None, str(exc)) from None


def trajectory_files(dir_or_file: str | Path) -> list[Path]:
    """Trajectory files under a directory (lexicographic order), or the file itself."""
    p = Path(dir_or_file)
    if p.is_dir():
        return sorted((f for f in p.iterdir() if f.suffix == TRAJ_SUFFIX and f.is_file()),
                      key=lambda f: f.name)
    if p.is_file():
        return [p]
    raise FileNotFoundError(f"no such file or directory: {p}")


def load_trajectories(dir_or_file: str | Path, flavor: str | None = None) -> list[PoseSequence]:
    files = trajectory_files(dir_or_file)
    if not files:
        log.warning("no %s files found in %s", TRAJ_SUFFIX, dir_or_file)
    return [load_trajectory(f, flavor) for f in files]


def format_trajectory(seq: PoseSequence, flavor: str = "matrix") -> str:
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    out = [f"{FORMAT_TAG} version={FORMAT_VERSION} flavor={flavor} "
           f"rate={seq.sample_rate!r} frames={len(seq)}"]
    quats = None
    if flavor == "quat":
        quats = Rotation.from_matrix(seq.rotations).as_quat(scalar_first=True)
    for i in range(len(seq)):
        if flavor == "matrix":
            T = np.eye(4)
            T[:3, :3] = seq.rotations[i]
            T[:3, 3] = seq.positions[i]
            fields = T.ravel()
        else:
            fields = np.concatenate([seq.positions[i], quats[i]])
        out.append(" ".join(repr(float(v)) for v in [seq.timestamps[i], *fields]))
    return "\n".join(out) + "\n"


def save_trajectory(seq: PoseSequence, path: str | Path, flavor: str = "matrix") -> None:
    Path(path).write_text(format_trajectory(seq, flavor), encoding="utf-8")


def save_trajectories(seqs: Iterable[PoseSequence], out_dir: str | Path, flavor: str = "matrix",
                      prefix: str = "traj") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, seq in enumerate(seqs):
        p = out_dir / f"{prefix}_{i:04d}{TRAJ_SUFFIX}"
        save_trajectory(seq, p, flavor)
        paths.append(p)
    return paths


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# -- rollout dumps ------------------------------------------------------------------

class FrameRecord(NamedTuple):
    role: str
    frame: int
    kind: str
    data: np.ndarray


def write_rollout_dump(path: str | Path, records: Iterable[FrameRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            arr = np.asarray(r.data)
            payload = arr.astype(np.int64).ravel().tolist() if r.kind == "tokens" else arr.astype(float).ravel().tolist()
            fh.write(json.dumps({
                "role": r.role,
                "frame": int(r.frame),
                "kind": r.kind,
                "shape": list(arr.shape),
                "data": payload,
            }) + "\n")


def read_rollout_dump(path: str | Path) -> list[FrameRecord]:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            kind = doc["kind"]
            if kind not in ("tokens", "latent"):
                raise ValueError(f"unknown kind {kind!r}")
            dtype = np.int64 if kind == "tokens" else float
            data = np.asarray(doc["data"], dtype=dtype).reshape(doc["shape"])
            records.append(FrameRecord(doc.get("role", "generated"), int(doc["frame"]), kind, data))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(str(path), lineno, f"bad rollout record: {exc}") from None
    return records
