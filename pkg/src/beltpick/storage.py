"""On-disk formats: the attempt log, model bundles, and CSV outputs.

The attempt log (magic ``ZRAT``) is append-only: one length-prefixed,
CRC-protected record per pick attempt, feature vector included, so a
model can always be retrained from the file alone.  A partial trailing
record (a crash mid-append) is reported, not fatal; a failed CRC in the
middle of the file is corruption and raises with the byte offset.

A model bundle (magic ``ZRPK``) carries everything scoring needs: the
camera-to-gantry calibration, the feature layout, and the forest.
"""

import csv
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calib import CalibModel
from .features import FeatureConfig
from .forest import ForestModel, forest_from_bytes, forest_to_bytes

ZRAT_MAGIC = b"ZRAT"
ZRAT_VERSION = 1
ZRPK_MAGIC = b"ZRPK"
ZRPK_VERSION = 1

VERDICTS = ("deposited", "slipped", "missed", "multi_grasp")

ATTEMPT_CSV_COLUMNS = (
    "attempt_index", "sim_time_s", "x", "y", "angle_rad", "opening_m",
    "extra_m", "z_m", "score", "model_version", "outcome",
    "verdict_detail",
)

_REC_HEAD = "<qdiBB7dd"   # index, time, version, label, verdict, handle, score


@dataclass
class LoggedAttempt:
    attempt_index: int
    sim_time: float
    model_version: int
    label: int                   # 1 success, 0 failure
    verdict: str
    x: float
    y: float
    angle: float
    opening: float
    extra: float
    z: float
    weight: float
    score: float                 # -1.0 when no model scored it
    features: np.ndarray         # float32


@dataclass
class LogReadResult:
    records: list
    truncated_at: Optional[int]  # byte offset of a partial tail record


def _encode_record(rec: LoggedAttempt) -> bytes:
    feats = np.ascontiguousarray(rec.features, dtype=np.float32)
    head = struct.pack(
        _REC_HEAD, rec.attempt_index, rec.sim_time, rec.model_version,
        rec.label, VERDICTS.index(rec.verdict), rec.x, rec.y, rec.angle,
        rec.opening, rec.extra, rec.z, rec.weight, rec.score)
    payload = head + struct.pack("<I", feats.size) + feats.tobytes()
    return struct.pack("<I", len(payload)) + payload + \
        struct.pack("<I", zlib.crc32(payload))


def _decode_payload(payload: bytes) -> LoggedAttempt:
    vals = struct.unpack_from(_REC_HEAD, payload, 0)
    pos = struct.calcsize(_REC_HEAD)
    (n_feat,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    feats = np.frombuffer(payload, dtype=np.float32, count=n_feat,
                          offset=pos).copy()
    return LoggedAttempt(
        attempt_index=vals[0], sim_time=vals[1], model_version=vals[2],
        label=vals[3], verdict=VERDICTS[vals[4]], x=vals[5], y=vals[6],
        angle=vals[7], opening=vals[8], extra=vals[9], z=vals[10],
        weight=vals[11], score=vals[12], features=feats)


class AttemptLog:
    """Append-only attempt log bound to one file."""

    def __init__(self, path):
        self.path = path
        try:
            with open(path, "xb") as f:
                f.write(ZRAT_MAGIC + struct.pack("<H", ZRAT_VERSION))
        except FileExistsError:
            pass

    def append(self, rec: LoggedAttempt):
        with open(self.path, "ab") as f:
            f.write(_encode_record(rec))


def load_log(path) -> LogReadResult:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ZRAT_MAGIC:
        raise ValueError(f"bad attempt-log magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != ZRAT_VERSION:
        raise ValueError(f"unsupported attempt-log version {version}")
    pos = 6
    records = []
    truncated = None
    size = len(data)
    while pos < size:
        if pos + 4 > size:
            truncated = pos
            break
        (plen,) = struct.unpack_from("<I", data, pos)
        if pos + 4 + plen + 4 > size:
            truncated = pos
            break
        payload = data[pos + 4:pos + 4 + plen]
        (crc,) = struct.unpack_from("<I", data, pos + 4 + plen)
        if zlib.crc32(payload) != crc:
            raise ValueError(
                f"attempt-log CRC mismatch at byte {pos} in {path}")
        records.append(_decode_payload(payload))
        pos += 4 + plen + 4
    return LogReadResult(records, truncated)


# ---------------------------------------------------------------------------
# model bundles


def save_model_bundle(path, calib: CalibModel, feat: FeatureConfig,
                      forest: Optional[ForestModel],
                      model_version: int):
    out = bytearray()
    out += ZRPK_MAGIC
    out += struct.pack("<HI", ZRPK_VERSION, model_version)
    out += struct.pack("<16d", *calib.matrix.ravel())
    out += struct.pack("<d", calib.residual_rmse)
    out += struct.pack("<IIdI", feat.slice_len, feat.slice_wid,
                       feat.sample_step, feat.levels)
    if forest is None:
        out += struct.pack("<B", 0)
    else:
        blob = forest_to_bytes(forest)
        out += struct.pack("<BQ", 1, len(blob))
        out += blob
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_model_bundle(path):
    """Returns (calib, feature_config, forest_or_None, model_version)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ZRPK_MAGIC:
        raise ValueError(f"bad model magic {data[:4]!r}")
    version, model_version = struct.unpack_from("<HI", data, 4)
    if version != ZRPK_VERSION:
        raise ValueError(f"unsupported model version {version}")
    pos = 10
    mat = np.array(struct.unpack_from("<16d", data, pos)).reshape(4, 4)
    pos += 128
    (rmse,) = struct.unpack_from("<d", data, pos)
    pos += 8
    slice_len, slice_wid, step, levels = struct.unpack_from(
        "<IIdI", data, pos)
    pos += struct.calcsize("<IIdI")
    (has_forest,) = struct.unpack_from("<B", data, pos)
    pos += 1
    forest = None
    if has_forest:
        (blob_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        forest = forest_from_bytes(data[pos:pos + blob_len])
    calib = CalibModel(matrix=mat, residual_rmse=rmse)
    feat = FeatureConfig(slice_len=slice_len, slice_wid=slice_wid,
                         sample_step=step, levels=levels)
    return calib, feat, forest, model_version


# ---------------------------------------------------------------------------
# CSV outputs


def _fmt(v):
    return f"{v:.9g}"


def write_attempts_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ATTEMPT_CSV_COLUMNS)
        for r in records:
            w.writerow([
                r.attempt_index, _fmt(r.sim_time), _fmt(r.x), _fmt(r.y),
                _fmt(r.angle), _fmt(r.opening), _fmt(r.extra),
                _fmt(r.z), _fmt(r.score), r.model_version,
                "success" if r.label else "failure", r.verdict,
            ])


def write_blocks_csv(path, records, block=25):
    labels = [r.label for r in records]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block_index", "first_attempt", "last_attempt",
                    "success_fraction"])
        for b in range(len(labels) // block):
            chunk = labels[b * block:(b + 1) * block]
            w.writerow([b, b * block + 1, (b + 1) * block,
                        _fmt(sum(chunk) / block)])


def read_attempts_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return rows
