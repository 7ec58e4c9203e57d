"""Channel dataset files.

One record per channel: id, distance_m, then 15 [gain, delay, aoa, eoa]
quadruples. Two equivalent on-disk forms: CSV with a fixed header row, and a
JSON array of objects. Floats are written with repr so that write -> read ->
write is byte-identical.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .channel import MPC_WIDTH, N_MPC, ChannelRealization, Mpc, sort_mpcs


class DatasetFormatError(ValueError):
    """Malformed dataset file (wrong columns, bad counts, unparsable values)."""


CSV_HEADER = ["id", "distance_m"] + [
    f"{name}_{l}" for l in range(N_MPC) for name in ("gain_db", "delay_ns", "aoa_deg", "eoa_deg")
]


def _channel_row(ch: ChannelRealization) -> list[str]:
    row = [ch.id, repr(float(ch.distance_m))]
    for m in ch.mpcs:
        row += [repr(float(m.gain_db)), repr(float(m.delay_ns)),
                repr(float(m.aoa_deg)), repr(float(m.eoa_deg))]
    return row


def write_csv(channels, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for ch in channels:
            w.writerow(_channel_row(ch))


def read_csv(path) -> list[ChannelRealization]:
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetFormatError(f"{path}: empty dataset file")
    if rows[0] != CSV_HEADER:
        raise DatasetFormatError(
            f"{path}: bad header (expected {len(CSV_HEADER)} fixed columns, "
            f"got {len(rows[0])})"
        )
    channels = []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise DatasetFormatError(
                f"{path}:{k}: expected {len(CSV_HEADER)} columns, got {len(row)}"
            )
        try:
            distance = float(row[1])
            vals = [float(x) for x in row[2:]]
        except ValueError as e:
            raise DatasetFormatError(f"{path}:{k}: {e}") from e
        mpcs = [Mpc(*vals[4 * i : 4 * i + 4]) for i in range(N_MPC)]
        channels.append(ChannelRealization(sort_mpcs(mpcs), distance, row[0]))
    return channels


def write_json(channels, path) -> None:
    records = [
        {
            "id": ch.id,
            "distance_m": ch.distance_m,
            "mpcs": [[m.gain_db, m.delay_ns, m.aoa_deg, m.eoa_deg] for m in ch.mpcs],
        }
        for ch in channels
    ]
    with open(path, "w") as f:
        json.dump(records, f, indent=1)
        f.write("\n")


def read_json(path) -> list[ChannelRealization]:
    path = Path(path)
    with open(path) as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise DatasetFormatError(f"{path}: expected a top-level JSON array")
    channels = []
    for k, rec in enumerate(records):
        try:
            quads = rec["mpcs"]
            distance = rec["distance_m"]
            cid = rec["id"]
        except (TypeError, KeyError) as e:
            raise DatasetFormatError(f"{path}: record {k} missing field {e}") from e
        if len(quads) != N_MPC or any(len(q) != MPC_WIDTH for q in quads):
            raise DatasetFormatError(
                f"{path}: record {k} must carry {N_MPC} quadruples of {MPC_WIDTH} values"
            )
        mpcs = [Mpc(*(float(x) for x in q)) for q in quads]
        channels.append(ChannelRealization(sort_mpcs(mpcs), float(distance), str(cid)))
    return channels


def write_dataset(channels, path) -> None:
    """Dispatch on extension: .csv or .json."""
    path = Path(path)
    if path.suffix == ".csv":
        write_csv(channels, path)
    elif path.suffix == ".json":
        write_json(channels, path)
    else:
        raise DatasetFormatError(f"unsupported dataset extension: {path.suffix}")


def read_dataset(path) -> list[ChannelRealization]:
    path = Path(path)
    if path.suffix == ".csv":
        return read_csv(path)
    if path.suffix == ".json":
        return read_json(path)
    raise DatasetFormatError(f"unsupported dataset extension: {path.suffix}")
