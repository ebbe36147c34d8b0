"""File formats: Middlebury .flo flow fields, plain matrix CSVs, confidence
grid CSVs, and simulation trace CSVs."""

import csv
import os
from pathlib import Path

import numpy as np

from .detection import ConfidenceGrid

__all__ = [
    "FLO_MAGIC",
    "read_flo",
    "write_flo",
    "flow_magnitude",
    "read_matrix_csv",
    "write_matrix_csv",
    "load_flow_map",
    "save_grid_csv",
    "load_grid_csv",
    "load_trace",
]

FLO_MAGIC = np.float32(202021.25)


def read_flo(path):
    """Read a .flo file into an (h, w, 2) float32 array of (u, v) vectors."""
    with open(path, "rb") as f:
        magic = np.frombuffer(f.read(4), dtype="<f4")
        if magic.size != 1 or magic[0] != FLO_MAGIC:
            raise ValueError(f"{path}: not a .flo file (bad magic)")
        dims = np.frombuffer(f.read(8), dtype="<i4")
        if dims.size != 2 or dims[0] < 1 or dims[1] < 1:
            raise ValueError(f"{path}: truncated or invalid .flo header")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(8 * w * h), dtype="<f4")
        if data.size != 2 * w * h:
            raise ValueError(f"{path}: truncated .flo payload")
        return data.reshape(h, w, 2).astype(np.float32)


def write_flo(path, flow):
    """Write an (h, w, 2) array as a .flo file (little-endian)."""
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must have shape (h, w, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC.tobytes())
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(flow).tobytes())


def flow_magnitude(flow_uv):
    """Per-pixel magnitude sqrt(u^2 + v^2) of a (h, w, 2) flow field."""
    flow_uv = np.asarray(flow_uv, dtype=np.float64)
    return np.hypot(flow_uv[..., 0], flow_uv[..., 1])


def read_matrix_csv(path):
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{path}: empty matrix")
    return arr


def write_matrix_csv(path, arr):
    np.savetxt(path, np.asarray(arr), delimiter=",", fmt="%.17g")


def load_flow_map(path):
    """Load a flow map from a .flo file (magnitude of (u, v)) or a matrix CSV."""
    if str(path).endswith(".flo"):
        return flow_magnitude(read_flo(path))
    return read_matrix_csv(path)


GRID_HEADER = ["i", "j", "k", "conf", "cx", "cy", "w", "h"]


def save_grid_csv(path, grid):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(GRID_HEADER)
        rows, cols, k = grid.shape
        for i in range(rows):
            for j in range(cols):
                for b in range(k):
                    writer.writerow(
                        [i, j, b, f"{grid.conf[i, j, b]:.17g}"]
                        + [f"{v:.17g}" for v in grid.boxes[i, j, b]]
                    )


def load_grid_csv(path):
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != GRID_HEADER:
            raise ValueError(f"{path}: expected header {GRID_HEADER}, got {reader.fieldnames}")
        for row in reader:
            entries.append(
                (
                    int(row["i"]),
                    int(row["j"]),
                    int(row["k"]),
                    float(row["conf"]),
                    (float(row["cx"]), float(row["cy"]), float(row["w"]), float(row["h"])),
                )
            )
    if not entries:
        raise ValueError(f"{path}: no grid entries")
    rows = max(e[0] for e in entries) + 1
    cols = max(e[1] for e in entries) + 1
    k = max(e[2] for e in entries) + 1
    conf = np.zeros((rows, cols, k))
    boxes = np.zeros((rows, cols, k, 4))
    for i, j, b, c, box in entries:
        conf[i, j, b] = c
        boxes[i, j, b] = box
    return ConfidenceGrid(conf, boxes)


TRACE_HEADER = ["t", "regime", "num_objects", "flow_file", "conf_file"]


def load_trace(path):
    """Load a replay trace: per-step regime label, object count, and paths to
    a flow map and a confidence grid (relative to the trace file).

    Returns FrameObservations with empty ground truth (external traces carry
    detections, not labels).
    """
    from .sim import FrameObservation  # deferred: sim imports this module's peers

    base = Path(os.path.dirname(os.path.abspath(path)))
    frames = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {TRACE_HEADER}, got {reader.fieldnames}")
        for row in reader:
            flow = load_flow_map(base / row["flow_file"])
            grid = load_grid_csv(base / row["conf_file"])
            frames.append(
                FrameObservation(
                    t=int(row["t"]),
                    regime=row["regime"],
                    truth_boxes=[],
                    motions=[],
                    flow=flow,
                    grid=grid,
                    declared_objects=int(row["num_objects"]),
                )
            )
    return frames
