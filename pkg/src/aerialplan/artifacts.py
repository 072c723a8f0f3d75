"""CSV/JSON artifacts exchanged between pipeline stages.

Floats are written with ``repr`` (shortest round-trip form), so reading a file back
reproduces the exact values and re-writing it reproduces the exact bytes.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dynamics_sim import SimTrace
from .topp_ra import SampledTrajectory

PATH_CSV = "path.csv"
TRAJECTORY_CSV = "trajectory.csv"
SIM_TRACE_CSV = "sim_trace.csv"
COMPENSATED_CSV = "compensated.csv"
RESIDUALS_CSV = "residuals.csv"
SIM_TRACE_COMPENSATED_CSV = "sim_trace_compensated.csv"
ERRORS_CSV = "errors.csv"
REPORT_JSON = "report.json"

ERROR_COLUMNS = ("t", "translation_err", "rotation_err", "z_err_uncompensated", "z_err_compensated")


class ArtifactError(Exception):
    exit_code = 2


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    rows = np.asarray(rows, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows.reshape(len(rows), -1):
            w.writerow([_fmt(v) for v in r])


def read_csv(path: Path, expected_header=None) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ArtifactError(f"{path} is empty") from None
        if expected_header is not None and list(header) != list(expected_header):
            raise ArtifactError(f"{path}: unexpected columns {header}")
        try:
            rows = [[float(v) for v in row] for row in reader]
        except ValueError as exc:
            raise ArtifactError(f"{path}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def control_columns(m: int) -> list[str]:
    return ["x", "y", "z", "psi"] + [f"q{i + 1}" for i in range(m)]


def save_path(path: Path, points: np.ndarray) -> None:
    write_csv(path, control_columns(points.shape[1] - 4), points)


def load_path(path: Path) -> np.ndarray:
    header, data = read_csv(path)
    if header[:4] != ["x", "y", "z", "psi"]:
        raise ArtifactError(f"{path}: not a path file")
    return data


def trajectory_columns(m: int) -> list[str]:
    names = control_columns(m)
    return ["t"] + names + [f"d_{n}" for n in names] + [f"dd_{n}" for n in names]


def save_trajectory(path: Path, traj: SampledTrajectory) -> None:
    m = traj.dim - 4
    write_csv(path, trajectory_columns(m), np.column_stack([traj.t, traj.q, traj.dq, traj.ddq]))


def load_trajectory(path: Path, T_s: float) -> SampledTrajectory:
    header, data = read_csv(path)
    if not header or header[0] != "t" or (len(header) - 1) % 3:
        raise ArtifactError(f"{path}: not a trajectory file")
    d = (len(header) - 1) // 3
    if header != trajectory_columns(d - 4):
        raise ArtifactError(f"{path}: unexpected columns {header}")
    return SampledTrajectory(data[:, 0].copy(), data[:, 1:1 + d].copy(),
                             data[:, 1 + d:1 + 2 * d].copy(), data[:, 1 + 2 * d:].copy(), T_s)


def sim_columns(m: int) -> list[str]:
    cols = ["t"]
    cols += [f"{a}_ref" for a in ("x", "y", "z")] + ["x", "y", "z"]
    cols += [f"{a}_ref" for a in ("roll", "pitch", "yaw")] + ["roll", "pitch", "yaw"]
    cols += [f"q{i + 1}_ref" for i in range(m)] + [f"q{i + 1}" for i in range(m)]
    cols += ["vx", "vy", "vz", "wx", "wy", "wz"] + [f"dq{i + 1}" for i in range(m)]
    return cols


def save_sim_trace(path: Path, trace: SimTrace, traj: SampledTrajectory,
                   reference_attitude: np.ndarray) -> None:
    """Planned and simulated columns side by side; ``reference_attitude`` is (n, 2)."""
    m = trace.q.shape[1]
    euler_ref = np.column_stack([reference_attitude, traj.q[:, 3]])
    rows = np.column_stack([trace.t, traj.q[:, :3], trace.p, euler_ref, trace.euler,
                            traj.q[:, 4:], trace.q, trace.v, trace.omega, trace.dq])
    write_csv(path, sim_columns(m), rows)


def load_sim_trace(path: Path) -> SimTrace:
    header, data = read_csv(path)
    if len(header) < 22 or header[0] != "t" or (len(header) - 19) % 3:
        raise ArtifactError(f"{path}: not a simulation trace")
    m = (len(header) - 19) // 3
    if header != sim_columns(m):
        raise ArtifactError(f"{path}: unexpected columns {header}")
    c = 1
    blocks = {}
    for name, width in (("p_ref", 3), ("p", 3), ("e_ref", 3), ("euler", 3), ("q_ref", m),
                        ("q", m), ("v", 3), ("omega", 3), ("dq", m)):
        blocks[name] = data[:, c:c + width].copy()
        c += width
    return SimTrace(data[:, 0].copy(), blocks["p"], blocks["v"], blocks["euler"], blocks["omega"],
                    blocks["q"], blocks["dq"])


def save_errors(path: Path, t, translation, rotation, z_nc, z_c) -> None:
    write_csv(path, ERROR_COLUMNS, np.column_stack([t, translation, rotation, z_nc, z_c]))


def load_errors(path: Path) -> np.ndarray:
    return read_csv(path, ERROR_COLUMNS)[1]


def read_report(out: Path) -> dict:
    p = Path(out) / REPORT_JSON
    if not p.exists():
        return {}
    return json.loads(p.read_text())


def update_report(out: Path, section: str, content: dict) -> dict:
    report = read_report(out)
    report[section] = content
    (Path(out) / REPORT_JSON).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return report
