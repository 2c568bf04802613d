"""Error metrics, time-block cross-validation and the architecture x
representation benchmark matrix.

The headline metric is the combined error: the mean of the Euclidean wrist
and elbow position errors in the shoulder-relative frame. Cross-validation
folds are contiguous time blocks so that no recurrent input window ever
spans a fold boundary; a per-session split mode is available for
multi-session data. The benchmark trains every (architecture, codec) cell
per fold, pools the test errors, and exports summary and histogram CSVs.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import codecs
from .calibration import relative_arm_rotations
from .errors import AggregationError, SplitError
from .frames import (
    calibrate_from_frames,
    features_matrix,
    merge_nearest,
    sequence_stack,
    write_csv,
)
from .network import Hyper, ModelSpec, train
from .rotations import forward_kinematics

HISTOGRAM_BIN_M = 0.01
HISTOGRAM_MAX_M = 0.30

BENCH_CELLS = tuple(
    (arch, codec)
    for arch in ("feedforward", "recurrent")
    for codec in ("polar", "xyz", "sixd", "quat")
)


@dataclass(frozen=True)
class ErrorRecord:
    """Euclidean wrist/elbow errors in meters; combined is their mean."""

    wrist_err: float
    elbow_err: float
    combined: float

    def __post_init__(self):
        if self.wrist_err < 0.0 or self.elbow_err < 0.0:
            raise AggregationError("errors must be non-negative")


def error_record(wrist_err, elbow_err):
    return ErrorRecord(
        wrist_err=float(wrist_err),
        elbow_err=float(elbow_err),
        combined=(float(wrist_err) + float(elbow_err)) / 2.0,
    )


def position_errors(pred, truth):
    """Errors of a predicted ArmPose against one ground-truth frame."""
    q_l_r, q_u_r = relative_arm_rotations(truth.q_h, truth.q_l, truth.q_u)
    p_e, p_w = forward_kinematics(q_u_r, q_l_r, truth.l_u, truth.l_l)
    return error_record(
        wrist_err=np.linalg.norm(pred.p_w - p_w),
        elbow_err=np.linalg.norm(pred.p_e - p_e),
    )


def position_errors_arrays(pred_poses, p_e_true, p_w_true):
    """(wrist_errs, elbow_errs) for a PoseArrays batch."""
    wrist = np.linalg.norm(pred_poses.p_w - p_w_true, axis=1)
    elbow = np.linalg.norm(pred_poses.p_e - p_e_true, axis=1)
    return wrist, elbow


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    rmse: float
    std: float
    n: int
    std_defined: bool = True

    def to_dict(self):
        return {
            "mean": self.mean, "median": self.median, "rmse": self.rmse,
            "std": self.std, "n": self.n, "std_defined": self.std_defined,
        }


def aggregate_metrics(records, field="combined"):
    """Mean/median/RMSE/std of one error field over many records.

    Accepts ErrorRecord lists or a plain value array. The spread of a single
    record is undefined under the n-1 convention; it is reported as 0 with
    std_defined=False.
    """
    if isinstance(records, np.ndarray):
        values = records.astype(float)
    else:
        records = list(records)
        if records and isinstance(records[0], ErrorRecord):
            values = np.array([getattr(r, _field_attr(field)) for r in records])
        else:
            values = np.asarray(records, dtype=float)
    if values.size == 0:
        raise AggregationError("cannot aggregate zero records")
    std_defined = values.size > 1
    return MetricSummary(
        mean=float(values.mean()),
        median=float(np.median(values)),
        rmse=float(np.sqrt(np.mean(values**2))),
        std=float(values.std(ddof=1)) if std_defined else 0.0,
        n=int(values.size),
        std_defined=std_defined,
    )


def _field_attr(field):
    attr = {"wrist": "wrist_err", "elbow": "elbow_err", "combined": "combined"}.get(field)
    if attr is None:
        raise AggregationError(f"unknown error field {field!r}")
    return attr


def kfold_split(n, k=10, seed=0, mode="time", session_ids=None):
    """k (train, test) index partitions.

    `time` mode cuts contiguous index blocks (the dataset is time-ordered),
    preventing leakage between overlapping sequence windows. `session` mode
    assigns whole sessions to folds and needs at least k distinct sessions.
    The seed is kept for signature stability; both modes are deterministic.
    """
    n = int(n)
    if n < k:
        raise SplitError(f"cannot split {n} samples into {k} folds")
    if k < 2:
        raise SplitError("need at least 2 folds")
    if mode == "time":
        bounds = [round(i * n / k) for i in range(k + 1)]
        all_idx = np.arange(n)
        return [
            (
                np.concatenate([all_idx[: bounds[i]], all_idx[bounds[i + 1] :]]),
                all_idx[bounds[i] : bounds[i + 1]],
            )
            for i in range(k)
        ]
    if mode == "session":
        if session_ids is None:
            raise SplitError("session mode needs session_ids")
        session_ids = np.asarray(session_ids)
        unique = list(dict.fromkeys(session_ids.tolist()))
        if len(unique) < k:
            raise SplitError(f"{len(unique)} sessions cannot fill {k} folds")
        groups = [unique[round(i * len(unique) / k) : round((i + 1) * len(unique) / k)]
                  for i in range(k)]
        all_idx = np.arange(n)
        folds = []
        for g in groups:
            test_mask = np.isin(session_ids, g)
            folds.append((all_idx[~test_mask], all_idx[test_mask]))
        return folds
    raise SplitError(f"unknown split mode {mode!r}")


@dataclass(frozen=True, eq=False)
class AssembledDataset:
    """Calibrated features plus aligned ground truth for many sessions."""

    features: np.ndarray  # (n, 16)
    times_ms: np.ndarray  # (n,)
    session_ids: np.ndarray  # (n,)
    q_u_r: np.ndarray  # (n, 4) hip-relative upper arm rotations
    q_l_r: np.ndarray  # (n, 4)
    l_u: np.ndarray  # (n,)
    l_l: np.ndarray  # (n,)
    p_e: np.ndarray  # (n, 3) ground-truth elbow positions
    p_w: np.ndarray  # (n, 3)

    def __len__(self):
        return self.features.shape[0]

    def targets(self, codec):
        return codecs.encode_targets(codec, self.q_u_r, self.q_l_r, self.l_u, self.l_l)


def assemble_sessions(sessions, cal_window_s=3.0, tol_ms=25.0, skip_calibration=True):
    """Merge, calibrate and featurize a list of (sensors, truths) sessions."""
    feats, times, sids = [], [], []
    qur, qlr, lus, lls = [], [], [], []
    for sid, (sensors, truths) in enumerate(sessions):
        state = calibrate_from_frames(sensors, window_s=cal_window_s)
        pairs = merge_nearest(sensors, truths, tol_ms=tol_ms)
        if skip_calibration:
            cutoff = 2.0 * cal_window_s * 1000.0
            pairs = [p for p in pairs if p.sensor.t >= cutoff]
        if not pairs:
            continue
        feats.append(features_matrix(pairs, state))
        times.append(np.array([p.sensor.t for p in pairs]))
        sids.append(np.full(len(pairs), sid))
        q_h = np.stack([p.truth.q_h for p in pairs])
        q_l = np.stack([p.truth.q_l for p in pairs])
        q_u = np.stack([p.truth.q_u for p in pairs])
        rel_l, rel_u = relative_arm_rotations(q_h, q_l, q_u)
        qur.append(rel_u)
        qlr.append(rel_l)
        lus.append(np.array([p.truth.l_u for p in pairs]))
        lls.append(np.array([p.truth.l_l for p in pairs]))
    if not feats:
        raise AggregationError("no usable samples after merging/calibration")
    q_u_r = np.concatenate(qur)
    q_l_r = np.concatenate(qlr)
    l_u = np.concatenate(lus)
    l_l = np.concatenate(lls)
    p_e, p_w = forward_kinematics(q_u_r, q_l_r, l_u, l_l)
    return AssembledDataset(
        features=np.concatenate(feats),
        times_ms=np.concatenate(times),
        session_ids=np.concatenate(sids),
        q_u_r=q_u_r,
        q_l_r=q_l_r,
        l_u=l_u,
        l_l=l_l,
        p_e=p_e,
        p_w=p_w,
    )


def synth_benchmark_dataset(n_samples, seed=0, sessions=4, **emu_kw):
    """Emulated multi-session dataset with roughly n_samples usable rows."""
    from .emulator import EmuConfig, synth_session

    sessions = max(1, sessions)
    cal_s = emu_kw.pop("cal_window_s", 3.0)
    rate = emu_kw.pop("sensor_rate_hz", 50.0)
    per_session = n_samples / sessions
    duration = per_session / rate + 2.0 * cal_s + 1.0
    data = []
    for s in range(sessions):
        cfg = EmuConfig(
            duration_s=duration, sensor_rate_hz=rate, cal_window_s=cal_s,
            seed=seed * 1000 + s, **emu_kw,
        )
        data.append(synth_session(cfg))
    return assemble_sessions(data, cal_window_s=cal_s)


def contiguous_runs(indices, session_ids):
    """Split sorted indices into runs that are contiguous and single-session."""
    indices = np.asarray(indices)
    if indices.size == 0:
        return []
    breaks = np.flatnonzero(
        (np.diff(indices) != 1)
        | (session_ids[indices[1:]] != session_ids[indices[:-1]])
    )
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks + 1, [indices.size]])
    return [indices[a:b] for a, b in zip(starts, ends)]


def windows_for_indices(data, indices):
    """Recurrent windows fully inside the given index set.

    Returns (X (m, 6, 17), row_idx (m,)) where row_idx marks the window's
    final frame, i.e. the prediction target row.
    """
    xs, rows = [], []
    for run in contiguous_runs(indices, data.session_ids):
        if run.size < 6:
            continue
        w = sequence_stack(data.features[run], data.times_ms[run])
        xs.append(w)
        rows.append(run[5:])
    if not xs:
        return np.zeros((0, 6, 17)), np.zeros(0, dtype=int)
    return np.concatenate(xs), np.concatenate(rows)


def _cell_inputs(data, arch, indices, targets):
    if arch == "feedforward":
        return data.features[indices], targets[indices], indices
    X, rows = windows_for_indices(data, indices)
    return X, targets[rows], rows


def _val_split(X, Y, fraction=0.1):
    n = len(X)
    n_val = max(1, int(round(n * fraction)))
    n_train = max(1, n - n_val)
    return (X[:n_train], Y[:n_train]), (X[n_train:], Y[n_train:])


def evaluate_model(model, data, indices=None, chunk=4096):
    """Pooled wrist/elbow/combined summaries of one model on a dataset."""
    if indices is None:
        indices = np.arange(len(data))
    targets = data.targets(model.spec.codec)
    X, _, rows = _cell_inputs(data, model.spec.arch, indices, targets)
    wrist, elbow = _prediction_errors(model, data, X, rows, chunk=chunk)
    combined = 0.5 * (wrist + elbow)
    return {
        "wrist": aggregate_metrics(wrist),
        "elbow": aggregate_metrics(elbow),
        "combined": aggregate_metrics(combined),
    }


def _prediction_errors(model, data, X, rows, chunk=4096):
    wrist = np.empty(len(rows))
    elbow = np.empty(len(rows))
    for start in range(0, len(rows), chunk):
        sl = slice(start, start + chunk)
        raw = model.predict(X[sl])
        poses = codecs.decode_batch(
            model.spec.codec, np.asarray(raw, dtype=np.float64),
            data.l_u[rows[sl]], data.l_l[rows[sl]],
        )
        w, e = position_errors_arrays(poses, data.p_e[rows[sl]], data.p_w[rows[sl]])
        wrist[sl] = w
        elbow[sl] = e
    return wrist, elbow


@dataclass
class CellResult:
    arch: str
    codec: str
    wrist: MetricSummary | None = None
    elbow: MetricSummary | None = None
    combined: MetricSummary | None = None
    fold_combined_means: list = None
    fold_wrist_stds: list = None
    error: str | None = None

    def to_dict(self):
        return {
            "arch": self.arch,
            "codec": self.codec,
            "wrist": None if self.wrist is None else self.wrist.to_dict(),
            "elbow": None if self.elbow is None else self.elbow.to_dict(),
            "combined": None if self.combined is None else self.combined.to_dict(),
            "fold_combined_means": self.fold_combined_means,
            "fold_wrist_stds": self.fold_wrist_stds,
            "error": self.error,
        }


@dataclass
class BenchResult:
    cells: list
    k: int
    seed: int

    def cell(self, arch, codec):
        for c in self.cells:
            if c.arch == arch and c.codec == codec:
                return c
        raise KeyError((arch, codec))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {"k": self.k, "seed": self.seed,
                 "cells": [c.to_dict() for c in self.cells]},
                fh, indent=2,
            )
            fh.write("\n")

    def to_csv(self, path):
        header = ["arch", "codec"]
        for metric in ("wrist", "elbow", "combined"):
            for stat in ("mean", "median", "rmse", "std"):
                header.append(f"{metric}_{stat}")
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for c in self.cells:
                row = [c.arch, c.codec]
                for summary in (c.wrist, c.elbow, c.combined):
                    if summary is None:
                        row += ["nan"] * 4
                    else:
                        row += [repr(v) for v in
                                (summary.mean, summary.median, summary.rmse, summary.std)]
                fh.write(",".join(row) + "\n")


def wrist_error_histogram(errors):
    """Counts in 1 cm bins from 0 to 30 cm plus one overflow bin."""
    edges = np.arange(0.0, HISTOGRAM_MAX_M + HISTOGRAM_BIN_M / 2, HISTOGRAM_BIN_M)
    counts, _ = np.histogram(errors, bins=np.append(edges, np.inf))
    lows = edges
    highs = np.append(edges[1:], np.inf)
    return lows, highs, counts


def _write_histogram(path, errors):
    lows, highs, counts = wrist_error_histogram(errors)
    write_csv(path, ("bin_lo_m", "bin_hi_m", "count"),
              ([lo, hi, float(c)] for lo, hi, c in zip(lows, highs, counts)))


def bench_matrix(data, cells=BENCH_CELLS, k=10, hyper=Hyper(), seed=0,
                 out_dir=None, width=128, dropout=0.2, fold_limit=None,
                 split_mode="time", progress=None):
    """Cross-validated benchmark over (architecture, codec) cells.

    Per cell and fold: train on the fold's train block (with the last 10%
    by time held out for early stopping), predict the test block, pool the
    errors. A training failure marks the cell and the matrix moves on.
    `fold_limit` runs only the first folds of each cell (the CI smoke uses
    1); summaries are then computed over those folds' pooled test errors.
    """
    from .errors import TrainingDivergedError

    folds = kfold_split(len(data), k=k, seed=seed, mode=split_mode,
                        session_ids=data.session_ids)
    if fold_limit is not None:
        folds = folds[:fold_limit]
    results = []
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
    for ci, (arch, codec) in enumerate(cells):
        targets = data.targets(codec)
        cell = CellResult(arch=arch, codec=codec, fold_combined_means=[],
                          fold_wrist_stds=[])
        wrist_all, elbow_all = [], []
        try:
            for fi, (train_idx, test_idx) in enumerate(folds):
                if progress is not None:
                    progress(f"{arch}/{codec} fold {fi + 1}/{len(folds)}")
                spec = ModelSpec(arch=arch, codec=codec, width=width, dropout=dropout)
                X_tr, Y_tr, _ = _cell_inputs(data, arch, train_idx, targets)
                X_te, _, rows_te = _cell_inputs(data, arch, test_idx, targets)
                if len(X_te) == 0:
                    continue
                train_xy, val_xy = _val_split(X_tr, Y_tr)
                fold_seed = int(
                    np.random.SeedSequence((seed, ci, fi)).generate_state(1)[0]
                )
                hp = Hyper(epochs=hyper.epochs, lr=hyper.lr, batch=hyper.batch,
                           patience=hyper.patience, seed=fold_seed, dtype=hyper.dtype)
                model, _ = train(spec, train_xy, val_xy, hp)
                wrist, elbow = _prediction_errors(model, data, X_te, rows_te)
                wrist_all.append(wrist)
                elbow_all.append(elbow)
                cell.fold_combined_means.append(float(np.mean(0.5 * (wrist + elbow))))
                cell.fold_wrist_stds.append(float(np.std(wrist, ddof=1)))
                if out_dir is not None:
                    _write_histogram(
                        f"{out_dir}/hist_{arch}_{codec}_fold{fi}.csv", wrist
                    )
        except TrainingDivergedError as exc:
            cell.error = str(exc)
            results.append(cell)
            continue
        if wrist_all:
            wrist = np.concatenate(wrist_all)
            elbow = np.concatenate(elbow_all)
            cell.wrist = aggregate_metrics(wrist)
            cell.elbow = aggregate_metrics(elbow)
            cell.combined = aggregate_metrics(0.5 * (wrist + elbow))
        results.append(cell)
    return BenchResult(cells=results, k=k, seed=seed)
