"""CSV schemas and the reproducibility manifest.

All files are UTF-8 with LF line endings and a header row.  Input series
carry either a ``return`` or a ``price`` column (prices are converted to
log-returns on read) and optionally a leading ``date`` column.  Every run
writes a JSON manifest with the configuration, seeds and calibration
constants needed to reproduce its outputs byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .engine import EstimationTrace
from .model import ReturnSeries, returns_from_prices
from .simulate import SimulatedPath

__all__ = [
    "SCHEMA_VERSION",
    "read_returns_csv",
    "write_path_csv",
    "write_trace_csvs",
    "write_manifest",
    "write_figure_panels",
]

SCHEMA_VERSION = "1"


def read_returns_csv(path) -> ReturnSeries:
    """Read a return series from CSV.

    Expects a header with a ``return`` column or a ``price`` column (but not
    both); an optional ``date`` column is carried as timestamps.  Malformed
    rows are reported with their line number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: missing header row")
        fields = [f.strip().lower() for f in reader.fieldnames]
        has_return = "return" in fields
        has_price = "price" in fields
        if has_return == has_price:
            raise ValueError(f"{path}: need exactly one of a 'return' or 'price' column")
        column = "return" if has_return else "price"
        key = reader.fieldnames[fields.index(column)]
        date_key = reader.fieldnames[fields.index("date")] if "date" in fields else None
        values = []
        dates = []
        for row in reader:
            raw = (row.get(key) or "").strip()
            try:
                values.append(float(raw))
            except ValueError:
                raise ValueError(
                    f"{path}: line {reader.line_num}: cannot parse {column} value {raw!r}"
                ) from None
            if date_key is not None:
                dates.append(row.get(date_key, ""))
    if not values:
        raise ValueError(f"{path}: no data rows")
    if has_price:
        series = returns_from_prices(values)
        stamps = tuple(dates[1:]) if dates else None
        return ReturnSeries(series.values, timestamps=stamps)
    return ReturnSeries(np.asarray(values), timestamps=tuple(dates) if dates else None)


def write_path_csv(path: SimulatedPath, target) -> None:
    """Simulated path schema: index, state, clean, observed, is_outlier."""
    target = Path(target)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "state", "clean", "observed", "is_outlier"])
        clean = path.clean_returns.values
        observed = path.observed_returns.values
        for t in range(path.horizon):
            writer.writerow(
                [
                    t + 1,
                    int(path.states[t]),
                    repr(float(clean[t])),
                    repr(float(observed[t])),
                    int(path.outlier_mask[t]),
                ]
            )


def write_trace_csvs(trace: EstimationTrace, outdir, stem: str = "estimate") -> dict:
    """Write the per-step and per-batch trace tables; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    steps_path = outdir / f"{stem}_steps.csv"
    batches_path = outdir / f"{stem}_batches.csv"

    n = trace.n_states
    with steps_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["index", "observed"]
        header += [f"state_prob_{i}" for i in range(n)]
        header += ["forecast_next", "outlier_score", "outlier_flag"]
        writer.writerow(header)
        scores = trace.outlier_scores
        flags = trace.outlier_flags
        for t in range(trace.n_processed):
            row = [t + 1, repr(float(trace.observations[t]))]
            row += [repr(float(p)) for p in trace.state_probs[t]]
            row.append(repr(float(trace.forecasts[t])))
            row.append("" if scores is None or t >= scores.size else repr(float(scores[t])))
            row.append("" if flags is None or t >= flags.size else int(flags[t]))
            writer.writerow(row)

    with batches_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["batch", "start", "length", "state", "drift", "vol", "frozen", "noether"]
        header += [f"pi_to_{j}" for j in range(n)]
        header += ["breakdown"]
        writer.writerow(header)
        for record in trace.batches:
            for i in range(n):
                row = [
                    record.index,
                    record.start,
                    record.length,
                    i,
                    repr(float(record.drift[i])),
                    repr(float(record.vol[i])),
                    int(record.frozen[i]),
                    repr(float(record.noether[i])),
                ]
                row += [repr(float(record.transition[j, i])) for j in range(n)]
                row.append(int(record.breakdown))
                writer.writerow(row)
    return {"steps": steps_path, "batches": batches_path}


def trace_manifest(trace: EstimationTrace, extra: dict | None = None) -> dict:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "mode": trace.mode,
        "n_states": trace.n_states,
        "batch_len": trace.batch_len,
        "alpha": trace.alpha,
        "seed": trace.seed,
        "reference_sigma": trace.reference_sigma,
        "mad_floor": trace.mad_floor,
        "init_method": trace.init_method,
        "flag_threshold": trace.flag_threshold,
        "breakdown": trace.breakdown,
        "breakdown_index": trace.breakdown_index,
        "n_processed": trace.n_processed,
        "calibrations": [
            record.calibration for record in trace.batches if record.calibration
        ],
        "metadata": trace.metadata,
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(manifest: dict, target) -> None:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def write_figure_panels(
    path: SimulatedPath | None, trace: EstimationTrace, outdir, prefix: str
) -> dict:
    """Plot-ready tables: a returns panel, an estimates panel, a forecast panel.

    The estimates and forecast panels cover exactly the processed prefix of
    the series, so a broken-down classical run truncates at the breakdown.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = {}

    returns_path = outdir / f"{prefix}_returns.csv"
    with returns_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "observed", "is_outlier"])
        if path is not None:
            observed = path.observed_returns.values
            for t in range(path.horizon):
                writer.writerow([t + 1, repr(float(observed[t])), int(path.outlier_mask[t])])
        else:
            for t in range(trace.n_processed):
                writer.writerow([t + 1, repr(float(trace.observations[t])), ""])
    written["returns"] = returns_path

    estimates_path = outdir / f"{prefix}_estimates.csv"
    with estimates_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["batch", "end_index", "state", "drift", "vol"])
        for record in trace.batches:
            if record.breakdown:
                continue
            end = record.start + record.length - 1
            for i in range(trace.n_states):
                writer.writerow(
                    [
                        record.index,
                        end,
                        i,
                        repr(float(record.drift[i])),
                        repr(float(record.vol[i])),
                    ]
                )
    written["estimates"] = estimates_path

    forecast_path = outdir / f"{prefix}_forecast.csv"
    with forecast_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "observed", "forecast_next"])
        for t in range(trace.n_processed):
            writer.writerow(
                [
                    t + 1,
                    repr(float(trace.observations[t])),
                    repr(float(trace.forecasts[t])),
                ]
            )
    written["forecast"] = forecast_path
    return written
