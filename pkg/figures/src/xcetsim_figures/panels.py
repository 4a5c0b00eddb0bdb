"""Multi-panel population plots from solver trajectory CSVs.

Reads only the CSV files and the run manifest (for the picosecond axis
conversion); it never imports the solver.  Each input CSV becomes one panel
with one curve per selected site population.

CSV schema: header ``t,P_<site>,...,trace_re,trace_im`` with one row per
sample.  The manifest is a JSON-lines file whose records carry ``csv`` and
``time_unit_ps`` fields.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["PanelSpec", "PanelError", "load_trajectory", "render_panels", "main"]


class PanelError(ValueError):
    """Raised for malformed inputs or empty selections."""


@dataclass
class PanelSpec:
    """What to draw: one (csv, label) pair per panel."""

    inputs: list[tuple[Path, str]]
    sites: list[str]
    axis_mode: str = "reduced"   # "reduced" | "ps"
    output: Path = Path("panels.png")
    manifest: Path | None = None
    title: str = ""

    def __post_init__(self):
        if not self.inputs:
            raise PanelError("no input CSVs given")
        if not self.sites:
            raise PanelError("empty site selection")
        if self.axis_mode not in ("reduced", "ps"):
            raise PanelError(f"axis mode must be reduced|ps, got {self.axis_mode!r}")


def load_trajectory(path: Path, sites: list[str]):
    """Columns ``t`` and the requested site populations from one CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file")
        wanted = ["t"] + [f"P_{s}" for s in sites]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise PanelError(f"{path}: missing column {missing[0]!r}")
        idx = [header.index(c) for c in wanted]
        rows = [[float(row[i]) for i in idx] for row in reader]
    if not rows:
        raise PanelError(f"{path}: no samples")
    data = np.asarray(rows)
    return data[:, 0], data[:, 1:]


def _time_scale_ps(spec: PanelSpec) -> float:
    if spec.manifest is None:
        raise PanelError("ps axis requested but no manifest given")
    by_csv = {}
    with open(spec.manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "csv" in rec and "time_unit_ps" in rec:
                by_csv[rec["csv"]] = float(rec["time_unit_ps"])
    scales = set()
    for path, _ in spec.inputs:
        name = Path(path).name
        if name not in by_csv:
            raise PanelError(f"manifest has no record for {name!r}")
        scales.add(by_csv[name])
    if len(scales) != 1:
        raise PanelError(f"inputs disagree on the time unit: {sorted(scales)}")
    return scales.pop()


def render_panels(spec: PanelSpec) -> Path:
    """Draw one panel per input CSV and write the figure."""
    scale = _time_scale_ps(spec) if spec.axis_mode == "ps" else 1.0
    n = len(spec.inputs)
    ncols = 2 if n > 1 else 1
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(5.2 * ncols, 3.4 * nrows),
        sharex=True, sharey=True, squeeze=False,
    )
    for k, (path, label) in enumerate(spec.inputs):
        ax = axes[k // ncols][k % ncols]
        times, pops = load_trajectory(Path(path), spec.sites)
        for j, site in enumerate(spec.sites):
            ax.plot(times * scale, pops[:, j], label=site, linewidth=1.2)
        ax.set_title(label)
        ax.set_ylabel("population")
        ax.set_xlabel("t [ps]" if spec.axis_mode == "ps" else "t [1/w0]")
        ax.legend(loc="upper right", fontsize=8, ncols=2)
        ax.grid(alpha=0.25)
    for k in range(n, nrows * ncols):
        axes[k // ncols][k % ncols].set_visible(False)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if out.suffix == ".svg" else None
    fig.savefig(out, dpi=150, metadata=meta)
    plt.close(fig)
    return out


def build_parser():
    ap = argparse.ArgumentParser(
        prog="xcetsim-figures",
        description="Render per-regime population panels from trajectory CSVs",
    )
    ap.add_argument(
        "--csv", action="append", required=True, metavar="PATH[:LABEL]",
        help="input trajectory CSV, optionally with a panel label",
    )
    ap.add_argument(
        "--sites", required=True,
        help="comma-separated site labels to plot, e.g. e1,e2,e3,e4,c5,c6",
    )
    ap.add_argument("--axis", choices=["reduced", "ps"], default="reduced")
    ap.add_argument("--out", required=True, help="output image path (.png or .svg)")
    ap.add_argument("--manifest", help="manifest.jsonl for the ps conversion")
    ap.add_argument("--title", default="")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    inputs = []
    for item in args.csv:
        if ":" in item and not Path(item).exists():
            path, label = item.rsplit(":", 1)
        else:
            path, label = item, Path(item).stem
        inputs.append((Path(path), label))
    try:
        spec = PanelSpec(
            inputs=inputs,
            sites=[s for s in args.sites.split(",") if s],
            axis_mode=args.axis,
            output=Path(args.out),
            manifest=Path(args.manifest) if args.manifest else None,
            title=args.title,
        )
        out = render_panels(spec)
    except (PanelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
