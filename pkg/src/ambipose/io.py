"""On-disk formats: checkpoints, loss logs, evaluation reports, sample files
and KDE plots.

Checkpoints are JSON documents with every float written as a hexadecimal
literal (``float.hex``) so a reload is bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import ParamStore
from .cvae import ModelSpec, spec_from_params
from .errors import ArchitectureMismatch, ParseError

CHECKPOINT_FORMAT = 1


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def header_line(meta):
    """One comment line carrying the producing config and seeds."""
    return "# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------- checkpoint


def checkpoint_document(params: ParamStore, train_config, iteration, seeds, run_config=None):
    spec = spec_from_params(params)
    return {
        "format_version": CHECKPOINT_FORMAT,
        "architecture": {
            "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in spec.__dict__.items()},
            "layers": {k: list(v) for k, v in params.shapes().items()},
        },
        "dtype": str(params.dtype),
        "parameters": [
            {
                "name": k,
                "shape": list(v.shape),
                "values": [float(x).hex() for x in v.reshape(-1)],
            }
            for k, v in params.items()
        ],
        "train_config": train_config,
        "iteration": int(iteration),
        "seeds": seeds,
        "run_config": run_config,
    }


def save_checkpoint(path, params, train_config, iteration, seeds, run_config=None):
    doc = checkpoint_document(params, train_config, iteration, seeds, run_config)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_dumps(doc))


def load_checkpoint(path, expected_spec: ModelSpec = None):
    """Parameters and the full checkpoint document.

    Raises ArchitectureMismatch if the stored layer shapes disagree with each
    other or with ``expected_spec``.
    """
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    dtype = np.dtype(doc["dtype"])
    params = ParamStore()
    for entry in doc["parameters"]:
        values = np.array([float.fromhex(x) for x in entry["values"]], dtype=dtype)
        if values.size != int(np.prod(entry["shape"])):
            raise ArchitectureMismatch(f"{entry['name']}: value count does not match shape")
        params.add(entry["name"], values.reshape(entry["shape"]))
    layers = {k: tuple(v) for k, v in doc["architecture"]["layers"].items()}
    if layers != dict(params.shapes()):
        raise ArchitectureMismatch("parameter shapes disagree with the stored architecture")
    try:
        spec = spec_from_params(params)
    except (KeyError, ValueError) as exc:
        raise ArchitectureMismatch(f"unrecognized architecture: {exc}") from None
    if expected_spec is not None and spec != expected_spec:
        raise ArchitectureMismatch(f"checkpoint architecture {spec} != expected {expected_spec}")
    return params, doc


# ------------------------------------------------------------------ loss log


def format_loss_log(history, meta):
    lines = [header_line(meta), "iteration\tbeta\tkl\treconstruction\ttotal\n"]
    for r in history:
        lines.append(f"{r.iteration}\t{r.beta!r}\t{r.kl!r}\t{r.reconstruction!r}\t{r.total!r}\n")
    return "".join(lines)


def read_table(path):
    """Rows of a tab-separated file; ``#`` comments are skipped, the first
    remaining line is the header."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#") and ln.strip()]
    head = lines[0].split("\t")
    return [dict(zip(head, ln.split("\t"))) for ln in lines[1:]]


# -------------------------------------------------------------------- report


def format_report(rows, aggregate, meta):
    """Per-query recall table with aggregate recall and median errors as footer."""
    out = [header_line(meta), "query\tthreshold\twithin\tsamples\ttp\n"]
    for r in rows:
        out.append(f"{r['query']}\t{r['threshold']}\t{r['within']}\t{r['samples']}\t{int(r['tp'])}\n")
    out.append("# recall\t" + "\t".join(f"{v:.2f}" for v in aggregate["recall"]) + "\n")
    med = aggregate.get("median_errors")
    if med is not None:
        out.append(f"# median_errors\t{med[0]!r}\t{med[1]!r}\n")
    return "".join(out)


def format_mode_table(rows, meta):
    out = [header_line(meta), "query\tmodes\tcovered\tmasses\n"]
    for r in rows:
        masses = ",".join(f"{m:.4f}" for m in r["masses"])
        out.append(f"{r['query']}\t{r['modes']}\t{r['covered']}\t{masses}\n")
    return "".join(out)


def format_curve(curve):
    lines = [f"# bandwidth {curve.bandwidth!r}\n", "x\tdensity\n"]
    lines += [f"{x!r}\t{d!r}\n" for x, d in zip(curve.grid.tolist(), curve.density.tolist())]
    return "".join(lines)


def curve_svg(curve, truth=None, width=640, height=240, label="translation"):
    """Line plot of a density curve with an optional vertical truth marker."""
    pad = 30
    x0, x1 = float(curve.grid[0]), float(curve.grid[-1])
    ymax = float(curve.density.max()) or 1.0
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda y: height - pad - y / ymax * (height - 2 * pad)
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(curve.grid, curve.density))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline fill="none" stroke="teal" stroke-width="1.5" points="{pts}"/>',
        f'<text x="{pad}" y="{height - 8}" font-size="11">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - 8}" font-size="11" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{width / 2}" y="{height - 8}" font-size="11" text-anchor="middle">{label}</text>',
    ]
    if truth is not None:
        parts.append(
            f'<line x1="{sx(truth):.2f}" y1="{pad}" x2="{sx(truth):.2f}" y2="{height - pad}" '
            'stroke="orange" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(obj))
