"""Report bundle for a finished sweep: CSV, SVG plot, markdown summary, sample gallery."""
from __future__ import annotations

import csv
import io
import json
from itertools import islice
from pathlib import Path
from xml.sax.saxutils import escape

from ..ink import codec_read, render_svg
from ..metrics import ENTRY_KEYS

SERIES_COLORS = {
    "m_rr": "#1f77b4", "m_rs": "#aec7e8", "m_sr": "#d62728",
    "m_ss": "#ff9896", "m_br": "#2ca02c", "m_bs": "#98df8a",
}


class ReportError(RuntimeError):
    pass


def load_sweep_report(run_dir) -> dict:
    p = Path(run_dir) / "metrics" / "sweep_report.json"
    if not p.exists():
        raise ReportError(f"incomplete run: {p} not found")
    return json.loads(p.read_text(encoding="utf-8"))


def csv_rows(report: dict) -> list[dict]:
    rows = []
    for e in report["entries"]:
        for seed in report["seeds"]:
            m = e["matrices"][str(seed)]
            for key in ENTRY_KEYS:
                rows.append({"bias": e["bias"], "seed": seed, "train": key[2], "eval": key[3], "cer": m[key]})
    return rows


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["bias", "seed", "train", "eval", "cer"], lineterminator="\n")
    w.writeheader()
    for row in csv_rows(report):
        w.writerow({**row, "bias": f"{row['bias']:g}", "cer": repr(row["cer"])})
    return buf.getvalue()


def render_plot(report: dict, width: int = 640, height: int = 400) -> str:
    """Mean CER of each matrix entry against bias; the grid is laid out evenly on x."""
    entries = report["entries"]
    left, right, top, bottom = 60, 130, 20, 50
    pw, ph = width - left - right, height - top - bottom
    ymax = max(e["mean_matrix"][k] for e in entries for k in ENTRY_KEYS)
    ymax = max(ymax * 1.1, 1e-3)
    n = len(entries)

    def x_at(i):
        return left + (pw * i / (n - 1) if n > 1 else pw / 2)

    def y_at(v):
        return top + ph * (1 - v / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(5):
        v = ymax * k / 4
        y = y_at(v)
        parts.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{v:.3f}</text>')
    for i, e in enumerate(entries):
        x = x_at(i)
        parts.append(f'<text x="{x:.2f}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{e["bias"]:g}</text>')
    parts.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" font-size="12" text-anchor="middle">'
                 'sampling bias</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2:.2f})">CER (mean over seeds)</text>')
    for j, key in enumerate(ENTRY_KEYS):
        color = SERIES_COLORS[key]
        pts = " ".join(f"{x_at(i):.2f},{y_at(e['mean_matrix'][key]):.2f}" for i, e in enumerate(entries))
        dash = ' stroke-dasharray="5,3"' if key.endswith("s") else ""
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = top + 14 + 18 * j
        parts.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 36}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"{dash}/>')
        parts.append(f'<text x="{left + pw + 42}" y="{ly}" font-size="11">{escape(key)}</text>')
    bstar = report["b_star"]
    i_star = [e["bias"] for e in entries].index(bstar)
    parts.append(f'<line x1="{x_at(i_star):.2f}" y1="{top}" x2="{x_at(i_star):.2f}" y2="{top + ph}" '
                 'stroke="gray" stroke-dasharray="2,2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def render_summary(report: dict, gallery_links: dict | None = None) -> str:
    lines = ["# Incubation sweep summary", ""]
    lines.append(f"Seeds: {', '.join(str(s) for s in report['seeds'])}. "
                 f"Bias grid: {', '.join(f'{b:g}' for b in report['biases'])}.")
    lines.append("")
    lines.append(f"Chosen sampling bias b* = {report['b_star']:g} ({report['selection_rule']}).")
    lines.append("")
    lines.append("## Mean CER matrices")
    lines.append("")
    lines.append("| bias | " + " | ".join(ENTRY_KEYS) + " | diagnosis |")
    lines.append("|" + "---|" * (len(ENTRY_KEYS) + 2))
    for e in report["entries"]:
        m = e["mean_matrix"]
        lines.append(f"| {e['bias']:g} | " + " | ".join(_fmt(m[k]) for k in ENTRY_KEYS)
                     + f" | {e['diagnosis']['label']} |")
    lines.append("")
    lines.append("## Diagnosis")
    lines.append("")
    rr = report["mean_m_rr"]
    for e in report["entries"]:
        d = e["diagnosis"]
        m = e["mean_matrix"]
        rel = (m["m_br"] - rr) / rr if rr > 0 else float("nan")
        lines.append(f"- bias {e['bias']:g}: {d['label']}; mixed training changes real-test CER by "
                     f"{rel:+.1%} relative to real-only. Per seed: "
                     + ", ".join(f"{s}={lab}" for s, lab in sorted(e["seed_diagnoses"].items())) + ".")
        for ev in d["evidence"]:
            lines.append(f"  - {ev}")
    exp = report.get("expansion")
    if exp:
        g = exp["mean_gap_cer"]
        lines += ["", "## Corpus expansion", "",
                  f"At bias {exp['bias']:g}, on the {exp['n_gap_slice']} real-test samples that contain an "
                  "excluded bigram (mean CER over seeds):", "",
                  f"- real only: {_fmt(g['r'])}",
                  f"- real + same-corpus synthesis: {_fmt(g['b_same'])}",
                  f"- real + expanded-corpus synthesis: {_fmt(g['b_expanded'])}"]
    amt = report.get("amounts")
    if amt:
        lines += ["", "## Synthetic amount", "", "| synthetic / real | mean m_br |", "|---|---|"]
        for f, v in amt["mean_m_br"].items():
            lines.append(f"| {f} | {_fmt(v)} |")
    if gallery_links:
        lines += ["", "## Gallery", ""]
        for b, links in gallery_links.items():
            lines.append(f"- bias {b}: " + " ".join(f"[{Path(l).stem}]({l})" for l in links))
    return "\n".join(lines) + "\n"


def write_report(run_dir) -> dict:
    """Write report/{cer.csv, cer_vs_bias.svg, summary.md, gallery/...}; returns the paths."""
    root = Path(run_dir)
    report = load_sweep_report(root)
    cfg = json.loads((root / "config.json").read_text(encoding="utf-8"))
    out = root / "report"
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "cer.csv", "plot": out / "cer_vs_bias.svg", "summary": out / "summary.md"}
    paths["csv"].write_text(render_csv(report), encoding="utf-8")
    paths["plot"].write_text(render_plot(report), encoding="utf-8")

    n_gallery = int(cfg.get("sweep", {}).get("gallery", 4))
    seed0 = report["seeds"][0]
    links: dict = {}
    for b in report["biases"]:
        src = root / "data" / f"seed{seed0}" / f"bias{b:g}" / "synth_train.jsonl"
        if not src.exists() or n_gallery <= 0:
            continue
        gdir = out / "gallery" / f"bias{b:g}"
        gdir.mkdir(parents=True, exist_ok=True)
        with open(src, encoding="utf-8") as f:
            samples = list(islice(codec_read(f), n_gallery))
        links[f"{b:g}"] = []
        for s in samples:
            name = f"{s.id}.svg"
            (gdir / name).write_text(render_svg(s), encoding="utf-8")
            links[f"{b:g}"].append(f"gallery/bias{b:g}/{name}")
    paths["summary"].write_text(render_summary(report, links), encoding="utf-8")
    return paths
