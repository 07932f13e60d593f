"""Result emission: delimited output, JSON aggregates, and figures.

Writers are atomic (tmp file + rename) and floats are encoded with repr, so
re-parsing an emitted CSV reproduces the in-memory values exactly and equal
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def format_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows) -> str:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(x) for x in row])
    os.replace(tmp, path)
    return str(path)


def write_json(path, payload) -> str:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return str(path)


def emit_results(reports, out_dir, figures: bool = True) -> dict:
    """Write one CSV + JSON pair per report object; render figures for the
    report kinds that have one.  Returns {logical name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    survival_payloads = []
    separation_payloads = []
    for report in reports:
        base = os.path.join(out_dir, report.name)
        written[f"{report.name}.csv"] = write_csv(f"{base}.csv", report.csv_header(),
                                                  report.csv_rows())
        payload = report.json_payload()
        written[f"{report.name}.json"] = write_json(f"{base}.json", payload)
        if payload.get("kind") == "survival":
            survival_payloads.append(payload)
        elif payload.get("kind") == "separation":
            separation_payloads.append(payload)
    if figures and survival_payloads:
        path = os.path.join(out_dir, "survival.svg")
        render_survival_figure(survival_payloads, path)
        written["survival.svg"] = path
    if figures and separation_payloads:
        path = os.path.join(out_dir, "value_vs_budget.svg")
        render_value_vs_budget(separation_payloads, path)
        written["value_vs_budget.svg"] = path
    return written


def render_survival_figure(payloads, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for payload in payloads:
        by_policy = {}
        for row in payload["rows"]:
            by_policy.setdefault(row["policy"], []).append(row)
        for policy, rows in sorted(by_policy.items()):
            rows = sorted(rows, key=lambda r: r["h"])
            hs = [r["h"] for r in rows]
            ax.plot(hs, [max(r["p_empirical"], 1e-12) for r in rows],
                    marker="o", label=f"{payload['name']}:{policy}")
        rows0 = sorted(payload["rows"], key=lambda r: r["h"])
        seen = sorted({r["h"] for r in rows0})
        caps = {r["h"]: r["cap"] for r in rows0}
        ax.plot(seen, [caps[h] for h in seen], linestyle="--", color="black",
                label=f"(3g)^(h-1), g={payload['gamma']:g}")
    ax.set_yscale("log")
    ax.set_xlabel("level h")
    ax.set_ylabel("Pr[s_h != terminal]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def render_value_vs_budget(payloads, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    by_learner = {}
    for payload in payloads:
        agg = payload["aggregates"]
        by_learner.setdefault(payload["learner"], []).append(
            (payload["budget"], agg["mean_value_gap"]))
    for learner, pts in sorted(by_learner.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=learner)
    ax.set_xscale("log")
    ax.set_xlabel("budget (episodes or queries)")
    ax.set_ylabel("mean value gap vs V*")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)
