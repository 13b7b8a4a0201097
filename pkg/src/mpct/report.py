"""CSV and JSON writers for trajectories and campaign reports.

Every file starts with the configuration digest and the seed. Floats are
written with ``repr`` so that identical computations give identical bytes.
"""

import csv
import io
import json
import math
import os

from .experiment import TRAJECTORY_COLUMNS
from .validation import log_binomial_tail

SUMMARY_COLUMNS = ("controller", "eta_theta", "eta_c", "eta_p", "beta", "N_s", "r",
                   "phi1_bound", "phi2_bound", "feasible_pct", "failures")
VERIFY_COLUMNS = ("n_verify", "exceed_phi1", "exceed_phi2", "verify_feasible_pct")


def _fmt(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def _json_num(x):
    return x if isinstance(x, int) or (isinstance(x, float) and math.isfinite(x)) else None


def header(kind, cfg_digest, seed, extra=()):
    lines = [f"# mpct {kind}", f"# config_sha256 = {cfg_digest}", f"# seed = {seed}"]
    lines += [f"# {k} = {v}" for k, v in extra]
    return "\n".join(lines) + "\n"


def _csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def trajectory_csv(record, cfg_digest, seed, controller_label, scenario):
    extra = [
        ("controller", controller_label),
        ("y_r1", list(map(float, scenario.y_r1))),
        ("y_r2", list(map(float, scenario.y_r2))),
        ("t_r", scenario.t_r),
        ("phi1", _fmt(float(record.phi1))),
        ("phi2", record.phi2),
        ("failed_step", _fmt(record.failed_step) or "none"),
    ]
    rows = []
    for row in record.trajectory:
        vals = [float(v) for v in row]
        vals[0] = int(vals[0])
        vals[18] = int(vals[18])
        rows.append(vals)
    return header("trajectory", cfg_digest, seed, extra) + _csv(rows, TRAJECTORY_COLUMNS)


def write_trajectory(path, *args):
    _write(path, trajectory_csv(*args))


def summary_rows(controllers, with_verify):
    rows = []
    for i, s in enumerate(controllers):
        c = s.config
        row = [i, c.eta_theta, c.eta_c, c.eta_p,
               c.beta if not isinstance(c.beta, tuple) else "vector",
               s.N_s, s.r, float(s.phi1_bound), int(s.phi2_bound), s.feasible_pct, s.n_failures]
        if with_verify:
            ex = s.exceedance()
            row += [len(s.verify_phi1), ex[0], ex[1], ex[2]]
        rows.append(row)
    return rows


def plan_dict(plan):
    return {"eps": plan.eps, "delta": plan.delta, "r": plan.r, "M": plan.M, "K": plan.K,
            "N_s": plan.N_s, "certified": plan.certified,
            "log_binomial_tail": log_binomial_tail(plan.N_s, plan.eps, plan.r),
            "log_threshold": math.log(plan.delta / (plan.M * plan.K))}


def summary_json(plan, controllers, cfg_digest, seed, complete=True):
    out = {"config_sha256": cfg_digest, "seed": seed, "complete": complete,
           "plan": plan_dict(plan), "controllers": []}
    for i, s in enumerate(controllers):
        c = s.config
        entry = {"index": i, "label": c.label(), "eta_theta": c.eta_theta, "eta_c": c.eta_c,
                 "eta_p": c.eta_p, "beta": list(c.beta) if isinstance(c.beta, tuple) else c.beta,
                 "N_s": s.N_s, "r": s.r, "phi1_bound": _json_num(float(s.phi1_bound)),
                 "phi2_bound": int(s.phi2_bound), "feasible_pct": s.feasible_pct,
                 "failures": s.n_failures}
        if s.verify_phi1:
            ex = s.exceedance()
            entry["verify"] = {"n": len(s.verify_phi1), "exceed_phi1": ex[0],
                               "exceed_phi2": ex[1], "feasible_pct": ex[2]}
        out["controllers"].append(entry)
    return json.dumps(out, indent=2, sort_keys=False) + "\n"


def record_rows(index, summary):
    rows = []
    for e, (f1, f2, fail) in enumerate(zip(summary.phi1, summary.phi2, summary.failed)):
        rows.append([index, "validation", e, float(f1), int(f2), f1 == 0.0, fail])
    for e, (f1, f2) in enumerate(zip(summary.verify_phi1 or (), summary.verify_phi2 or ())):
        rows.append([index, "verification", e, float(f1), int(f2), f1 == 0.0, None])
    return rows


RECORD_COLUMNS = ("controller", "stream", "experiment", "phi1", "phi2", "feasible",
                  "failed_step")


class CampaignWriter:
    """Writes per-controller records as they finish and the final summary."""

    def __init__(self, out_dir, plan, cfg_digest, seed, with_verify):
        self.out_dir = out_dir
        self.plan = plan
        self.digest = cfg_digest
        self.seed = seed
        self.with_verify = with_verify
        self.done = []
        os.makedirs(out_dir, exist_ok=True)
        self.records_path = os.path.join(out_dir, "records.csv")
        _write(self.records_path, header("records", cfg_digest, seed)
               + _csv([], RECORD_COLUMNS))

    def add(self, index, summary):
        self.done.append(summary)
        with open(self.records_path, "a", encoding="utf-8", newline="") as fh:
            fh.write(_csv(record_rows(index, summary), RECORD_COLUMNS).split("\n", 1)[1])

    def _summary_text(self):
        cols = SUMMARY_COLUMNS + (VERIFY_COLUMNS if self.with_verify else ())
        extra = [("certified", str(self.plan.certified).lower()),
                 ("plan", f"eps={self.plan.eps} delta={self.plan.delta} r={self.plan.r} "
                          f"M={self.plan.M} K={self.plan.K} N_s={self.plan.N_s}")]
        return header("summary", self.digest, self.seed, extra) + _csv(
            summary_rows(self.done, self.with_verify), cols)

    def finish(self):
        _write(os.path.join(self.out_dir, "summary.csv"), self._summary_text())
        _write(os.path.join(self.out_dir, "summary.json"),
               summary_json(self.plan, self.done, self.digest, self.seed))
        partial = os.path.join(self.out_dir, "summary.partial.json")
        if os.path.exists(partial):
            os.remove(partial)

    def abort(self):
        _write(os.path.join(self.out_dir, "summary.partial.json"),
               summary_json(self.plan, self.done, self.digest, self.seed, complete=False))


def format_table(controllers, with_verify):
    cols = SUMMARY_COLUMNS + (VERIFY_COLUMNS if with_verify else ())
    rows = [[_fmt(v) if not isinstance(v, float) else f"{v:.6g}" for v in r]
            for r in summary_rows(controllers, with_verify)]
    widths = [max(len(c), *(len(r[i]) for r in rows)) if rows else len(c)
              for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)
