"""Dataset ingestion and result/state files.

All outputs are plain structured text (key-value header plus CSV payload)
so that shard results can be recombined offline and traces plotted with
anything. Summary numbers use 9 significant digits; the state file uses
17 significant digits, which round-trips IEEE doubles exactly.
"""

import csv

import numpy as np

from . import families, matcalc
from .engine import VariationalState
from .exceptions import ConfigError, MissingColumnError, ParseError
from .model import Dataset

SUMMARY_FMT = "%.9g"
STATE_FMT = "%.17g"


def _split_cols(spec):
    return [c.strip() for c in spec.split(",") if c.strip()] if spec else []


def load_csv(path, family, group_col, fixed_cols, random_cols,
             response_col="y", trials_col=None, intercept="both"):
    """Read a long-format CSV (one row per observation) into a Dataset.

    Rows are grouped stably by first appearance of the group key; groups
    need not be contiguous. An all-ones intercept column is injected into
    X and/or Z according to `intercept` in {"x", "z", "both", "none"}.
    """
    fam = families.by_name(family) if isinstance(family, str) else family
    if intercept not in ("x", "z", "both", "none"):
        raise ConfigError(f"invalid intercept mode {intercept!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [group_col, response_col] + list(fixed_cols) + list(random_cols)
        if trials_col:
            needed.append(trials_col)
        for col in needed:
            if col not in header:
                raise MissingColumnError(col)
        groups = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            try:
                key = row[group_col]
                y = float(row[response_col])
                xs = [float(row[c]) for c in fixed_cols]
                zs = [float(row[c]) for c in random_cols]
                m = float(row[trials_col]) if trials_col else 1.0
            except (TypeError, ValueError) as err:
                raise ParseError(lineno, str(err)) from None
            if key not in groups:
                groups[key] = {"y": [], "X": [], "Z": [], "m": [], "lines": []}
                order.append(key)
            g = groups[key]
            g["y"].append(y)
            g["X"].append(xs)
            g["Z"].append(zs)
            g["m"].append(m)
            g["lines"].append(lineno)
    if not order:
        raise ParseError(1, "no data rows")

    add_x = intercept in ("x", "both")
    add_z = intercept in ("z", "both")
    y_list, X_list, Z_list, m_list = [], [], [], []
    for key in order:
        g = groups[key]
        X = np.asarray(g["X"], dtype=float)
        Z = np.asarray(g["Z"], dtype=float)
        ones = np.ones((X.shape[0], 1))
        if add_x:
            X = np.hstack([ones, X]) if X.size else ones
        if add_z:
            Z = np.hstack([ones, Z]) if Z.size else ones
        if X.shape[1] == 0 or Z.shape[1] == 0:
            raise ConfigError("empty design: need columns or an intercept")
        y_list.append(g["y"])
        X_list.append(X)
        Z_list.append(Z)
        m_list.append(g["m"])
        # per-row response validation with real line numbers
        fam.validate(np.asarray(g["y"]), np.asarray(g["m"]), lines=g["lines"])
    x_names = (["intercept"] if add_x else []) + list(fixed_cols)
    z_names = (["intercept"] if add_z else []) + list(random_cols)
    return Dataset.from_lists(fam, y_list, X_list, Z_list, trials_list=m_list,
                              x_names=x_names, z_names=z_names, group_labels=order)


# ---------------------------------------------------------------------------
# result files


def write_summary(path, summary, method, n_iter, wall_time, elbo):
    """Per-parameter mean/sd plus run metadata, in a stable key order."""
    lines = ["key,value",
             f"method,{method}",
             f"iterations,{n_iter}",
             f"wall_time_s,{SUMMARY_FMT % wall_time}",
             f"elbo,{SUMMARY_FMT % elbo}",
             "parameter,mean,sd"]
    for name, m, s in zip(summary.global_names, summary.global_mean, summary.global_sd):
        lines.append(f"{name},{SUMMARY_FMT % m},{SUMMARY_FMT % s}")
    for name, m, s in zip(summary.scale_names, summary.scale_mean, summary.scale_sd):
        lines.append(f"{name},{SUMMARY_FMT % m},{SUMMARY_FMT % s}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace(path, window_means, window):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("window,iteration,mean_elbo\n")
        for k, m in enumerate(window_means, start=1):
            fh.write(f"{k},{k * window},{SUMMARY_FMT % m}\n")


def write_subject_diagnostics(path, data, summary):
    cols = [f"btilde_{k}" for k in range(data.r)]
    header = (["subject"] + [f"{c}_mean" for c in cols] + [f"{c}_sd" for c in cols]
              + [f"b_{k}_mean" for k in range(data.r)] + [f"b_{k}_sd" for k in range(data.r)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(data.n):
            vals = (list(summary.btilde_mean[i]) + list(summary.btilde_sd[i])
                    + list(summary.b_mean[i]) + list(summary.b_sd[i]))
            fh.write(",".join([data.group_labels[i]] + [SUMMARY_FMT % v for v in vals]) + "\n")


def write_state(path, state, method, family_name, seed):
    """Serialize (mu, C*) with a dimension header; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("format,glmmvb-state,1\n")
        fh.write(f"n,{state.n}\nr,{state.r}\ng,{state.g}\n")
        fh.write(f"method,{method}\nfamily,{family_name}\nseed,{seed}\n")
        fh.write("section,mu\n")
        fh.write(",".join(STATE_FMT % v for v in state.mu) + "\n")
        fh.write("section,cstar_local\n")
        for i in range(state.n):
            fh.write(",".join(STATE_FMT % v for v in state.cstar_local[i]) + "\n")
        fh.write("section,cstar_global\n")
        fh.write(",".join(STATE_FMT % v for v in state.cstar_global) + "\n")


def read_state(path):
    """Inverse of write_state; returns (VariationalState, meta dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("format,glmmvb-state"):
        raise ParseError(1, "not a glmmvb state file")
    meta = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("section,"):
        key, val = lines[i].split(",", 1)
        meta[key] = val
        i += 1
    n, r, g = int(meta["n"]), int(meta["r"]), int(meta["g"])

    def expect_section(name):
        nonlocal i
        if lines[i] != f"section,{name}":
            raise ParseError(i + 1, f"expected section {name}")
        i += 1

    expect_section("mu")
    mu = np.array([float(v) for v in lines[i].split(",")])
    i += 1
    expect_section("cstar_local")
    cl = np.array([[float(v) for v in lines[i + k].split(",")] for k in range(n)])
    cl = cl.reshape(n, matcalc.half_len(r))
    i += n
    expect_section("cstar_global")
    cg = np.array([float(v) for v in lines[i].split(",")])
    state = VariationalState(mu, cl, cg, n, r, g)
    if state.d != mu.size or cg.size != matcalc.half_len(g):
        raise ParseError(i + 1, "inconsistent dimensions in state file")
    return state, meta
