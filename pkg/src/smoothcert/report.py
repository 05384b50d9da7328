"""Reporting layer: per-input certification CSVs, certified-accuracy curves
on a fixed epsilon grid, the max-over-sigma envelope, and comparison tables.

Every aggregate here is a pure function of the per-input CSV rows, so any
reported number can be recomputed from the raw files alone.  Certified
accuracy at radius eps counts an input only if the certifier did not abstain,
the predicted class matches the label, and the certified radius reaches eps.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

CERT_CSV_COLUMNS = ("id", "label", "c_A", "k", "n", "p_lower", "radius",
                    "abstain", "sigma", "seed")
CLEAN_CSV_COLUMNS = ("id", "label", "pred", "correct")

# 0.00 .. 2.00 inclusive; covers every radius reachable at sigma <= 1 with
# realistic sample counts
EPS_GRID = tuple(np.round(np.arange(0, 201) * 0.01, 2).tolist())

TABLE_EPSILONS = (0.25, 0.5, 0.75, 1.0)


# ------------------------------------------------------------- per-input CSV


def cert_rows(results, labels):
    """Pair certification results with ground-truth labels into plain rows."""
    rows = []
    for res, label in zip(results, labels):
        rows.append({
            "id": int(res.input_id), "label": int(label), "c_A": int(res.predicted),
            "k": int(res.k), "n": int(res.n), "p_lower": float(res.p_lower),
            "radius": float(res.radius), "abstain": int(res.abstain),
            "sigma": float(res.sigma), "seed": int(res.seed),
        })
    return rows


def cert_rows_to_csv(rows):
    out = [",".join(CERT_CSV_COLUMNS)]
    for r in rows:
        out.append(",".join([
            str(r["id"]), str(r["label"]), str(r["c_A"]), str(r["k"]), str(r["n"]),
            repr(r["p_lower"]), repr(r["radius"]), str(r["abstain"]),
            repr(r["sigma"]), str(r["seed"]),
        ]))
    return "\n".join(out) + "\n"


def cert_rows_from_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CERT_CSV_COLUMNS:
        raise ValueError(f"certification CSV needs columns {CERT_CSV_COLUMNS}, "
                         f"got {reader.fieldnames}")
    rows = []
    for r in reader:
        rows.append({
            "id": int(r["id"]), "label": int(r["label"]), "c_A": int(r["c_A"]),
            "k": int(r["k"]), "n": int(r["n"]), "p_lower": float(r["p_lower"]),
            "radius": float(r["radius"]), "abstain": int(r["abstain"]),
            "sigma": float(r["sigma"]), "seed": int(r["seed"]),
        })
    return rows


def clean_rows(ids, labels, preds):
    return [{"id": int(i), "label": int(l), "pred": int(p), "correct": int(l == p)}
            for i, l, p in zip(ids, labels, preds)]


def clean_rows_to_csv(rows):
    out = [",".join(CLEAN_CSV_COLUMNS)]
    for r in rows:
        out.append(f'{r["id"]},{r["label"]},{r["pred"]},{r["correct"]}')
    return "\n".join(out) + "\n"


def clean_rows_from_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CLEAN_CSV_COLUMNS:
        raise ValueError(f"clean-eval CSV needs columns {CLEAN_CSV_COLUMNS}, "
                         f"got {reader.fieldnames}")
    return [{k: int(v) for k, v in r.items()} for r in reader]


def certified_accuracy(rows, epsilon):
    """Fraction of inputs certified correct with radius >= epsilon."""
    if not rows:
        raise ValueError("no certification rows")
    hits = sum(1 for r in rows
               if not r["abstain"] and r["c_A"] == r["label"] and r["radius"] >= epsilon)
    return hits / len(rows)


def clean_accuracy(rows):
    if not rows:
        raise ValueError("no clean-eval rows")
    return sum(r["correct"] for r in rows) / len(rows)


# ------------------------------------------------------------------- curves


@dataclass(frozen=True)
class CurveTable:
    """Certified accuracy per sigma on the fixed epsilon grid, plus the
    pointwise max-over-sigma envelope (with the arg sigma recorded) and the
    per-curve accuracy at eps=0."""

    epsilons: tuple
    sigmas: tuple
    curves: dict          # sigma -> tuple of accuracies over epsilons
    clean_acc: float
    envelope: tuple       # per epsilon: (accuracy, arg_sigma)

    def __post_init__(self):
        for sigma in self.sigmas:
            curve = self.curves[sigma]
            if len(curve) != len(self.epsilons):
                raise ValueError(f"curve for sigma={sigma} has {len(curve)} points, "
                                 f"grid has {len(self.epsilons)}")
            if any(a < 0.0 or a > 1.0 for a in curve):
                raise ValueError("accuracies must lie in [0, 1]")
            if any(a < b for a, b in zip(curve, curve[1:])):
                raise ValueError(f"curve for sigma={sigma} is not non-increasing")
        for j, (acc, arg) in enumerate(self.envelope):
            best = max(self.curves[s][j] for s in self.sigmas)
            if acc != best or self.curves[arg][j] != best:
                raise ValueError(f"envelope wrong at epsilon={self.epsilons[j]}")
        if not 0.0 <= self.clean_acc <= 1.0:
            raise ValueError("clean accuracy must lie in [0, 1]")

    @classmethod
    def from_rows(cls, rows_per_sigma, clean_acc, epsilons=EPS_GRID):
        sigmas = tuple(sorted(rows_per_sigma))
        if not sigmas:
            raise ValueError("need at least one sigma")
        curves = {s: tuple(certified_accuracy(rows_per_sigma[s], e) for e in epsilons)
                  for s in sigmas}
        envelope = []
        for j in range(len(epsilons)):
            best = max(curves[s][j] for s in sigmas)
            arg = min(s for s in sigmas if curves[s][j] == best)
            envelope.append((best, arg))
        return cls(epsilons=tuple(epsilons), sigmas=sigmas, curves=curves,
                   clean_acc=float(clean_acc), envelope=tuple(envelope))

    def acc_at_zero(self, sigma):
        """The bracketed value: certified accuracy of one curve at eps=0."""
        return self.curves[sigma][0]

    def envelope_at(self, epsilon):
        j = self.epsilons.index(epsilon)
        return self.envelope[j]

    def to_curves_csv(self):
        out = ["sigma,epsilon,acc"]
        for sigma in self.sigmas:
            for eps, acc in zip(self.epsilons, self.curves[sigma]):
                out.append(f"{sigma!r},{eps!r},{acc!r}")
        return "\n".join(out) + "\n"

    def to_envelope_csv(self):
        out = ["epsilon,acc,arg_sigma"]
        for eps, (acc, arg) in zip(self.epsilons, self.envelope):
            out.append(f"{eps!r},{acc!r},{arg!r}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_csvs(cls, curves_csv, envelope_csv, clean_acc):
        reader = csv.DictReader(io.StringIO(curves_csv))
        per_sigma = {}
        grid = None
        for r in reader:
            per_sigma.setdefault(float(r["sigma"]), []).append(
                (float(r["epsilon"]), float(r["acc"])))
        curves = {}
        for sigma, pts in per_sigma.items():
            eps = tuple(e for e, _ in pts)
            if grid is None:
                grid = eps
            elif eps != grid:
                raise ValueError("inconsistent epsilon grids between curves")
            curves[sigma] = tuple(a for _, a in pts)
        env_reader = csv.DictReader(io.StringIO(envelope_csv))
        envelope = tuple((float(r["acc"]), float(r["arg_sigma"])) for r in env_reader)
        return cls(epsilons=grid, sigmas=tuple(sorted(curves)), curves=curves,
                   clean_acc=float(clean_acc), envelope=envelope)


# ----------------------------------------------------------------- reports


def comparison_table(named_tables, epsilons=TABLE_EPSILONS):
    """Aligned text table: one row per run, envelope certified accuracy at
    the requested radii (arg sigma in parentheses) plus clean accuracy and
    the bracketed eps=0 value of each curve."""
    grids = {name: t.epsilons for name, t in named_tables.items()}
    if len(set(grids.values())) > 1:
        raise ValueError("inconsistent epsilon grids across runs: "
                         + ", ".join(f"{n}: {len(g)} pts" for n, g in grids.items()))
    headers = ["run", "clean"] + [f"eps={e}" for e in epsilons] + ["at eps=0 per sigma"]
    rows = []
    for name, table in named_tables.items():
        cells = [name, f"{table.clean_acc:.3f}"]
        for eps in epsilons:
            acc, arg = table.envelope_at(eps)
            cells.append(f"{acc:.3f} (s={arg:g})")
        brackets = " ".join(f"s={s:g}:({table.acc_at_zero(s):.3f})" for s in table.sigmas)
        cells.append(brackets)
        rows.append(cells)
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def comparison_csv(named_tables, epsilons=TABLE_EPSILONS):
    """Machine-readable long form of the comparison table."""
    out = ["run,epsilon,acc,arg_sigma,clean_acc"]
    for name, table in named_tables.items():
        for eps in epsilons:
            acc, arg = table.envelope_at(eps)
            out.append(f"{name},{eps!r},{acc!r},{arg!r},{table.clean_acc!r}")
    return "\n".join(out) + "\n"
