"""Rendering and re-parsing of run artifacts: structured reports and CSV.

Reports are UTF-8 text with a versioned header line followed by key = value
sections (the same line grammar the config parser uses, so every artifact is
machine-recoverable).  All floats carry 17 significant digits and round-trip
exactly; CSV series use fixed headers with a trailing status column so that
an underflowed value is never printed as a bare zero.
"""

from __future__ import annotations

import numpy as np

from .config import fmt_complex, fmt_float, tokenize_kv
from .core import FPropertyReport, FTensor
from .errors import StructuralError

REPORT_HEADER = "pointer-cell-sim report v1"
SWEEP_COLUMNS = ("N", "eps_max", "log_eps_max", "w_plus", "w_minus", "offdiag_max", "status")
LDP_COLUMNS = ("m", "N", "empirical_rate", "analytic_rate", "residual", "status")


def render_kv_section(name: str, items: list[tuple[str, str]]) -> list[str]:
    lines = [f"[{name}]"]
    lines += [f"{key} = {value}" for key, value in items]
    lines.append("")
    return lines


def f_tensor_items(f: FTensor) -> list[tuple[str, str]]:
    items = [("n", str(f.n)), ("t", fmt_float(f.t))]
    for r in range(f.n):
        for s in range(f.n):
            for a in range(f.n):
                items.append((f"F[{r},{s},{a}]", fmt_complex(complex(f.values[r, s, a]))))
    underflow = getattr(f, "underflow", None)
    if underflow is not None and underflow.any():
        marked = [f"({r},{s},{a})" for r, s, a in zip(*np.nonzero(underflow))]
        items.append(("underflow_entries", " ".join(marked)))
        log_mag = f.log_magnitude
        for r, s, a in zip(*np.nonzero(underflow)):
            items.append((f"log_mag[{r},{s},{a}]", fmt_float(float(log_mag[r, s, a]))))
    return items


def parse_f_tensor_text(text: str) -> FTensor:
    """Rebuild a tensor from its report section (used by verify --f_file)."""
    lines = text.splitlines()
    if lines and lines[0].strip() == REPORT_HEADER:
        text = "\n".join(lines[1:])
    sections, errors = tokenize_kv(text)
    if errors:
        raise StructuralError("malformed tensor dump: " + "; ".join(errors))
    body = sections.get("f_tensor")
    if body is None and len(sections) == 1:
        body = next(iter(sections.values()))
    if body is None:
        raise StructuralError("tensor dump must contain an [f_tensor] section")
    try:
        n = int(body["n"])
        t = float(body["t"])
    except (KeyError, ValueError) as exc:
        raise StructuralError(f"tensor dump missing n/t: {exc}") from exc
    values = np.zeros((n, n, n), dtype=complex)
    for r in range(n):
        for s in range(n):
            for a in range(n):
                key = f"F[{r},{s},{a}]"
                if key not in body:
                    raise StructuralError(f"tensor dump missing entry {key}")
                values[r, s, a] = complex(body[key].replace(" ", ""))
    return FTensor(values=values, t=t)


def property_items(report: FPropertyReport) -> list[tuple[str, str]]:
    items = [(name, fmt_float(value)) for name, value in report.as_dict().items()]
    items.append(("tolerance", fmt_float(report.tol)))
    items.append(("passed", "true" if report.passed else "false"))
    return items


def render_report(sections: list[tuple[str, list[tuple[str, str]]]]) -> str:
    lines = [REPORT_HEADER, ""]
    for name, items in sections:
        lines += render_kv_section(name, items)
    return "\n".join(lines).rstrip("\n") + "\n"


def render_csv(columns: tuple[str, ...], rows: list[tuple[str, ...]]) -> str:
    out = [",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise StructuralError("CSV row width does not match the header")
        out.append(",".join(row))
    return "\n".join(out) + "\n"
