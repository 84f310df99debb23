from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import structlog

from simple2complex.backend.storage.files import (
    CONFIG_FILE,
    GROWTH_FILE,
    METRICS_FILE,
    RUNGS_FILE,
    STAGES_FILE,
)
from simple2complex.common.errors import ReportError
from simple2complex.common.evaluation import GAMMA_GROUPS_FILE, GAMMA_SUMMARY_FILE
from simple2complex.common.utils import read_csv

log = structlog.get_logger(__name__)

REPORT_FILE = "report.pdf"


def _rows(run_dir: Path, name: str) -> List[Dict[str, str]]:
    path = run_dir / name
    return read_csv(path) if path.exists() else []


def _fmt(value: str) -> str:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return value or ""
    if number.is_integer() and abs(number) < 1e9:
        return str(int(number))
    return f"{number:.4g}"


def _table_data(rows: List[Dict[str, str]], columns: Sequence[str]) -> List[List[str]]:
    return [list(columns)] + [[_fmt(r.get(c, "")) for c in columns] for r in rows]


def _accuracy_chart(metrics: List[Dict[str, str]], width: float, height: float):
    from reportlab.graphics.charts.legends import Legend
    from reportlab.graphics.charts.lineplots import LinePlot
    from reportlab.graphics.shapes import Drawing
    from reportlab.lib import colors

    train = [(float(r["step"]), float(r["train_acc"])) for r in metrics]
    test = [(float(r["step"]), float(r["test_acc"])) for r in metrics]
    drawing = Drawing(width, height)
    plot = LinePlot()
    plot.x, plot.y = 40, 30
    plot.width, plot.height = width - 60, height - 50
    plot.data = [train, test]
    plot.lines[0].strokeColor = colors.steelblue
    plot.lines[1].strokeColor = colors.darkorange
    plot.yValueAxis.valueMin = 0.0
    plot.yValueAxis.valueMax = 1.0
    drawing.add(plot)
    legend = Legend()
    legend.x, legend.y = 50, height - 8
    legend.columnMaximum = 1
    legend.colorNamePairs = [(colors.steelblue, "train acc"), (colors.darkorange, "test acc")]
    drawing.add(legend)
    return drawing


def build_run_report(run_dir: Union[str, Path]) -> bytes:
    """PDF summary of one run directory: accuracy curves plus the stage, rung, growth and gamma tables."""
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.styles import getSampleStyleSheet
    from reportlab.lib.units import cm
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

    run_dir = Path(run_dir)
    metrics = _rows(run_dir, METRICS_FILE)
    if not metrics:
        raise ReportError(f"{run_dir} has no {METRICS_FILE}; is it a run directory?")
    styles = getSampleStyleSheet()
    W, _ = A4
    grid = TableStyle(
        [
            ("GRID", (0, 0), (-1, -1), 0.25, colors.grey),
            ("BACKGROUND", (0, 0), (-1, 0), colors.whitesmoke),
            ("FONTSIZE", (0, 0), (-1, -1), 8),
        ]
    )

    first = metrics[0]
    flow = [
        Paragraph(f"<b>Run {first['run_id']}</b> ({first['regime']})", styles["Heading1"]),
        Paragraph(f"{len(metrics)} evaluations, last at step {metrics[-1]['step']}.", styles["BodyText"]),
        Spacer(1, 0.3 * cm),
        _accuracy_chart(metrics, W - 4 * cm, 7 * cm),
    ]
    sections = [
        ("Stages", STAGES_FILE, ["stage", "step", "train_acc", "test_acc"]),
        ("Learning-rate rungs", RUNGS_FILE, ["lr", "step", "train_acc", "test_acc", "gap"]),
        ("Growth", GROWTH_FILE, ["stage", "child_params", "max_abs_diff", "passed", "loss_before", "loss_after", "continuous"]),
        ("Gamma groups", GAMMA_GROUPS_FILE, ["layers", "means", "strictly_decreasing"]),
        ("Mean |gamma| per layer", GAMMA_SUMMARY_FILE, ["layer", "mean_abs_gamma"]),
    ]
    for title, name, columns in sections:
        rows = _rows(run_dir, name)
        if not rows:
            continue
        table = Table(_table_data(rows, columns), repeatRows=1)
        table.setStyle(grid)
        flow += [Spacer(1, 0.4 * cm), Paragraph(title, styles["Heading2"]), table]

    config_path = run_dir / CONFIG_FILE
    if config_path.exists():
        config = json.loads(config_path.read_text(encoding="utf-8"))
        text = json.dumps(config, indent=1).replace(" ", "&nbsp;").replace("\n", "<br/>")
        flow += [Paragraph("Resolved config", styles["Heading2"]), Paragraph(f"<font size=7>{text}</font>", styles["Code"])]

    buf = io.BytesIO()
    doc = SimpleDocTemplate(buf, pagesize=A4, title=f"Run {first['run_id']}")
    doc.build(flow)
    return buf.getvalue()


def export_run_report(run_dir: Union[str, Path], out_path: Optional[Union[str, Path]] = None) -> Path:
    run_dir = Path(run_dir)
    out = Path(out_path) if out_path else run_dir / REPORT_FILE
    out.write_bytes(build_run_report(run_dir))
    log.info("report_written", path=str(out))
    return out
