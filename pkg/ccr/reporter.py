# ccr/reporter.py
"""Excel workbooks for recovery and model-selection reports, and optional plotly HTML figures."""

import logging
import os
import re
import zipfile
from pathlib import Path

import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

try:
    import plotly.graph_objects as go
    PLOTLY_OK = True
except ImportError:
    go = None
    PLOTLY_OK = False

logger = logging.getLogger(__name__)

HEADER_COLOR = "366092"
SUMMARY_COLOR = "D9E1F2"
SHEET_COLORS = {
    "independence": "FFC7CE",
    "two_stage": "FFEB9C",
    "full": "C6EFCE",
}
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
FIXED_STAMP = "2000-01-01T00:00:00Z"
_CORE_STAMPS = re.compile(r"(<dcterms:(created|modified)[^>]*>)[^<]*(</dcterms:\2>)")


def flatten_columns(frame: pd.DataFrame) -> pd.DataFrame:
    if isinstance(frame.columns, pd.MultiIndex):
        frame = frame.copy()
        frame.columns = [".".join(str(p) for p in col if str(p)) for col in frame.columns]
    return frame


def write_workbook(filepath, summary_data: dict, sheets: dict) -> str:
    """SUMMARY sheet first, then one formatted sheet per frame."""
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    summary = dict(summary_data)
    with pd.ExcelWriter(filepath, engine="openpyxl") as writer:
        summary_df = pd.DataFrame(list(summary.items()), columns=["Metric", "Value"])
        summary_df.to_excel(writer, sheet_name="SUMMARY", index=False)
        for name, frame in sheets.items():
            flatten_columns(frame).to_excel(writer, sheet_name=name[:31], index=False)
    format_workbook(filepath)
    logger.info(f"✅ Report saved: {filepath}")
    return str(filepath)


def format_workbook(filepath):
    wb = load_workbook(filepath)
    header_font = Font(bold=True, color="FFFFFF")
    header_fill = PatternFill(start_color=HEADER_COLOR, end_color=HEADER_COLOR, fill_type="solid")
    border = Border(left=Side(style="thin"), right=Side(style="thin"),
                    top=Side(style="thin"), bottom=Side(style="thin"))
    for sheet_name in wb.sheetnames:
        ws = wb[sheet_name]
        if sheet_name == "SUMMARY":
            format_summary_sheet(ws)
        else:
            format_data_sheet(ws, SHEET_COLORS.get(sheet_name), header_font, header_fill, border)
    wb.save(filepath)
    freeze_xlsx(filepath)


def freeze_xlsx(filepath) -> None:
    """Pin zip member times and the core-property stamps so equal content gives equal bytes."""
    with zipfile.ZipFile(filepath) as archive:
        members = [(info, archive.read(info.filename)) for info in archive.infolist()]
    with zipfile.ZipFile(filepath, "w", zipfile.ZIP_DEFLATED) as archive:
        for info, payload in members:
            if info.filename == "docProps/core.xml":
                text = _CORE_STAMPS.sub(lambda m: m.group(1) + FIXED_STAMP + m.group(3), payload.decode("utf-8"))
                payload = text.encode("utf-8")
            frozen = zipfile.ZipInfo(info.filename, date_time=ZIP_EPOCH)
            frozen.compress_type = zipfile.ZIP_DEFLATED
            frozen.external_attr = info.external_attr
            archive.writestr(frozen, payload)


def _autosize(ws, limit):
    for column in ws.columns:
        letter = get_column_letter(column[0].column)
        width = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
        ws.column_dimensions[letter].width = min(width + 2, limit)


def format_summary_sheet(ws):
    fill = PatternFill(start_color=SUMMARY_COLOR, end_color=SUMMARY_COLOR, fill_type="solid")
    for row in ws.iter_rows(min_row=2):
        for cell in row:
            cell.fill = fill
            if cell.column == 1:
                cell.font = Font(bold=True)
    for cell in ws[1]:
        cell.font = Font(bold=True, color="FFFFFF")
        cell.fill = PatternFill(start_color=HEADER_COLOR, end_color=HEADER_COLOR, fill_type="solid")
    _autosize(ws, 50)


def format_data_sheet(ws, color, header_font, header_fill, border):
    if ws.max_row <= 1:
        return
    ws.freeze_panes = "A2"
    ws.auto_filter.ref = ws.dimensions
    body_fill = PatternFill(start_color=color, end_color=color, fill_type="solid") if color else None
    for row_num, row in enumerate(ws.iter_rows(), 1):
        for cell in row:
            if row_num == 1:
                cell.font = header_font
                cell.fill = header_fill
                cell.alignment = Alignment(horizontal="center", vertical="center")
            else:
                if body_fill is not None:
                    cell.fill = body_fill
                if isinstance(cell.value, float):
                    cell.number_format = "0.0000"
            cell.border = border
    _autosize(ws, 30)


def save_recovery_report(report, filepath) -> str:
    """Recovery study workbook: the wide table, the long table, one sheet of raw estimates per method."""
    estimates = report.estimates
    summary = {
        "Design": report.design,
        "Scheme": report.scheme,
        "Replications": report.replications,
        "Methods": ", ".join(report.table["method"].unique()),
    }
    if not estimates.empty:
        share = estimates.groupby("method")["converged"].mean()
        for method, value in share.items():
            summary[f"Converged ({method})"] = f"{value:.1%}"
    sheets = {"TABLE": report.wide().reset_index(), "LONG": report.table}
    for method, frame in estimates.groupby("method", sort=False):
        sheets[str(method)] = frame.pivot(index="replication", columns="parameter", values="estimate").reset_index()
    logger.info(f"📊 Writing recovery report for {report.replications} replications")
    return write_workbook(filepath, summary, sheets)


def save_model_selection_report(comparison, fits, filepath) -> str:
    table = comparison.table
    summary = {"Models": len(table)}
    if "aic_rank" in table:
        summary["Best by AIC"] = table.loc[table["aic_rank"].idxmin(), "model"]
        summary["Best by BIC"] = table.loc[table["bic_rank"].idxmin(), "model"]
    if comparison.lrt:
        summary["LRT statistic"] = comparison.lrt["statistic"]
        summary["LRT df"] = comparison.lrt["df"]
        summary["LRT p-value"] = comparison.lrt["p_value"]
    sheets = {"SELECTION": table}
    for fit in fits:
        sheets[f"{fit.method}_{fit.label}"] = fit.summary()
    return write_workbook(filepath, summary, sheets)


# --------------------------------------------------------------------------
# interactive figures
# --------------------------------------------------------------------------

def _write_figure(fig, filepath) -> str | None:
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    fig.write_html(str(filepath), include_plotlyjs="cdn", div_id=Path(filepath).stem)
    logger.info(f"✅ Plot saved: {filepath}")
    return str(filepath)


def _plotly_missing(what: str) -> None:
    logger.warning(f"⚠️ plotly is not installed; skipping {what} plot")


def plot_ecdf_overlay(curves: dict, filepath, title="Aggregate loss distribution") -> str | None:
    """One line per labelled ECDF frame with columns s and ecdf."""
    if not PLOTLY_OK:
        _plotly_missing("ECDF")
        return None
    fig = go.Figure()
    for label, frame in curves.items():
        fig.add_trace(go.Scatter(x=frame["s"], y=frame["ecdf"], mode="lines", name=label))
    fig.update_layout(title=title, xaxis_title="s", yaxis_title="F(s)")
    return _write_figure(fig, filepath)


def plot_aggregate_fit(frame: pd.DataFrame, filepath) -> str | None:
    if not PLOTLY_OK:
        _plotly_missing("aggregate fit")
        return None
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame["s"], y=frame["empirical_tail"], mode="markers", name="empirical"))
    fig.add_trace(go.Scatter(x=frame["s"], y=frame["fitted_tail"], mode="lines", name="fitted"))
    fig.update_layout(title="Tail fit of aggregate loss", xaxis_title="s", yaxis_title="-log(1 - F(s))")
    return _write_figure(fig, filepath)


def plot_density_curves(frame: pd.DataFrame, filepath) -> str | None:
    if not PLOTLY_OK:
        _plotly_missing("conditional density")
        return None
    fig = go.Figure()
    for column in frame.columns.drop("y"):
        fig.add_trace(go.Scatter(x=frame["y"], y=frame[column], mode="lines", name=column))
    fig.update_layout(title="Severity density given claim count", xaxis_title="y", yaxis_title="density")
    return _write_figure(fig, filepath)


def plot_lorenz(curves: dict, filepath) -> str | None:
    """Ordered Lorenz curves keyed by score name, with the line of equality."""
    if not PLOTLY_OK:
        _plotly_missing("Lorenz")
        return None
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], mode="lines", name="equality", line={"dash": "dash"}))
    for label, curve in curves.items():
        fig.add_trace(go.Scatter(x=curve.premium_share, y=curve.loss_share, mode="lines",
                                 name=f"{label} (Gini {curve.gini:.3f})"))
    fig.update_layout(title="Ordered Lorenz curve", xaxis_title="premium share", yaxis_title="loss share")
    return _write_figure(fig, filepath)


def plot_qq(frame: pd.DataFrame, filepath) -> str | None:
    if not PLOTLY_OK:
        _plotly_missing("QQ")
        return None
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame["theoretical"], y=frame["sample"], mode="markers", name="residuals"))
    if len(frame):
        lo, hi = float(frame["theoretical"].min()), float(frame["theoretical"].max())
        fig.add_trace(go.Scatter(x=[lo, hi], y=[lo, hi], mode="lines", name="y = x"))
    fig.update_layout(title="Normal QQ plot of Cox-Snell residuals", xaxis_title="theoretical",
                      yaxis_title="sample")
    return _write_figure(fig, filepath)
