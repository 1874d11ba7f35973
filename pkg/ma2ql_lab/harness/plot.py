"""
Minimal SVG line plots of compared learning curves, rendered with Qt's SVG generator on the
offscreen platform so no display is needed.
"""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path
from typing import Sequence

from PySide6.QtCore import QBuffer, QByteArray, QIODevice, QPointF, QRect, QRectF, QSize, Qt
from PySide6.QtGui import QColor, QGuiApplication, QPainter, QPainterPath, QPen, QPolygonF, QTextOption
from PySide6.QtSvg import QSvgGenerator

from ma2ql_lab.harness.compare import CurveGroup
from ma2ql_lab.utils import atomic_write_text

WIDTH = 800
HEIGHT = 500
MARGIN_LEFT = 70
MARGIN_RIGHT = 180
MARGIN_TOP = 40
MARGIN_BOTTOM = 50
TICKS = 5

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]

CENTER = Qt.AlignmentFlag.AlignHCenter
RIGHT = Qt.AlignmentFlag.AlignRight
LEFT = Qt.AlignmentFlag.AlignLeft


def _gui_application() -> QGuiApplication:  # pragma: no cover
    # text layout needs a QGuiApplication, which needs a platform plugin
    os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
    return QGuiApplication.instance() or QGuiApplication([])


def _value_range(groups: Sequence[CurveGroup]) -> tuple[float, float]:
    low, high = math.inf, -math.inf
    for group in groups:
        for mean, std in zip(group.mean, group.std):
            if mean is None:
                continue
            spread = std or 0.0
            low = min(low, mean - spread)
            high = max(high, mean + spread)
    if low == math.inf:
        return 0.0, 1.0
    if high - low < 1e-12:
        return low - 0.5, high + 0.5
    pad = 0.05 * (high - low)
    return low - pad, high + pad


def _draw_label(painter: QPainter, rect: QRectF, text: str, alignment: Qt.AlignmentFlag) -> None:
    painter.drawText(rect, text, QTextOption(alignment))


def render_svg(
    grid: Sequence[int], groups: Sequence[CurveGroup], path: Path, axis: str = "env_steps", title: str = ""
) -> None:
    """
    Draw every group's mean return as a line with a shaded mean +- std band, and write the SVG to path.
    """

    _gui_application()

    data = QByteArray()
    buffer = QBuffer(data)
    buffer.open(QIODevice.OpenModeFlag.WriteOnly)

    generator = QSvgGenerator()
    generator.setOutputDevice(buffer)
    generator.setSize(QSize(WIDTH, HEIGHT))
    generator.setViewBox(QRect(0, 0, WIDTH, HEIGHT))
    generator.setTitle(title or "mean return")

    plot = QRectF(MARGIN_LEFT, MARGIN_TOP, WIDTH - MARGIN_LEFT - MARGIN_RIGHT, HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    x_low, x_high = (min(grid), max(grid)) if grid else (0, 1)
    if x_high == x_low:
        x_high = x_low + 1
    y_low, y_high = _value_range(groups)

    def to_point(step: float, value: float) -> QPointF:
        x = plot.left() + (step - x_low) / (x_high - x_low) * plot.width()
        y = plot.bottom() - (value - y_low) / (y_high - y_low) * plot.height()
        return QPointF(x, y)

    painter = QPainter(generator)
    painter.setRenderHint(QPainter.RenderHint.Antialiasing)
    painter.fillRect(QRect(0, 0, WIDTH, HEIGHT), QColor("white"))

    painter.setPen(QPen(QColor("black"), 1))
    painter.drawRect(plot)
    for tick in range(TICKS + 1):
        step = x_low + (x_high - x_low) * tick / TICKS
        value = y_low + (y_high - y_low) * tick / TICKS
        x_point = to_point(step, y_low)
        y_point = to_point(x_low, value)
        painter.drawLine(x_point, x_point + QPointF(0, 5))
        painter.drawLine(y_point, y_point - QPointF(5, 0))
        _draw_label(painter, QRectF(x_point.x() - 40, plot.bottom() + 8, 80, 16), f"{step:g}", CENTER)
        _draw_label(painter, QRectF(0, y_point.y() - 8, MARGIN_LEFT - 8, 16), f"{value:.3g}", RIGHT)

    _draw_label(painter, QRectF(plot.left(), HEIGHT - 22, plot.width(), 18), axis, CENTER)
    if title:
        _draw_label(painter, QRectF(plot.left(), 10, plot.width(), 20), title, CENTER)

    for index, group in enumerate(groups):
        color = QColor(PALETTE[index % len(PALETTE)])
        known = [(s, m, sd or 0.0) for s, m, sd in zip(group.steps, group.mean, group.std) if m is not None]
        if not known:
            continue

        band = QPolygonF(
            [to_point(s, m + sd) for s, m, sd in known] + [to_point(s, m - sd) for s, m, sd in reversed(known)]
        )
        fill = QColor(color)
        fill.setAlpha(50)
        painter.setPen(Qt.PenStyle.NoPen)
        painter.setBrush(fill)
        painter.drawPolygon(band)

        line = QPainterPath(to_point(known[0][0], known[0][1]))
        for s, m, _ in known[1:]:
            line.lineTo(to_point(s, m))
        painter.setBrush(Qt.BrushStyle.NoBrush)
        painter.setPen(QPen(color, 2))
        painter.drawPath(line)

        legend_y = plot.top() + 20 * index
        painter.drawLine(QPointF(plot.right() + 12, legend_y + 8), QPointF(plot.right() + 32, legend_y + 8))
        painter.setPen(QPen(QColor("black"), 1))
        _draw_label(painter, QRectF(plot.right() + 38, legend_y, MARGIN_RIGHT - 40, 16), group.name, LEFT)

    painter.end()
    buffer.close()

    atomic_write_text(Path(path), bytes(data).decode("utf-8"))
    logging.info(f"Rendered plot of {len(groups)} curve group(s) to {path}")
