"""Dependency-free SVG charts for ROC and learning curves.

Hand-rolled so output bytes are a pure function of the data: rerunning a
seeded pipeline reproduces every artifact bit-for-bit.
"""

from __future__ import annotations

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 50, 60
PLOT_W = WIDTH - MARGIN_L - MARGIN_R
PLOT_H = HEIGHT - MARGIN_T - MARGIN_B

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _x_px(x: float, x_min: float, x_max: float) -> float:
    span = (x_max - x_min) or 1.0
    return MARGIN_L + (x - x_min) / span * PLOT_W


def _y_px(y: float, y_min: float, y_max: float) -> float:
    span = (y_max - y_min) or 1.0
    return MARGIN_T + (1.0 - (y - y_min) / span) * PLOT_H


def _polyline(xs, ys, x_range, y_range, color: str) -> str:
    pts = " ".join(
        f"{_x_px(float(x), *x_range):.2f},{_y_px(min(max(float(y), y_range[0]), y_range[1]), *y_range):.2f}"
        for x, y in zip(xs, ys)
    )
    return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>'


def _axes(title: str, x_label: str, y_label: str, x_range, y_range, x_ticks, y_ticks) -> list[str]:
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{PLOT_W}" height="{PLOT_H}" '
        'fill="white" stroke="black"/>',
        f'<text x="{WIDTH / 2:.0f}" y="28" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
        f'<text x="{MARGIN_L + PLOT_W / 2:.0f}" y="{HEIGHT - 14}" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">{x_label}</text>',
        f'<text x="20" y="{MARGIN_T + PLOT_H / 2:.0f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 20 {MARGIN_T + PLOT_H / 2:.0f})">{y_label}</text>',
    ]
    for t in x_ticks:
        px = _x_px(t, *x_range)
        parts.append(f'<line x1="{px:.2f}" y1="{MARGIN_T + PLOT_H}" x2="{px:.2f}" '
                     f'y2="{MARGIN_T + PLOT_H + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{MARGIN_T + PLOT_H + 20}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{t:g}</text>')
    for t in y_ticks:
        py = _y_px(t, *y_range)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                     f'y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 9}" y="{py + 4:.2f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{t:g}</text>')
    return parts


def line_chart(
    series: list[tuple[str, list[float], list[float]]],
    *,
    title: str,
    x_label: str,
    y_label: str,
    x_range: tuple[float, float] = (0.0, 1.0),
    y_range: tuple[float, float] = (0.0, 1.0),
    diagonal: bool = False,
) -> str:
    """Render named (x, y) series; y values are clipped into the fixed range."""
    x_ticks = [x_range[0] + i * (x_range[1] - x_range[0]) / 4 for i in range(5)]
    y_ticks = [y_range[0] + i * (y_range[1] - y_range[0]) / 4 for i in range(5)]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    parts.extend(_axes(title, x_label, y_label, x_range, y_range, x_ticks, y_ticks))
    if diagonal:
        parts.append(
            f'<line x1="{_x_px(x_range[0], *x_range):.2f}" y1="{_y_px(y_range[0], *y_range):.2f}" '
            f'x2="{_x_px(x_range[1], *x_range):.2f}" y2="{_y_px(y_range[1], *y_range):.2f}" '
            'stroke="#aaaaaa" stroke-dasharray="6,4"/>')
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        parts.append(_polyline(xs, ys, x_range, y_range, color))
        ly = MARGIN_T + 18 + 18 * i
        parts.append(f'<line x1="{MARGIN_L + 12}" y1="{ly - 4}" x2="{MARGIN_L + 40}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{MARGIN_L + 46}" y="{ly}" font-size="12" '
                     f'font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def roc_chart(curves: dict[str, tuple[list[float], list[float], float]]) -> str:
    """ROC plot on fixed [0, 1] axes with the chance diagonal."""
    series = [
        (f"{name} (AUC {auc:.3f})", list(fpr), list(tpr))
        for name, (fpr, tpr, auc) in curves.items()
    ]
    return line_chart(
        series,
        title="ROC curve",
        x_label="false positive rate",
        y_label="true positive rate",
        diagonal=True,
    )


def learning_curve_chart(epochs: list[int], series: dict[str, list[float]], title: str) -> str:
    """Per-epoch curves; value axis fixed to [0, 1]."""
    x_range = (1.0, float(max(epochs))) if epochs and max(epochs) > 1 else (0.0, 1.0)
    named = [(name, [float(e) for e in epochs], ys) for name, ys in series.items()]
    return line_chart(
        named,
        title=title,
        x_label="epoch",
        y_label="value",
        x_range=x_range,
    )
