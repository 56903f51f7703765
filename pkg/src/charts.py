import logging
from pathlib import Path

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from utils import ConceptMinerError

logger = logging.getLogger(__name__)


def occlusion_figure(curve: pd.DataFrame) -> go.Figure:
    """Accuracy and F(3) against the occluded fraction of parts"""
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=curve["fraction"], y=curve["accuracy"], mode="lines+markers", name="Accuracy"))
    fig.add_trace(go.Scatter(x=curve["fraction"], y=curve["F3"], mode="lines+markers", name="F(3)"))
    fig.update_layout(
        title="Accuracy and faithfulness under part occlusion",
        xaxis_title="Occluded fraction of parts",
        yaxis_title="Percent",
        font=dict(size=12),
        height=400,
    )
    return fig


def merge_figure(table: pd.DataFrame) -> go.Figure:
    """Concept count per merge level against the threshold"""
    fig = px.line(
        table,
        x="threshold_pct",
        y="d_c",
        color=table["level"].astype(str),
        markers=True,
        labels={"threshold_pct": "Threshold (% of max centroid distance)", "d_c": "Concepts", "color": "Level"},
        title="Concept count after hierarchical merging",
    )
    fig.update_layout(height=400)
    return fig


def save_figure(fig: go.Figure, path):
    """Write a figure as HTML (*.html) or as a static image (SVG and friends)"""
    path = Path(path)
    try:
        if path.suffix.lower() == ".html":
            fig.write_html(str(path), include_plotlyjs="cdn")
        else:
            fig.write_image(str(path))
    except (OSError, ValueError) as e:
        raise ConceptMinerError(f"cannot write chart {path}: {e}") from e
    logger.info("chart written to %s", path)
