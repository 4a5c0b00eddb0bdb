"""Panel plotting for solver trajectory CSVs."""

__version__ = "0.1.0"

from .panels import PanelError, PanelSpec, load_trajectory, render_panels
