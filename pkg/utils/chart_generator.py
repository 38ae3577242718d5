import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from utils.profile import VortexProfile

logger = logging.getLogger(__name__)


class ChartGenerator:
    """Class to generate interactive HTML charts of lab results"""

    def __init__(self):
        # Color scheme for charts
        self.colors = {
            'primary': '#0052CC',
            'secondary': '#00875A',
            'warning': '#DE350B',
            'background': '#F4F5F7',
            'text': '#172B4D',
            'positive': '#00875A',
            'negative': '#DE350B'
        }

    def create_profile_chart(self, profile: VortexProfile, r_plot: float = 20.0) -> go.Figure:
        """
        Radial vortex profile and its derivative

        Args:
            profile: Solved profile
            r_plot: Largest radius shown

        Returns:
            Plotly figure object
        """
        r = np.linspace(0.0, min(r_plot, profile.r_max), 400)
        fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.05,
                            subplot_titles=('f0(r)', "f0'(r)"))
        fig.add_trace(go.Scatter(x=r, y=profile(r), mode='lines', name='f0',
                                 line=dict(color=self.colors['primary'], width=2)), row=1, col=1)
        fig.add_trace(go.Scatter(x=r, y=profile.derivative(r) * r, mode='lines', name="f0'",
                                 line=dict(color=self.colors['secondary'], width=2)), row=2, col=1)
        fig.update_layout(title='Degree-one vortex profile', height=600, showlegend=False,
                          template='plotly_white')
        fig.update_xaxes(title_text='r', row=2, col=1)
        return fig

    def create_sweep_chart(self, table: pd.DataFrame) -> go.Figure:
        """Free energy against |log eps| with the leading-order law"""
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=table['log_eps'], y=table['free_energy'], mode='markers+lines',
                                 name='F', line=dict(color=self.colors['primary'], width=2)))
        if 'leading_term' in table:
            fig.add_trace(go.Scatter(x=table['log_eps'], y=table['leading_term'], mode='lines',
                                     name='pi |rho^2 Gamma| |log eps|',
                                     line=dict(color=self.colors['secondary'], dash='dash')))
        if 'upper_bound' in table:
            fig.add_trace(go.Scatter(x=table['log_eps'], y=table['upper_bound'], mode='lines',
                                     name='upper bound', line=dict(color=self.colors['warning'], dash='dot')))
        fig.update_layout(title='Energy of the vortex configuration across eps', xaxis_title='|log eps|',
                          yaxis_title='energy', height=500, template='plotly_white', hovermode='x unified')
        return fig

    def create_onset_chart(self, h_grid: Sequence[float], delta_e: Sequence[float],
                           crossing: Optional[float] = None, hc1: Optional[float] = None) -> go.Figure:
        """Energy balance of the vortex configuration against the applied-field intensity"""
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=list(h_grid), y=list(delta_e), mode='lines+markers', name='Delta E',
                                 line=dict(color=self.colors['primary'], width=2)))
        fig.add_hline(y=0.0, line_dash='dot', line_color=self.colors['text'])
        if crossing is not None:
            fig.add_vline(x=crossing, line_dash='dash', line_color=self.colors['negative'],
                          annotation_text='h*')
        if hc1 is not None:
            fig.add_vline(x=hc1, line_dash='dash', line_color=self.colors['secondary'],
                          annotation_text='H_c1')
        fig.update_layout(title='Vortex onset energy balance', xaxis_title='h_ex', yaxis_title='Delta E',
                          height=500, template='plotly_white')
        return fig

    def create_lambda_chart(self, history: List[float]) -> go.Figure:
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=list(range(len(history))), y=history, mode='lines+markers', name='lambda',
                                 line=dict(color=self.colors['primary'], width=2)))
        fig.update_layout(title='Dinkelbach ratio iterates', xaxis_title='iteration', yaxis_title='lambda',
                          height=400, template='plotly_white')
        return fig

    def save(self, fig: go.Figure, path: str) -> bool:
        try:
            fig.write_html(path, include_plotlyjs='cdn')
            return True
        except Exception as e:
            logger.error("Error writing chart %s: %s", path, e)
            return False

    def render_all(self, results: Dict[str, Any], directory: str) -> List[str]:
        """Write every chart the results support and return the paths written"""
        written = []
        profile = results.get('profile')
        if profile is not None and self.save(self.create_profile_chart(profile), f"{directory}/profile.html"):
            written.append(f"{directory}/profile.html")
        onset = results.get('onset')
        if onset is not None and self.save(
                self.create_onset_chart(onset.h_grid, onset.delta_e, onset.crossing, onset.hc1),
                f"{directory}/onset.html"):
            written.append(f"{directory}/onset.html")
        isoflux = results.get('isoflux')
        if isoflux is not None and isoflux.history and self.save(self.create_lambda_chart(isoflux.history),
                                                                  f"{directory}/lambda.html"):
            written.append(f"{directory}/lambda.html")
        sweep = results.get('sweep')
        if sweep is not None and not sweep.empty and self.save(self.create_sweep_chart(sweep),
                                                               f"{directory}/sweep.html"):
            written.append(f"{directory}/sweep.html")
        return written
