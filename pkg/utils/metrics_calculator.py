import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class MetricsCalculator:
    """Class to fit asymptotic laws and convergence orders from run tables"""

    def __init__(self, tolerance: float = 0.1):
        self.tolerance = tolerance

    def fit_slope(self, x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
        """
        Least-squares line y = slope * x + intercept

        Args:
            x: Abscissae, at least two distinct values
            y: Ordinates

        Returns:
            Dictionary with slope, intercept and the largest residual
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size < 2 or np.ptp(x) == 0:
            return {}
        slope, intercept = np.polyfit(x, y, 1)
        residual = float(np.max(np.abs(y - (slope * x + intercept))))
        return {'slope': float(slope), 'intercept': float(intercept), 'residual': residual}

    def observed_order(self, spacings: Sequence[float], errors: Sequence[float]) -> Optional[float]:
        """Log-log slope of errors against spacings"""
        h = np.asarray(spacings, dtype=float)
        e = np.abs(np.asarray(errors, dtype=float))
        if h.size < 2 or np.any(e <= 0) or np.any(h <= 0):
            return None
        return float(np.polyfit(np.log(h), np.log(e), 1)[0])

    def relative_error(self, value: float, reference: float) -> float:
        return abs(value - reference) / max(abs(reference), 1e-300)

    def sweep_table(self, rows: List[Dict[str, Any]], loglog_coefficient: float = 2.0 * np.pi) -> pd.DataFrame:
        """
        Assemble the eps-sweep table and fit the energy law

        Args:
            rows: One dictionary per epsilon with ``epsilon``, ``free_energy`` and ``weighted_length``
            loglog_coefficient: Allowed growth of the residual per unit of log|log eps|, (N/alpha + 1) pi

        Returns:
            DataFrame with log_eps, leading term, residual and the fitted slope in ``attrs``
        """
        if not rows:
            return pd.DataFrame()
        try:
            table = pd.DataFrame(rows).sort_values('epsilon', ascending=False).reset_index(drop=True)
            table['log_eps'] = np.abs(np.log(table['epsilon']))
            table['leading_term'] = np.pi * table['weighted_length'] * table['log_eps']
            table['f_over_log_eps'] = table['free_energy'] / table['log_eps']
            table['residual'] = table['free_energy'] - table['leading_term']
            table['loglog_term'] = np.log(table['log_eps'])
            fit = self.fit_slope(table['log_eps'], table['free_energy'])
            target = float(np.pi * table['weighted_length'].mean())
            table.attrs['slope'] = fit.get('slope')
            table.attrs['target_slope'] = target
            table.attrs['slope_error'] = (self.relative_error(fit['slope'], target) if fit else None)
            table.attrs['slope_ok'] = bool(fit) and table.attrs['slope_error'] <= self.tolerance
            growth = np.diff(table['residual'].to_numpy())
            allowed = loglog_coefficient * np.diff(table['loglog_term'].to_numpy())
            table.attrs['sublinear'] = bool(np.all(growth <= allowed + self.tolerance * abs(target)))
            return table
        except Exception as e:
            logger.error("Error building sweep table: %s", e)
            return pd.DataFrame()

    def slope_ratio(self, table_a: pd.DataFrame, table_b: pd.DataFrame) -> Optional[float]:
        """Ratio of the fitted energy slopes of two sweeps"""
        a, b = table_a.attrs.get('slope'), table_b.attrs.get('slope')
        if a is None or b is None or a == 0:
            return None
        return float(b / a)
