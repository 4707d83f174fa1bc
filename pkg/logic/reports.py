# -*- coding: utf-8 -*-
"""
Study reports and their renderings: aligned text tables, CSV files and bar plots.
"""
import json
import logging
import pathlib
import re
from dataclasses import dataclass, field
from typing import Dict, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from logic.metrics import FIDResult, MAReport, ma_table
from logic.partrainer import ComparisonTable

logger = logging.getLogger(__name__)

sns.set_theme()

FORMATS = ('table', 'csv', 'plot')
_FAIL_PATTERN = re.compile(r"^FAIL\(\d+\)$")


def fail_cell(count):
    return "FAIL({})".format(count)


@dataclass
class StudyReport:
    """
    FID per (variant, configuration). Grid cells are floats, or FAIL(n) strings for cells with n failed generations.
    """
    experiment: str
    grid: pd.DataFrame
    reference_fid: Optional[FIDResult] = None
    metadata: Dict = field(default_factory=dict)
    # "variant|configuration" -> number of failed generations
    failures: Dict[str, int] = field(default_factory=dict)

    def to_record(self):
        return {
            'kind': 'study',
            'experiment': self.experiment,
            'variants': [str(v) for v in self.grid.index],
            'configurations': list(self.grid.columns),
            'grid': [[self.grid.loc[v, c] for c in self.grid.columns] for v in self.grid.index],
            'reference_fid': self.reference_fid.to_record() if self.reference_fid is not None else None,
            'failures': self.failures,
            'metadata': self.metadata,
        }

    @classmethod
    def from_record(cls, record):
        grid = pd.DataFrame(record['grid'], index=pd.Index(record['variants'], name='variant'),
                            columns=record['configurations'], dtype=object)
        reference = record.get('reference_fid')
        if reference is not None:
            reference = FIDResult(reference['value'], reference['n_a'], reference['n_b'], reference['embedder_id'],
                                  reference['epsilon_used'])
        return cls(record['experiment'], grid, reference, dict(record.get('metadata', {})),
                   dict(record.get('failures', {})))


def save_study_report(report, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_record(), f, indent=4, ensure_ascii=False)
    return path


def load_any_report(path):
    """Load a study report or a metric report, telling them apart by their kind."""
    with open(path, encoding='utf-8') as f:
        record = json.load(f)
    kind = record.get('kind')
    if kind == 'study':
        return StudyReport.from_record(record)
    if kind == 'ma':
        return MAReport.from_record(record)
    raise ValueError("{} is not a study or mA report (kind={!r})".format(path, kind))


def read_grid_csv(path):
    """Parse a grid written by emit_report back into the same cell values."""
    raw = pd.read_csv(path, index_col='variant', dtype=str, keep_default_na=False)
    cells = {c: [v if _FAIL_PATTERN.match(v) else float(v) for v in raw[c]] for c in raw.columns}
    return pd.DataFrame(cells, index=pd.Index(raw.index.astype(str), name='variant'), dtype=object)


def _format_cell(value):
    return value if isinstance(value, str) else "{:.2f}".format(value)


def _text_table(frame, float_columns=None):
    formatted = frame.copy()
    for column in float_columns if float_columns is not None else formatted.columns:
        formatted[column] = formatted[column].map(_format_cell)
    return formatted.to_string()


def emit_report(report, formats, out_dir):
    """
    Render a report in the requested formats.
    @param report: a StudyReport, an MAReport or a ComparisonTable
    @param formats: any subset of {table, csv, plot}
    @param out_dir: directory the files go to (plots go to out_dir/figures)
    @return: list of written paths
    """
    formats = set(formats)
    unknown = formats - set(FORMATS)
    if unknown:
        raise ValueError("unknown report format(s): {}".format(", ".join(sorted(unknown))))
    if not formats:
        return []
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, StudyReport):
        return _emit_study(report, formats, out_dir)
    if isinstance(report, MAReport):
        return _emit_ma(report, formats, out_dir)
    if isinstance(report, ComparisonTable):
        return _emit_comparison(report, formats, out_dir)
    raise TypeError("cannot render a {}".format(type(report).__name__))


def _emit_study(report, formats, out_dir):
    paths = []
    grid = report.grid.copy()
    grid.index = grid.index.map(str)
    grid.index.name = 'variant'
    if 'table' in formats:
        path = out_dir / 'study-grid.txt'
        lines = ["FID per configuration ({})".format(report.experiment), _text_table(grid)]
        if report.reference_fid is not None:
            lines.append("reference subset FID: {:.2f} (n={}, full={})".format(
                report.reference_fid.value, report.reference_fid.n_a, report.reference_fid.n_b))
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        paths.append(path)
    if 'csv' in formats:
        path = out_dir / 'study-grid.csv'
        grid.to_csv(path, index_label='variant')
        paths.append(path)
    if 'plot' in formats:
        long = grid.reset_index().melt(id_vars='variant', var_name='configuration', value_name='FID')
        long = long[long['FID'].map(lambda v: not isinstance(v, str))].astype({'FID': float})
        if long.empty:
            logger.warning("Every cell of the %s grid failed, no plot drawn", report.experiment)
            return paths
        paths.append(_bar_plot(long, x='variant', y='FID', hue='configuration',
                               path=out_dir / 'figures' / 'study-{}.png'.format(report.experiment),
                               reference=report.reference_fid.value if report.reference_fid is not None else None))
    return paths


def _emit_ma(report, formats, out_dir):
    paths = []
    table = ma_table(report)
    if 'table' in formats:
        path = out_dir / 'ma-report.txt'
        text = _text_table(table.set_index('attribute'), ['mA'])
        path.write_text("{}\nmean mA: {:.2f}\n".format(text, report.mean_ma), encoding='utf-8')
        paths.append(path)
    if 'csv' in formats:
        path = out_dir / 'ma-report.csv'
        table.to_csv(path, index=False)
        paths.append(path)
    if 'plot' in formats:
        paths.append(_bar_plot(table, x='attribute', y='mA', hue=None, path=out_dir / 'figures' / 'ma-report.png',
                               rotate=True))
    return paths


def _emit_comparison(table, formats, out_dir):
    paths = []
    rows = table.rows
    if 'table' in formats:
        path = out_dir / 'comparison.txt'
        text = _text_table(rows.set_index('attribute'), ['ma_a', 'ma_b', 'delta'])
        path.write_text("{}\nmean mA: {:.2f} -> {:.2f} (delta {:+.2f})\n".format(
            text, table.mean_ma_a, table.mean_ma_b, table.mean_delta), encoding='utf-8')
        paths.append(path)
    if 'csv' in formats:
        path = out_dir / 'comparison.csv'
        rows.to_csv(path, index=False)
        paths.append(path)
    if 'plot' in formats:
        long = rows.rename(columns={'ma_a': 'without synthetic', 'ma_b': 'with synthetic'}).melt(
            id_vars='attribute', value_vars=['without synthetic', 'with synthetic'], var_name='training',
            value_name='mA')
        paths.append(_bar_plot(long, x='attribute', y='mA', hue='training',
                               path=out_dir / 'figures' / 'ma-comparison.png', rotate=True))
    return paths


def _bar_plot(data, x, y, hue, path, reference=None, rotate=False):
    path.parent.mkdir(parents=True, exist_ok=True)
    width = max(6, 0.35 * data[x].nunique() + 3)
    fig = plt.figure(figsize=(width, 5))
    ax = sns.barplot(data=data, x=x, y=y, hue=hue)
    if reference is not None:
        ax.axhline(reference, linestyle='--', color='grey', label='reference')
    if rotate:
        plt.xticks(rotation=90)
    if hue is not None or reference is not None:
        plt.legend()
    plt.savefig(path, bbox_inches='tight')
    plt.close(fig)
    return path
