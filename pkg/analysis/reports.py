"""CSV reports: one row per amplitude, then a blank line and a key,value summary block."""
import csv
from pathlib import Path

ROW_COLUMNS = ('t', 'epsilon', 'full_gap', 'sup_gap', 'sub_epsilon', 'branch', 'dropped',
               'direct', 'via_s', 'layer', 'relative_gap')


def _format(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return '%.17g' % value
    return str(value)


def write_experiment_csv(report, path, extra=None):
    path = Path(path)
    summary = report.summary()
    summary.update(extra or {})
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(ROW_COLUMNS)
        for amplitude in report.amplitudes:
            row = amplitude.row()
            writer.writerow([_format(row[name]) for name in ROW_COLUMNS])
        writer.writerow([])
        writer.writerow(('key', 'value'))
        for key in sorted(summary):
            writer.writerow((key, _format(summary[key])))
    return path


def read_experiment_csv(path):
    """Rows as dicts of strings, and the summary block as a dict of strings"""
    lines = Path(path).read_text().splitlines()
    blank = lines.index('')
    rows = list(csv.DictReader(lines[:blank]))
    summary = {row['key']: row['value'] for row in csv.DictReader(lines[blank + 1:])}
    return rows, summary
