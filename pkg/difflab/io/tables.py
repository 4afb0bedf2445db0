"""CSV and JSON artifact codecs

Floats are written in scientific notation with nine significant digits and a
bare exponent (1.0 becomes 1.00000000e0) so that reruns compare byte for byte.
"""

import csv
import json
import logging
import numbers

import numpy as np

from difflab.errors import NumericalFailure

log = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9


class NonFiniteValue(NumericalFailure):
    """A NaN or infinity was about to be written into an artifact"""
    def __init__(self, column, row):
        super(NonFiniteValue, self).__init__('refusing non-finite value in column %s, row %d' % (column, row))


def format_float(value):
    mantissa, exponent = ('%.*e' % (SIGNIFICANT_DIGITS - 1, value)).split('e')
    return '%se%d' % (mantissa, int(exponent))


def _cell(value, column, row):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        if not np.isfinite(value):
            raise NonFiniteValue(column, row)
        return format_float(float(value))
    if value is None:
        return ''
    return str(value)


def emit_csv(header, rows, path):
    """Writes a header row then the data rows

    Every row must have as many cells as the header."""
    header = list(header)
    cells = []
    for i, row in enumerate(rows):
        row = list(row)
        if len(row) != len(header):
            raise ValueError('row %d has %d cells, header has %d' % (i, len(row), len(header)))
        cells.append([_cell(v, c, i) for c, v in zip(header, row)])

    with open(path, 'w', encoding='utf-8', newline='') as fd:
        writer = csv.writer(fd, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(cells)
    log.info('wrote %d rows to %s', len(cells), path)


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        if hasattr(value, '_asdict'):
            return _plain(value._asdict())
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        value = float(value)
        if not np.isfinite(value):
            raise NumericalFailure('refusing non-finite value %r in a JSON artifact' % value)
        return value
    return value


def emit_json(document, path):
    """Writes a mapping as sorted, indented JSON; numpy values become plain"""
    document = _plain(document)
    with open(path, 'w', encoding='utf-8') as fd:
        json.dump(document, fd, indent=2, sort_keys=True)
        fd.write('\n')
    log.info('wrote %s', path)
