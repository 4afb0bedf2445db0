import json

import numpy as np
import pytest

from difflab.errors import NumericalFailure
from difflab.io import manifest as manifests
from difflab.io.tables import NonFiniteValue, emit_csv, emit_json, format_float


def test_format_float():
    assert format_float(1.0) == '1.00000000e0'
    assert format_float(12345.678) == '1.23456780e4'
    assert format_float(1e-5) == '1.00000000e-5'
    assert format_float(-2.5) == '-2.50000000e0'
    assert format_float(0.0) == '0.00000000e0'


def test_emit_csv(tmp_path):
    path = str(tmp_path / 'table.csv')
    emit_csv(['k', 'x', 'flag', 'label'], [[3, 0.5, True, 'stable'], [np.int64(4), np.float64(2.0), False, None]],
             path)
    assert open(path, encoding='utf-8').read() == (
        'k,x,flag,label\n'
        '3,5.00000000e-1,1,stable\n'
        '4,2.00000000e0,0,\n')


def test_emit_csv_header_only(tmp_path):
    path = str(tmp_path / 'empty.csv')
    emit_csv(['a', 'b'], [], path)
    assert open(path).read() == 'a,b\n'


def test_emit_csv_refuses_bad_rows(tmp_path):
    path = str(tmp_path / 'bad.csv')
    with pytest.raises(NonFiniteValue):
        emit_csv(['a'], [[np.nan]], path)
    with pytest.raises(NonFiniteValue):
        emit_csv(['a'], [[np.inf]], path)
    with pytest.raises(ValueError):
        emit_csv(['a', 'b'], [[1.0]], path)
    assert issubclass(NonFiniteValue, NumericalFailure)


def test_emit_json(tmp_path):
    path = str(tmp_path / 'doc.json')
    emit_json({'b': np.arange(3), 'a': np.float64(0.25), 'flag': np.bool_(True), 'none': None}, path)
    text = open(path).read()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {'a': 0.25, 'b': [0, 1, 2], 'flag': True, 'none': None}
    with pytest.raises(NumericalFailure):
        emit_json({'x': float('nan')}, path)


def test_manifest(tmp_path):
    manifest = manifests.Manifest('sample', {'run': {'seed': 1}}, 1)
    manifest.add(str(tmp_path / 'terminal.csv'))
    assert not manifest.partial
    manifest.finish(manifests.NUMERICAL_FAILURE, 'diverged')
    assert manifest.partial
    path = manifest.write(str(tmp_path))
    document = json.load(open(path))
    assert document['status'] == 'numerical-failure'
    assert document['artifacts'] == ['terminal.csv']
    assert document['seed'] == 1
    assert set(document) >= {'config', 'version', 'wall_time', 'partial', 'detail'}
