"""Canonical CSV text helpers and all-or-nothing file writes."""

import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd


def _float_cells(values):
    return ["" if v != v else repr(v) for v in np.asarray(values, dtype=float).tolist()]


def frame_to_csv_text(frame, formatters=None):
    """Render ``frame`` as LF-terminated CSV, floats in canonical form.

    ``formatters`` maps a column name to a callable taking the whole column
    and returning a sequence of cell strings.
    """
    formatters = formatters or {}
    cells = []
    for col in frame.columns:
        series = frame[col]
        if col in formatters:
            cells.append(list(formatters[col](series)))
        elif pd.api.types.is_float_dtype(series):
            cells.append(_float_cells(series))
        else:
            cells.append(["" if v is None or v != v else str(v) for v in series.tolist()])
    lines = [",".join(map(str, frame.columns))]
    lines.extend(",".join(row) for row in zip(*cells))
    return "\n".join(lines) + "\n"


def _umask_mode():
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a sibling temp file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class StagedOutputs:
    """Collect several output files and publish them together.

    Nothing is written until :meth:`commit`; if any temp write fails, every
    temp file is removed and no target is touched.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self._pending = {}

    def add(self, name, text):
        self._pending[name] = text

    def __contains__(self, name):
        return name in self._pending

    def commit(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        temps = []
        try:
            for name, text in self._pending.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.out_dir)
                temps.append((tmp, self.out_dir / name))
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                os.chmod(tmp, _umask_mode())
        except BaseException:
            for tmp, _ in temps:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            raise
        for tmp, target in temps:
            os.replace(tmp, target)
        return [target for _, target in temps]
