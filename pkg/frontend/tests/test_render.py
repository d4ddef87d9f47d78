import io
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from anls_plot import FigureSpec, PlotError, read_table, render
from anls_plot.cli import main as cli_main

TRACE = """# config_hash=abc123
t,mass,energy,h1,l2mu
0.0,1.0,2.0,3.0,4.0
0.1,1.0000000001,2.0000002,3.01,4.02
0.2,0.9999999998,1.9999997,3.02,4.01
"""

CONV = """# config_hash=fff000
eps,diff,variant,fitted_rate
0.5,0.4,renormalized,0.97
0.25,0.2,renormalized,0.97
0.125,0.1,renormalized,0.97
0.5,0.41,unrenormalized,0.01
0.25,0.4,unrenormalized,0.01
0.125,0.39,unrenormalized,0.01
"""

SPECTRUM = """# config_hash=1234ab
j,norm,fitted_slope
1,0.5,1.1
2,1.1,1.1
3,2.4,1.1
4,5.2,1.1
"""

QUOT = """# config_hash=77aa77
j,quotient
1,0.21
2,0.2
3,0.18
4,0.14
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _pixels(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


@pytest.mark.parametrize("kind,text", [
    ("drift", TRACE), ("convergence", CONV),
    ("spectrum", SPECTRUM), ("quotient", QUOT),
])
def test_kinds_render(tmp_path, kind, text):
    csv = _write(tmp_path, f"{kind}.csv", text)
    out = str(tmp_path / f"{kind}.png")
    render(FigureSpec(inputs=[csv], kind=kind, out_path=out))
    px = _pixels(out)
    assert px.shape[0] > 100 and px.shape[1] > 100
    assert px.std() > 0          # not a blank canvas


def test_pixel_identical_renders(tmp_path):
    csv = _write(tmp_path, "trace.csv", TRACE)
    a = str(tmp_path / "a.png")
    b = str(tmp_path / "b.png")
    render(FigureSpec(inputs=[csv], kind="drift", out_path=a))
    render(FigureSpec(inputs=[csv], kind="drift", out_path=b))
    assert np.array_equal(_pixels(a), _pixels(b))


def test_missing_column_names_column(tmp_path):
    bad = TRACE.replace("energy", "enerjy")
    csv = _write(tmp_path, "bad.csv", bad)
    with pytest.raises(PlotError, match="'energy'"):
        render(FigureSpec(inputs=[csv], kind="drift",
                          out_path=str(tmp_path / "x.png")))


def test_empty_data_rejected(tmp_path):
    csv = _write(tmp_path, "empty.csv", "# config_hash=aa\nt,mass,energy,h1,l2mu\n")
    with pytest.raises(PlotError, match="no data rows"):
        render(FigureSpec(inputs=[csv], kind="drift",
                          out_path=str(tmp_path / "x.png")))


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(PlotError, match="unknown figure kind"):
        FigureSpec(inputs=["x.csv"], kind="sparkline", out_path="y.png")


def test_table_reader_roundtrip(tmp_path):
    csv = _write(tmp_path, "q.csv", QUOT)
    tab = read_table(csv)
    assert tab.config_hash == "77aa77"
    assert tab.columns == ["j", "quotient"]
    assert tab.column("quotient")[0] == 0.21
    with pytest.raises(PlotError, match="'nope'"):
        tab.column("nope")


def test_spectrum_accepts_block_norm_alias(tmp_path):
    csv = _write(tmp_path, "s.csv", SPECTRUM.replace("norm,", "block_norm,"))
    out = str(tmp_path / "s.png")
    render(FigureSpec(inputs=[csv], kind="spectrum", out_path=out))
    assert _pixels(out).std() > 0


def test_annotation_is_passthrough(tmp_path):
    """The slope drawn comes from the CSV even when the data disagree."""
    lying = SPECTRUM.replace("1.1", "9.9")
    a = _write(tmp_path, "a.csv", SPECTRUM)
    b = _write(tmp_path, "b.csv", lying)
    pa = str(tmp_path / "a.png")
    pb = str(tmp_path / "b.png")
    render(FigureSpec(inputs=[a], kind="spectrum", out_path=pa))
    render(FigureSpec(inputs=[b], kind="spectrum", out_path=pb))
    assert not np.array_equal(_pixels(pa), _pixels(pb))


def test_cli_roundtrip(tmp_path):
    csv = _write(tmp_path, "q.csv", QUOT)
    out = str(tmp_path / "cli.png")
    assert cli_main(["--kind", "quotient", "--in", csv, "--out", out]) == 0
    assert _pixels(out).std() > 0
    missing = str(tmp_path / "nope.csv")
    assert cli_main(["--kind", "quotient", "--in", missing, "--out", out]) == 2


def test_cli_subprocess(tmp_path):
    csv = _write(tmp_path, "t.csv", TRACE)
    out = str(tmp_path / "sp.png")
    proc = subprocess.run(
        [sys.executable, "-m", "anls_plot.cli", "--kind", "drift",
         "--in", csv, "--out", out], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
