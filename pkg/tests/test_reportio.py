"""CSV cell formatting and deterministic report emission."""
import numpy as np

from minvar.reportio import format_cell, write_report


class TestFormatCell:
    def test_none_is_empty(self):
        assert format_cell(None) == ""

    def test_float_formatting(self):
        assert format_cell(0.5) == "0.5"
        assert format_cell(1.0) == "1"
        assert format_cell(1.2807448870030893) == "1.280744887"  # %g trims zeros
        assert format_cell(float("nan")) == "nan"

    def test_twelve_significant_digits_round_trip(self):
        x = 0.10923847291847362
        assert abs(float(format_cell(x)) - x) < 5e-12 * abs(x)

    def test_ints_and_strings_pass_through(self):
        assert format_cell(42) == "42"
        assert format_cell("DFL") == "DFL"
        assert format_cell(np.int64(3)) == "3"


class TestWriteReport:
    def test_layout(self, tmp_path):
        path = tmp_path / "sub" / "report.csv"  # parent created on demand
        write_report(path, "demo.v1", ["a", "b"], [[1, 0.25], ["x", None]])
        text = path.read_text()
        assert text == "# schema=demo.v1\na,b\n1,0.25\nx,\n"

    def test_byte_determinism(self, tmp_path):
        rows = [[i, float(np.sin(i))] for i in range(50)]
        p1, p2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        write_report(p1, "demo.v1", ["i", "v"], rows)
        write_report(p2, "demo.v1", ["i", "v"], [list(r) for r in rows])
        assert p1.read_bytes() == p2.read_bytes()

    def test_overwrites_existing_file(self, tmp_path):
        path = tmp_path / "r.csv"
        write_report(path, "demo.v1", ["a"], [[1], [2], [3]])
        write_report(path, "demo.v1", ["a"], [[9]])
        assert path.read_text() == "# schema=demo.v1\na\n9\n"
