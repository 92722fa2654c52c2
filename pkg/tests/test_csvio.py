import xml.etree.ElementTree as ET

import numpy as np
import pytest

from advrl.csvio import (EPISODE_FIELDS, EVAL_FIELDS, CsvAppender, EpisodeWriter, fmt, merge,
                         read_rows)
from advrl.harness import rolling_mean
from advrl.plot import evaluations_svg, learning_curves_svg, parse_run_id


@pytest.mark.parametrize("x,text", [(1e-9, "0.000000001"), (2.5e7, "25000000"), (True, "1"),
                                    (np.int64(3), "3"), (0.1, "0.1"), ("a", "a")])
def test_fmt_never_scientific(x, text):
    assert fmt(x) == text


def test_episode_writer_rolling_column(tmp_path):
    rets = [1, -1, 1, 1, -1, 1, 1]
    with EpisodeWriter(tmp_path / "e.csv", "r", 0, window=3) as w:
        for i, r in enumerate(rets):
            w.episode(i, 10 * i, r, 0.0)
    rows = read_rows(tmp_path / "e.csv")
    assert list(rows[0]) == list(EPISODE_FIELDS)
    np.testing.assert_allclose([float(r["rolling_mean_100"]) for r in rows], rolling_mean(rets, 3))


def test_appender_rows_visible_before_close(tmp_path):
    w = CsvAppender(tmp_path / "x.csv", ("a", "b"))
    w.write(1, 2.5)
    assert read_rows(tmp_path / "x.csv") == [{"a": "1", "b": "2.5"}]
    with pytest.raises(ValueError):
        w.write(1)
    w.close()


def test_appender_reopen_keeps_single_header(tmp_path):
    for k in range(3):
        with CsvAppender(tmp_path / "x.csv", ("a",)) as w:
            w.write(k)
    assert [r["a"] for r in read_rows(tmp_path / "x.csv")] == ["0", "1", "2"]


def test_merge(tmp_path):
    for name in ("a", "b"):
        with CsvAppender(tmp_path / f"{name}.csv", ("k",)) as w:
            w.write(name)
    merge([tmp_path / "a.csv", tmp_path / "missing.csv", tmp_path / "b.csv"], tmp_path / "m.csv", ("k",))
    assert [r["k"] for r in read_rows(tmp_path / "m.csv")] == ["a", "b"]


def test_parse_run_id():
    assert parse_run_id("grid-catch-noisy-net-p0.2-s1") == {
        "env": "grid-catch", "variant": "noisy-net", "p": "0.2", "tag": None, "seed": "1"}
    assert parse_run_id("mini-pong-epsilon-greedy-train-s0")["p"] == "train"


def test_svg_from_empty_csv(tmp_path):
    (tmp_path / "episodes.csv").write_text(",".join(EPISODE_FIELDS) + "\n")
    out = learning_curves_svg(tmp_path / "episodes.csv", tmp_path / "p.svg")
    root = ET.parse(out).getroot()
    assert root.tag.endswith("svg")
    assert not [e for e in root.iter() if e.tag.endswith("polyline")]
    ET.parse(evaluations_svg(tmp_path / "nothing.csv", tmp_path / "e.svg"))


def test_svg_lines_and_dots(tmp_path):
    with EpisodeWriter(tmp_path / "episodes.csv", "grid-catch-noisy-net-p0.2-s0", 0) as w:
        for i in range(5):
            w.episode(i, i * 9, 1.0, 0.0)
    with CsvAppender(tmp_path / "evals.csv", EVAL_FIELDS) as w:
        w.write("grid-catch-noisy-net-p0.2-s0", "clean", "attacked", 1.0, -0.5, 0.1, 10)
    lines = ET.parse(learning_curves_svg(tmp_path / "episodes.csv", tmp_path / "c.svg")).getroot()
    assert len([e for e in lines.iter() if e.tag.endswith("polyline")]) == 1
    dots = ET.parse(evaluations_svg(tmp_path / "evals.csv", tmp_path / "d.svg")).getroot()
    assert len([e for e in dots.iter() if e.tag.endswith("circle")]) == 1
