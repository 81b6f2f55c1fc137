import pytest

from layerprobe.svg import _nice_ticks, line_chart


def sample_series():
    return {
        "bert": [(0, 6.0), (1, 8.4), (2, 9.5), (3, 10.7)],
        "xlnet": [(0, 5.1), (1, 7.2), (2, 8.8), (3, 9.9)],
    }


def test_line_chart_is_deterministic():
    a = line_chart(sample_series(), title="compression", xlabel="layer",
                   ylabel="bits")
    b = line_chart(sample_series(), title="compression", xlabel="layer",
                   ylabel="bits")
    assert a == b


def test_line_chart_structure():
    doc = line_chart(sample_series(), title="compression")
    assert doc.startswith("<svg ")
    assert doc.rstrip().endswith("</svg>")
    assert doc.count("<polyline") == 2
    assert "compression" in doc
    assert "bert" in doc and "xlnet" in doc
    # one marker circle per data point
    assert doc.count("<circle") == 8


def test_line_chart_orders_points_by_x():
    doc = line_chart({"s": [(2, 1.0), (0, 3.0), (1, 2.0)]})
    start = doc.index('points="') + len('points="')
    coords = doc[start:doc.index('"', start)].split()
    xs = [float(c.split(",")[0]) for c in coords]
    assert xs == sorted(xs)


def test_line_chart_rejects_empty():
    with pytest.raises(ValueError):
        line_chart({})
    with pytest.raises(ValueError):
        line_chart({"a": []})


def test_nice_ticks_cover_range():
    ticks = _nice_ticks(0.0, 10.0)
    assert ticks[0] >= 0.0 and ticks[-1] <= 10.0 + 1e-9
    assert len(ticks) >= 3
    diffs = {round(b - a, 9) for a, b in zip(ticks, ticks[1:])}
    assert len(diffs) == 1


def test_nice_ticks_degenerate_range():
    ticks = _nice_ticks(2.0, 2.0)
    assert len(ticks) >= 2
