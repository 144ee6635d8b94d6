import xml.etree.ElementTree as ET

from ccrkit.experiments import Record
from ccrkit.plotting import plot_experiments


def records():
    out = []
    for seed in (1, 2, 3):
        for w in (0.0, 0.3, 0.6):
            for v in ("matcher", "ccr"):
                out.append(Record("wer", v, seed, 0.9 - w / 2 + 0.01 * seed, 100, train_wer=0.15, test_wer=w))
        out.append(Record("missing", "ccr", seed, 0.3, 100, train_wer=0.16))
    return out


def test_svgs_are_well_formed_and_deterministic(tmp_path):
    a = plot_experiments(records(), tmp_path / "a")
    b = plot_experiments(records(), tmp_path / "b")
    assert sorted(p.name for p in a) == ["missing.svg", "wer.svg"]
    for pa, pb in zip(a, b):
        root = ET.parse(pa).getroot()
        assert root.tag.endswith("svg")
        assert pa.read_bytes() == pb.read_bytes()


def test_no_records_no_figures(tmp_path):
    assert plot_experiments([], tmp_path) == []
