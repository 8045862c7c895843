import csv
import io

import numpy as np
import pytest

from luna_eeg.bench import (CSV_COLUMNS, MODELS, affine_r2, anchor_summary, full_flops, get_model, measure_luna,
                            memory_model, power_exponent, ratio_report, sweep)
from luna_eeg.model import encoder_flops, preset
from luna_eeg.numeric import ConfigError

BASE = preset("base")
TINY = preset("tiny")


def test_full_attention_term_quadruples():
    a = full_flops(BASE, 1, 16, 32).attention_flops
    b = full_flops(BASE, 1, 16, 64).attention_flops
    assert b == 4 * a


def test_self_ratio_is_one():
    pt = {"cfg": BASE, "S": 20, "C": 22}
    assert ratio_report("luna", "luna", pt) == 1.0


def test_alt_channels_ratio_grows_linearly():
    ratios = [ratio_report("alt_channels", "luna", {"cfg": BASE, "S": 20, "C": c}) for c in (64, 128, 256, 512)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    # attention part of alt_channels is quadratic in C, LUNA's is linear
    att = [get_model("alt_channels").flops(BASE, 1, 20, c).attention_flops for c in (64, 128)]
    assert att[1] == 4 * att[0]


def test_luna_matches_encoder_ledger():
    assert MODELS["luna"].flops(TINY, 2, 5, 7) == encoder_flops(TINY, 2, 7, 5)
    assert measure_luna(TINY, 2, 5, 7) == encoder_flops(TINY, 2, 7, 5)


def test_linear_attention_term_linear_in_tokens():
    a = get_model("linear").flops(BASE, 1, 10, 20).attention_flops
    b = get_model("linear").flops(BASE, 1, 10, 40).attention_flops
    assert b == 2 * a


def test_memory_properties():
    for name in MODELS:
        vals = [memory_model(name, BASE, 1, 20, c) for c in (8, 16, 32, 64)]
        assert all(v > 0 for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:])), name
    assert memory_model("luna", BASE, 1, 20, 128) < memory_model("full", BASE, 1, 20, 128)
    assert memory_model("luna", BASE, 2, 20, 8) > memory_model("luna", BASE, 1, 20, 8)


def test_sweep_rows_csv_and_monotonic(tmp_path):
    rep = sweep("channels", [2, 4, 8], fixed={"cfg": TINY, "S": 3, "B": 1})
    assert len(rep.rows) == 15
    for name in ("luna", "full", "alt_patches", "alt_channels", "linear"):
        s = rep.series(name)
        assert all(b > a for a, b in zip(s, s[1:]))
    assert {r.source for r in rep.rows if r.model == "luna"} == {"measured"}
    text = rep.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == text
    body = [l for l in text.splitlines() if not l.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 15
    assert any("decoder" in l for l in text.splitlines() if l.startswith("#"))
    assert "plot" in rep.gnuplot_script("s.csv")


def test_sweep_exponents():
    rep = sweep("channels", [8, 16, 32, 64], fixed={"cfg": TINY, "S": 4}, measure=False)
    assert rep.exponents["full"] == pytest.approx(2.0, abs=1e-9)
    # cross-attention is linear in C, temporal attention is C-independent
    assert 0 < rep.exponents["luna"] < 1.0
    assert rep.r2["luna"] == pytest.approx(1.0, abs=1e-12)
    rep = sweep("patches", [8, 16, 32], fixed={"cfg": TINY, "C": 4}, measure=False, models=("alt_patches",))
    assert rep.exponents["alt_patches"] == pytest.approx(2.0, abs=1e-9)


def test_sweep_bad_grid():
    with pytest.raises(ConfigError):
        sweep("channels", [8, 8, 16])
    with pytest.raises(ConfigError):
        sweep("channels", [])
    with pytest.raises(ConfigError):
        sweep("channels", [8], models=("nope",), measure=False)


def test_budget_fallback_is_flagged():
    rep = sweep("channels", [2, 64], fixed={"cfg": TINY, "S": 3}, models=("luna",), memory_budget=20_000)
    src = {r.axis_value: r.source for r in rep.rows}
    assert src == {2: "measured", 64: "analytic"}


def test_fit_helpers():
    assert affine_r2([1, 2, 3], [3, 5, 7]) == pytest.approx(1.0)
    assert power_exponent([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)


def test_anchor_summary():
    s = anchor_summary()
    assert s["r2"] > 0.98
    assert s["slope_per_channel"] == pytest.approx(2.5e6, rel=1e-9)
    assert s["implied_patches_mac_convention"] == pytest.approx(2 * s["implied_patches_flop_convention"])
    assert 10 < s["implied_patches_flop_convention"] < 100
