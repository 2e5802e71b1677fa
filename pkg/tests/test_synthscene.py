import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdownscale.errors import ConfigError, DimensionError
from smdownscale.rastergrid import BARE, CORN, COTTON, Raster, Variable, block_mean
from smdownscale.synthscene import (
    LAI_PEAK,
    CropCalendar,
    SceneConfig,
    build_scene,
    doy,
    field_lai,
    generate_landcover,
    generate_layout,
    generate_weather,
    lai_curve,
    load_scene,
    save_scene,
    scene_from_path,
    step_water_balance,
)


def test_default_grids(default_scene):
    s = default_scene
    assert s.raster(Variable.LC, 1, resolution_m=200).values.shape == (250, 250)
    assert s.truth[Variable.SM].shape == (730, 50, 50)
    assert s.coarse_sm.shape == (730, 5, 5)


def test_year_two_coarse_days(default_scene):
    days = default_scene.coarse_days
    n = int(((days > 365) & (days <= 730)).sum())
    assert 120 <= n <= 124


def test_landcover_calendar():
    cfg = SceneConfig()
    lc = generate_landcover(cfg)
    assert np.all(lc.day(39).values == BARE)
    mid = lc.day(222).values
    assert (mid == CORN).any() and (mid == COTTON).any()
    # second year follows the same calendar
    assert np.array_equal(lc.day(222 + 365).values, mid)
    assert len(lc) == 730


def test_single_cotton_field():
    cfg = SceneConfig(n_fields=1, field_crops=("cotton",), years=1)
    assert np.all(generate_landcover(cfg).day(200).values == COTTON)


def test_layout_is_a_partition():
    layout = generate_layout(SceneConfig())
    fid = layout.field_id
    assert fid.min() == 0 and fid.max() == layout.n_fields - 1
    areas = [(r1 - r0) * (c1 - c0) for r0, r1, c0, c1 in layout.rects]
    assert sum(areas) == 250 * 250
    assert np.array_equal(np.bincount(fid.ravel()), areas)


def test_too_many_fields():
    with pytest.raises(ConfigError):
        generate_layout(SceneConfig(n_fields=10_000))


def test_lai_curve_shape():
    assert lai_curve("sweet_corn", 0, 78) == 0.0
    for crop, L in (("sweet_corn", 78), ("cotton", 179)):
        assert lai_curve(crop, 0.7 * L, L) == pytest.approx(LAI_PEAK[crop], rel=1e-12)
        vals = np.array([lai_curve(crop, d, L) for d in range(L + 1)])
        assert vals.min() >= 0
        diff = np.diff(vals)
        signs = np.sign(diff[diff != 0])
        assert np.count_nonzero(np.diff(signs)) == 1
        assert vals[-1] <= 0.8 * vals.max()
    with pytest.raises(ValueError):
        lai_curve("cotton", -1, 10)


def test_lai_zero_outside_season():
    layout = generate_layout(SceneConfig())
    cal = CropCalendar()
    for day in range(1, 366):
        lai = field_lai(layout, cal, day)
        for k, crop in enumerate(layout.crops):
            if crop == "bare" or cal.season(crop, doy(day)) is None:
                assert lai[k] == 0.0


def test_no_rain_no_crops_means_no_ppt():
    cfg = SceneConfig(rain_event_rate=0.0, years=1)
    layout = generate_layout(cfg)
    sm = np.full((250, 250), 0.01 + cfg.wilting_point)
    w = generate_weather(cfg, 20, layout, sm)
    assert np.all(w.ppt == 0)


def test_irrigation_only_on_dry_corn_field():
    cfg = SceneConfig(rain_event_rate=0.0, years=1, n_fields=2, field_crops=("sweet_corn", "bare"))
    layout = generate_layout(cfg)
    sm = np.full((250, 250), cfg.wilting_point)
    w = generate_weather(cfg, 100, layout, sm)
    corn = layout.field_id == 0
    assert np.all(w.ppt[corn] > 0) and np.all(w.ppt[~corn] == 0)
    assert w.irrigated_fields == (0,)


def test_rain_event_count_is_poisson(default_scene):
    cfg = default_scene.config
    total = int(default_scene.rain_event_counts.sum())
    expected = cfg.rain_event_rate / 7.0 * cfg.n_days
    assert abs(total - expected) <= 3 * np.sqrt(expected)


def test_water_balance_fixed_point():
    cfg = SceneConfig()
    sm = Raster(Variable.SM, 200, 1, np.full((3, 3), cfg.wilting_point))
    zero = Raster(Variable.PPT, 200, 2, np.zeros((3, 3)))
    lai = Raster(Variable.LAI, 200, 2, np.zeros((3, 3)))
    out, _ = step_water_balance(sm, zero, lai, 300.0, cfg)
    assert np.array_equal(out.values, sm.values)
    assert out.day == 2


def test_water_balance_dry_down():
    cfg = SceneConfig()
    sm = Raster(Variable.SM, 200, 1, np.full((1, 2), 0.2))
    lai = Raster(Variable.LAI, 200, 1, np.array([[0.0, 3.0]]))
    wet = Raster(Variable.PPT, 200, 1, np.full((1, 2), 5.0))
    dry = Raster(Variable.PPT, 200, 1, np.zeros((1, 2)))
    sm, _ = step_water_balance(sm, wet, lai, 300.0, cfg)
    prev = sm.values
    for _ in range(30):
        sm, _ = step_water_balance(sm, dry, lai, 300.0, cfg)
        assert np.all(sm.values <= prev)
        assert np.all((prev == cfg.wilting_point) | (sm.values < prev))
        prev = sm.values


def test_vegetation_cools_lst():
    cfg = SceneConfig()
    sm = Raster(Variable.SM, 200, 1, np.full((1, 2), 0.25))
    lai = Raster(Variable.LAI, 200, 1, np.array([[0.0, 4.0]]))
    ppt = Raster(Variable.PPT, 200, 1, np.zeros((1, 2)))
    new_sm, lst = step_water_balance(sm, ppt, lai, 300.0, cfg)
    dry_gap = cfg.lst_dryness_gain * (new_sm.values[0, 1] - new_sm.values[0, 0]) / cfg.porosity
    assert lst.values[0, 1] < lst.values[0, 0]
    assert lst.values[0, 0] - lst.values[0, 1] == pytest.approx(cfg.lst_lai_cooling * 4 + dry_gap, abs=1e-9)


def test_water_balance_geometry_mismatch():
    a = Raster(Variable.SM, 200, 1, np.full((2, 2), 0.2))
    b = Raster(Variable.PPT, 200, 1, np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        step_water_balance(a, b, Raster(Variable.LAI, 200, 1, np.zeros((2, 2))), 300.0)


def test_truth_sm_within_soil_bounds(default_scene):
    cfg = default_scene.config
    sm = default_scene.truth[Variable.SM]
    assert sm.min() >= cfg.wilting_point - 1e-12 and sm.max() <= cfg.porosity + 1e-12


def test_correlation_signs(default_scene):
    s = default_scene
    sm = s.truth[Variable.SM]
    lst = s.truth[Variable.LST]
    ppt = s.truth[Variable.PPT]
    assert np.corrcoef(sm.ravel(), lst.ravel())[0, 1] < 0
    ppt3 = ppt[:-3] + ppt[1:-2] + ppt[2:-1]  # days t-3..t-1 for t = 4..
    assert np.corrcoef(sm[3:].ravel(), ppt3.ravel())[0, 1] > 0


def test_fine_and_mid_means_agree(small_scene_config):
    s = build_scene(replace(small_scene_config, keep_fine_days="all"))
    for day in (1, 100, 200, 365):
        fine = s.raster(Variable.SM, day, resolution_m=200).values
        assert abs(fine.mean() - s.truth[Variable.SM][day - 1].mean()) <= 1e-12
        np.testing.assert_allclose(block_mean(fine, 5), s.truth[Variable.SM][day - 1], rtol=0, atol=1e-12)


def test_noisy_fields_track_truth(default_scene):
    s = default_scene
    d = s.observed[Variable.LST] - s.truth[Variable.LST]
    assert abs(d.std() - 5.0) < 0.05
    c = s.coarse_sm[np.isfinite(s.coarse_sm)] - s.coarse_sm_truth[np.isfinite(s.coarse_sm)]
    assert abs(c.std() - 0.02) < 0.002


def test_scene_determinism_and_persistence(tmp_path, small_scene_config):
    a = save_scene(build_scene(small_scene_config), tmp_path / "a")
    b = save_scene(build_scene(small_scene_config), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert files
    for rel in files[::97]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    loaded = load_scene(a)
    ref = build_scene(small_scene_config)
    for v in (Variable.SM, Variable.LST, Variable.LC):
        assert np.array_equal(loaded.truth[v], ref.truth[v])
    assert np.array_equal(loaded.coarse_sm, ref.coarse_sm, equal_nan=True)
    assert np.array_equal(loaded.observed[Variable.LAI], ref.observed[Variable.LAI], equal_nan=True)
    assert scene_from_path(a).config == ref.config


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        SceneConfig(wilting_point=0.5, porosity=0.4)
    with pytest.raises(ConfigError):
        SceneConfig(rain_event_rate=-1)
    with pytest.raises(ConfigError):
        SceneConfig(coarse_sm_cadence_days=0)
    with pytest.raises(ConfigError):
        SceneConfig.from_dict({"no_such_key": 1})
    with pytest.raises(ConfigError):
        SceneConfig(irrigation={"cotton": {"trigger": 0.1}})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        SceneConfig.from_json(p)


def test_config_json_round_trip(tmp_path):
    cfg = SceneConfig(seed=3, n_fields=12, irrigation={"cotton": {"trigger": 0.1, "dose": 1.0}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert SceneConfig.from_json(p) == cfg


def test_wilting_point_spread_is_per_field(small_scene_config):
    cfg = replace(small_scene_config, wilting_point_spread=0.03, rain_event_rate=0.0, irrigation_enabled=False)
    s = build_scene(cfg)
    final = s.raster(Variable.SM, 365, resolution_m=1000).values
    assert final.min() >= cfg.wilting_point - 0.03 - 1e-12
    assert np.ptp(final) > 0.01


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.0, 0.42),
    st.floats(0.0, 20.0),
    st.floats(0.0, 6.0),
    st.floats(270.0, 320.0),
)
def test_water_balance_stays_in_bounds(sm0, ppt, lai, temp):
    cfg = SceneConfig()
    sm0 = max(sm0, cfg.wilting_point)
    sm, _ = step_water_balance(
        Raster(Variable.SM, 200, 1, [[sm0]]), Raster(Variable.PPT, 200, 2, [[ppt]]), Raster(Variable.LAI, 200, 2, [[lai]]), temp, cfg
    )
    assert cfg.wilting_point <= sm.values[0, 0] <= cfg.porosity
