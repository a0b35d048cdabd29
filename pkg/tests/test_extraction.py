import json

import numpy as np
import pytest

from nilmcast.core import PowerSeries
from nilmcast.errors import ExtractionError
from nilmcast.extraction import ExtractionConfig, extract_profiles
from nilmcast.synthetic import DeviceSpec, Scenario, generate

BASE = (500.0, 450.0, 400.0, 60.0, 50.0, 40.0)


def _three_devices(days=7):
    # settle-type devices are left out on purpose: their OFF step (the settled
    # level) is far from the negated ON signature (the inrush), so the
    # nearest-negated-centre rule hands their OFFs to another cluster
    devs = (
        DeviceSpec("step", (1500.0, 1400.0, 1600.0, 300.0, 280.0, 320.0), 300, workday_rate=14, weekend_rate=8),
        DeviceSpec("step", (0.0, 3000.0, 0.0, 0.0, 2400.0, 0.0), 900, workday_rate=14, weekend_rate=8),
        DeviceSpec("oscillating", (5000.0, 0.0, 0.0, 500.0, 0.0, 0.0), 600, workday_rate=14, weekend_rate=8),
    )
    return Scenario(devices=devs, days=days, seed=3, noise_sigma=10.0, base_level=BASE, base_variation=0.02)


@pytest.fixture(scope="module")
def extracted():
    sc = _three_devices()
    data = generate(sc)
    return data, extract_profiles(data.series, ExtractionConfig(k_max=8))


def _match(truth, profiles):
    """Relative stable-state error of the closest extracted profile for each true device."""
    out = []
    for t in truth:
        errs = [np.linalg.norm(p.stable_state - t.stable_state) / np.linalg.norm(t.stable_state) for p in profiles]
        j = int(np.argmin(errs))
        out.append((j, errs[j], profiles[j].duration))
    return out


def test_recovers_each_device(extracted):
    data, res = extracted
    matches = _match(data.profiles, res.profiles)
    assert len({j for j, _, _ in matches}) == 3
    for (j, err, dur), truth in zip(matches, data.profiles):
        assert err < 0.1, (j, err)
        assert abs(dur - truth.duration) <= 0.1 * truth.duration


def test_diagnostics(extracted, tmp_path):
    _, res = extracted
    assert res.diagnostics["k_selected"] >= 3
    assert len(res.members) == len(res.profiles)
    assert [p.id for p in res.profiles] == list(range(len(res.profiles)))
    path = tmp_path / "diag.json"
    res.write_diagnostics(path)
    doc = json.loads(path.read_text())
    assert doc["events"]["on"] > 0 and "ch_curve" in doc and doc["groups"]


def test_deterministic(extracted):
    data, res = extracted
    again = extract_profiles(data.series, ExtractionConfig(k_max=8))
    assert len(again.profiles) == len(res.profiles)
    for a, b in zip(again.profiles, res.profiles):
        assert np.array_equal(a.dynamic, b.dynamic)


def test_flat_series_has_nothing_to_extract():
    flat = PowerSeries(np.tile(np.array(BASE), (5000, 1)), 0)
    with pytest.raises(ExtractionError):
        extract_profiles(flat)
