import json

import pytest
from parameterized import parameterized

from loss_bench import ScenarioError
from loss_bench.market_params import EMPIRICAL_MARKET_PARAMETERS
from loss_bench.scenario import Mode, resolve
from loss_bench.scenario.models import DEFAULT_BLOCKS, apply_overrides
from loss_bench.tool import bundled_scenarios, fingerprint, load_scenario_document


def test_defaults_fill_missing_blocks():
    scenario = resolve({"mode": "nosub"})
    assert scenario.mode is Mode.NOSUB
    assert scenario.k_obligors == [100]
    assert scenario.market_params() == EMPIRICAL_MARKET_PARAMETERS
    assert scenario.subordination_spec().total == 75.0
    assert scenario.overlap_spec().r1 == 0.5
    assert scenario.mc_config(workers=3).workers == 3
    assert scenario.quadrature_spec().z_nodes == 64


def test_given_values_win_over_defaults():
    scenario = resolve({"mode": "nosub", "market": {"c": 0.1}, "k_obligors": 20})
    assert scenario.market.c == 0.1
    assert scenario.market.rho == 0.35
    assert scenario.k_obligors == [20]
    assert DEFAULT_BLOCKS["market"]["c"] == 0.28


@parameterized.expand(
    [
        ("top_level", {"mode": "nosub", "bogus": 1}, "/bogus"),
        ("nested", {"mode": "nosub", "market": {"sigma": 0.3}}, "/market/sigma"),
        ("mode", {"mode": "unknown"}, "/mode"),
        ("missing_mode", {}, "/mode"),
    ]
)
def test_schema_errors_point_at_the_field(_, document, pointer):
    with pytest.raises(ScenarioError) as info:
        resolve(document)
    assert pointer in info.value.pointers
    assert pointer in str(info.value)


def test_overrides():
    scenario = resolve(
        {"mode": "nosub"},
        ["market.c=0.1", "k_obligors=[10,20]", "name=my_run", "mc.antithetic=true"],
    )
    assert scenario.market.c == 0.1
    assert scenario.k_obligors == [10, 20]
    assert scenario.name == "my_run"
    assert scenario.mc.antithetic


def test_overrides_leave_the_document_untouched():
    document = {"mode": "nosub", "market": {"c": 0.2}}
    apply_overrides(document, ["market.c=0.3"])
    assert document["market"]["c"] == 0.2


@parameterized.expand([("non_object", "mode.x=1"), ("no_value", "market.c"), ("no_path", "=1")])
def test_bad_overrides(_, override):
    pytest.raises(ScenarioError, resolve, {"mode": "nosub"}, [override])


def test_blocks_are_required_for_several_markets():
    scenario = resolve({"mode": "nosub"})
    pytest.raises(ScenarioError, scenario.multimarket)
    market = resolve(
        {"mode": "nosub-multimarket", "blocks": [{"size": 3}, {"size": 2, "market": {"c": 0.1}}]}
    ).multimarket()
    assert market.beta == 2
    assert market.blocks[1].params.c == 0.1
    assert market.blocks[0].params.c == 0.28


def test_every_bundled_scenario_resolves():
    bundled = bundled_scenarios()
    assert "nosub_equal_sizes" in bundled
    for name, entry in bundled.items():
        scenario = resolve(json.loads(entry.read_text()))
        assert scenario.name == name


def test_load_scenario_document(tmp_path):
    (tmp_path / "scenario.json").write_text(json.dumps({"mode": "nosub"}))
    assert load_scenario_document(tmp_path) == {"mode": "nosub"}
    assert load_scenario_document("two_markets")["mode"] == "nosub-multimarket"
    pytest.raises(ScenarioError, load_scenario_document, tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    pytest.raises(ScenarioError, load_scenario_document, broken)
    listed = tmp_path / "listed.json"
    listed.write_text("[1, 2]")
    pytest.raises(ScenarioError, load_scenario_document, listed)


def test_fingerprint_ignores_key_order():
    assert fingerprint({"a": 1, "b": [1, 2]}) == fingerprint({"b": [1, 2], "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})


if __name__ == "__main__":
    test_defaults_fill_missing_blocks()
    test_overrides()
    test_every_bundled_scenario_resolves()
