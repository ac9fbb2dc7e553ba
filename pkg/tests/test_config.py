import pytest

from stacktier.config import config_from_dict, parse_config
from stacktier.errors import ConfigError


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


def test_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "seed: 3\n"))
    assert cfg.max_missing_fraction == 0.20
    assert cfg.test_fraction == 0.20
    assert cfg.stack.k == 5 and cfg.seed == 3
    assert (cfg.stack.combiner, cfg.stack.meta) == ("RF", "RF")
    assert cfg.stack.families == ("random_forest", "gbm", "xgb", "linear_svc")
    assert cfg.smote is not None and cfg.smote.k_neighbors == 5 and cfg.smote.seed == 3
    assert len(cfg.stack.grids["gbm"]) == 12 and len(cfg.stack.grids["xgb"]) == 48
    assert cfg.stack.combiner_specs["RF"].params["n_trees"] == 300
    assert parse_config(write(tmp_path, "")).seed == 0


def test_typo_names_nearest_key(tmp_path):
    with pytest.raises(ConfigError, match="'metta_kind'.*did you mean 'meta_kind'"):
        parse_config(write(tmp_path, "metta_kind: RF\n"))
    with pytest.raises(ConfigError, match="k_neighbours.*k_neighbors"):
        config_from_dict({"smote": {"k_neighbours": 3}})
    with pytest.raises(ConfigError, match="learning_rte.*learning_rate"):
        config_from_dict({"grids": {"gbm": {"learning_rte": [0.1]}}})


@pytest.mark.parametrize("raw", [
    {"max_missing_fraction": 1.0}, {"test_fraction": 0.0}, {"test_fraction": 1.2},
    {"k": 1}, {"threads": 0}, {"levels": 3}, {"families": ["fcn"]},
    {"meta_kind": "SVM"}, {"stacking": "RF"}, {"smote": {"target_ratio": 1.5}},
    {"selection": {"metrics": ["f2"]}}, {"grids": {"gbm": {"learning_rate": [0]}}},
    {"stacking": "RF-RF", "meta_kind": "LR"}, {"seed": -1}, {"ablation": {"counts": []}},
])
def test_out_of_range_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_stacking_switch_and_grid_expansion():
    for name in ("LR-LR", "RF-LR", "RF-RF", "LR-RF"):
        cfg = config_from_dict({"stacking": name})
        assert f"{cfg.stack.combiner}-{cfg.stack.meta}" == name
    cfg = config_from_dict({"grids": {"gbm": {"n_rounds": [10, 20], "learning_rate": [0.1, 0.2,
                                                                                    0.3]},
                                      "linear_svc": [{"C": [1.0]}, {"C": 2.0, "epochs": 3}]}})
    assert len(cfg.stack.grids["gbm"]) == 6
    assert [s.params["C"] for s in cfg.stack.grids["linear_svc"]] == [1.0, 2.0]


def test_invalid_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="YAML"):
        parse_config(write(tmp_path, "a: [1,\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config(write(tmp_path, "- 1\n- 2\n"))


def test_overrides_and_fingerprint(tmp_path):
    cfg = config_from_dict({"seed": 1})
    fp = cfg.fingerprint()
    assert cfg.with_overrides(threads=4, output_dir="x").fingerprint() == fp
    o = cfg.with_overrides(seed=9)
    assert o.seed == 9 and o.smote.seed == 9 and o.stack.smote.seed == 9
    assert o.fingerprint() != fp
    c = cfg.with_overrides(compat_presplit_smote=True)
    assert c.compat_presplit_smote and c.stack.smote is None
    rel = parse_config(write(tmp_path, "data: d.csv\n"))
    assert rel.data == str(tmp_path / "d.csv")
