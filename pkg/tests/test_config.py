import os

import pytest

from polca.config import (ConfigError, DiurnalProfile, GpuSpec, PolicyConfig,
                          PowerModelParams, default_config, load_config,
                          save_config)


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_all_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg.policy.t1 == 0.80
    assert cfg.policy.t2 == 0.89
    assert cfg.cluster.baseline_servers == 40
    assert cfg.cluster.budget_watts == 40 * cfg.cluster.server.provisioned_watts
    assert len(cfg.cluster.workloads) == 3


def test_threshold_override_keeps_other_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "[policy]\nt1 = 0.75\nt2 = 0.85\n"))
    assert cfg.policy.t1 == 0.75
    assert cfg.policy.t2 == 0.85
    assert cfg.policy.f_lp_t1 == 1275.0
    assert cfg.policy.t1_buffer == 0.05
    assert cfg.cluster.baseline_servers == 40


def test_inverted_thresholds_name_the_invariant(tmp_path):
    with pytest.raises(ConfigError, match="t1 < t2"):
        load_config(write(tmp_path, "[policy]\nt1 = 0.9\nt2 = 0.85\n"))


def test_round_trip_identity(tmp_path):
    src = write(tmp_path, "\n".join([
        "[cluster]", "baseline_servers = 13", "rng_seed = 99",
        "host_power_watts = 1800.5",
        "[policy]", "t1 = 0.78", "oob_latency_s = 35",
        "[power_model]", "gamma = 1.4",
        "[profile]", "base_rate = 0.25", "amplitude = 0.4",
        "[workload.solo]", "prompt_min = 10", "prompt_max = 20",
        "output_min = 5", "output_max = 9", "mix_ratio = 1.0",
        "priority = split", "low_fraction = 0.25",
    ]))
    cfg = load_config(src)
    out = tmp_path / "saved.ini"
    save_config(cfg, out)
    assert load_config(out) == cfg


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="policy.bogus"):
        load_config(write(tmp_path, "[policy]\nbogus = 1\n"))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="mystery"):
        load_config(write(tmp_path, "[mystery]\nx = 1\n"))


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/polca.ini")


def test_parse_error_reported(tmp_path):
    with pytest.raises(ConfigError, match="parse error"):
        load_config(write(tmp_path, "t1 = 0.8\n"))  # key before any section


def test_mix_ratio_sum_enforced(tmp_path):
    text = "\n".join([
        "[workload.a]", "prompt_min = 1", "prompt_max = 2",
        "output_min = 1", "output_max = 2", "mix_ratio = 0.7",
        "[workload.b]", "prompt_min = 1", "prompt_max = 2",
        "output_min = 1", "output_max = 2", "mix_ratio = 0.7",
    ])
    with pytest.raises(ConfigError, match="mix_ratio"):
        load_config(write(tmp_path, text))


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("POLCA_SEED", "12345")
    cfg = load_config(write(tmp_path, ""))
    assert cfg.cluster.rng_seed == 12345
    monkeypatch.setenv("POLCA_SEED", "not-an-int")
    with pytest.raises(ConfigError, match="POLCA_SEED"):
        load_config(write(tmp_path, ""))


def test_gpu_invariants():
    with pytest.raises(ConfigError, match="idle_fraction"):
        GpuSpec(idle_fraction=1.5).validate()
    with pytest.raises(ConfigError, match="f_min"):
        GpuSpec(f_min=2000.0).validate()


def test_policy_frequency_ordering():
    with pytest.raises(ConfigError, match="f_lp_t2"):
        PolicyConfig(f_lp_t2=1300.0).validate()
    with pytest.raises(ConfigError, match="f_hp_t2"):
        PolicyConfig(f_hp_t2=1500.0).validate(GpuSpec())


def test_buffer_invariants():
    with pytest.raises(ConfigError, match="t2 - t2_buffer > t1"):
        PolicyConfig(t1=0.85, t2=0.89).validate()


def test_power_model_fraction_chain():
    with pytest.raises(ConfigError, match="p_prompt_base_frac"):
        PowerModelParams(p_token_frac=0.8, p_prompt_base_frac=0.7).validate()


def test_profile_amplitude_bound():
    with pytest.raises(ConfigError, match="amplitude"):
        DiurnalProfile(amplitude=1.2).validate()


def test_default_config_is_valid():
    cfg = default_config()
    assert cfg.cluster.total_servers == 40
    assert cfg.power.gamma == pytest.approx(1.3655)
