import pytest

from softctrl import config as cfgmod
from softctrl.errors import ConfigError


def test_defaults():
    cfg = cfgmod.RunConfig()
    assert cfg.bc.epochs == 30 and cfg.train.total_steps == 50_000
    assert cfg.sac.variant == "imkl" and cfg.scenarios.seeds == (0, 1, 2, 3)


def test_round_trip():
    cfg = cfgmod.loads("""
seed = 4
sac.variant = "exkl"
sac.lr_start = 1
train.total_steps = 1000
scenarios.seeds = [5, 6]
bc.head_hidden = [32, 32]
""")
    assert cfg.seed == 4 and cfg.sac.variant == "exkl" and cfg.sac.lr_start == 1.0
    assert isinstance(cfg.sac.lr_start, float)
    assert cfg.scenarios.seeds == (5, 6) and cfg.bc.head_hidden == (32, 32)
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg


def test_tables_and_dotted_keys_agree():
    a = cfgmod.loads('[sac]\nvariant = "sac"\ntau = 0.5\n')
    b = cfgmod.loads('sac.variant = "sac"\nsac.tau = 0.5\n')
    assert a == b


@pytest.mark.parametrize("text", [
    "sac.unknown = 1",
    "nonsense = 2",
    'seed = "zero"',
    "sac.auto_entropy = 1",
    'sac.variant = "ppo"',
    "seed = ",
    "sac = 3",
])
def test_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        cfgmod.loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "absent.toml")


def test_replace_nested():
    cfg = cfgmod.replace(cfgmod.RunConfig(), seed=3, sac__alpha=0.1, train__total_steps=10)
    assert (cfg.seed, cfg.sac.alpha, cfg.train.total_steps) == (3, 0.1, 10)
    with pytest.raises(ConfigError):
        cfgmod.replace(cfg, nope__x=1)


def test_weights_section():
    cfg = cfgmod.loads("sac.w_entropy = 0.72\nsac.w_kl = 0.48\n")
    assert cfg.sac.effective_tau_alpha() == pytest.approx((1.2, 0.4))
    assert "sac.w_kl = 0.48" in cfgmod.dumps(cfg)


def test_write_resolved(tmp_path):
    path = cfgmod.write_resolved(cfgmod.RunConfig(seed=9), tmp_path / "run")
    assert cfgmod.load(path).seed == 9
