import pytest

from freezerid.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from freezerid.estimate import RETUNE_SET
from freezerid.model import DEFAULT_TRUTH, PARAM_NAMES


def test_empty_config_is_default():
    assert parse_config("") == RunConfig()


def test_parse_typical_config():
    cfg = parse_config("""
[run]
seed = 4
[fit]
free = C_c, R_ce
init = truth
train_stop = 1440
[truth]
C_c = 50
[bounds]
C_c = 1, 500
[profile]
pinned = R_ce
cold_start = yes
""")
    assert cfg.run.seed == 4
    assert cfg.fit.free == ("C_c", "R_ce") and cfg.fit.train_stop == 1440
    assert cfg.truth.C_c == 50.0 and cfg.truth.C_w == DEFAULT_TRUTH.C_w
    assert cfg.bounds == {"C_c": (1.0, 500.0)}
    assert cfg.profile.pinned == ("R_ce",) and cfg.profile.cold_start is True
    spec = cfg.fit_spec()
    assert spec.free_names == ("C_c", "R_ce") and spec.init.C_c == 50.0
    assert spec.optimizer.seed == 4
    assert cfg.sim_config().seed == 4


def test_free_all_and_defaults():
    cfg = parse_config("[fit]\nfree = all\n")
    assert cfg.fit.free == PARAM_NAMES
    assert cfg.retune.free == RETUNE_SET


@pytest.mark.parametrize("text, match", [
    ("[fit]\nrestart = 3\n", r"\[fit\] restart: unknown key"),
    ("[fitting]\nseed = 1\n", r"\[fitting\]: unknown section"),
    ("[run]\nseed = one\n", r"\[run\] seed: cannot parse 'one' as int"),
    ("[fit]\nfree = C_c, zeta\n", r"\[fit\] free: unknown parameter 'zeta'"),
    ("[truth]\nC_c = -1\n", r"\[truth\].*C_c"),
    ("[bounds]\nC_c = 5, 1\n", r"\[bounds\] C_c: lower bound"),
    ("[bounds]\nC_c = 5\n", r"expected 'lo, hi'"),
    ("[fit]\ninit = random\n", r"\[fit\] init"),
    ("[run]\nthreads = 0\n", r"threads"),
    ("[profile]\npoints = 0\n", r"points"),
    ("[profile]\ncold_start = maybe\n", r"cannot parse 'maybe' as bool"),
    ("no section header\n", r"<config>"),
    ("[run]\nseed = 1\n[run]\nseed = 2\n", r"<config>"),
])
def test_config_errors_name_the_location(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_dump_round_trip():
    cfg = parse_config("[fit]\nfree = C_c, a\ntrain_stop = 100\n[init]\nC_c = 33.3\n[bounds]\na = 0, 2\n"
                       "[run]\nseed = 9\n[inputs]\nT_a_mean = 21.5\n")
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_overrides():
    cfg = RunConfig().with_overrides(seed=3, out="x")
    assert cfg.run.seed == 3 and cfg.run.out == "x" and cfg.run.threads == 1
    assert RunConfig().with_overrides() == RunConfig()


def test_load_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nbogus = 1\n")
    with pytest.raises(ConfigError, match=r"c\.ini \[run\] bogus"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")
