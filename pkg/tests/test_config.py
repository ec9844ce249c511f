import pytest

from wavebridge import config as C
from wavebridge.schedule import ScheduleKind


def test_defaults_are_valid_and_round_trip():
    cfg = C.Config().validate()
    again = C.loads(cfg.to_toml())
    assert again == cfg
    assert cfg.schedule.params().kind is ScheduleKind.GMAX
    assert cfg.model.wavenet().receptive_field == 127


def test_partial_file_fills_defaults():
    cfg = C.loads('seed = 3\n[schedule]\nkind = "vp"\n[train]\nlr = 1e-3\n')
    assert cfg.seed == 3 and cfg.train.lr == 1e-3 and cfg.train.batch_size == 4
    p = cfg.schedule.params()
    assert (p.beta0, p.beta1) == (0.01, 20.0)


def test_preset_replaces_steps():
    cfg = C.loads("[sampler]\nkind = \"sde2\"\npreset = 4\n")
    assert cfg.sampler.steps is None and cfg.sampler.preset == 4
    assert "steps" not in cfg.to_dict()["sampler"]


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "mystery = 1\n",
    "[train]\nlr = \"fast\"\n",
    "[train]\nbatch_size = 2.5\n",
    "[train]\nt_min = 1.5\n",
    "[schedule]\nkind = \"cosine\"\n",
    "[schedule]\nkind = \"gmax\"\nbeta0 = 1.0\nbeta1 = 0.5\n",
    "[sampler]\nkind = \"euler\"\n",
    "[sampler]\npreset = 4\nsteps = 8\n",
    "[data]\nmin_input_rate = 30000\nmax_input_rate = 8000\n",
    "[data]\nfamilies = [\"bessel\"]\n",
    "[aux]\nlambda_mag = -1.0\n",
    "seed = true\n",
    "[train\n",
])
def test_bad_configs_raise_config_error(text):
    with pytest.raises(C.ConfigError):
        C.loads(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(C.ConfigError):
        C.load(tmp_path / "missing.toml")
