import pytest

from strokenet.config import PRESETS, load_config, resolve_config


def test_presets_load():
    for name in PRESETS:
        app = load_config(name)
        assert app.generate.config_id == name
        assert app.train.steps > 0
        assert app.source.endswith(f"{name}.ini")


def test_easy_preset_shape():
    app = load_config("easy")
    assert app.generate.size_range == (15.0, 40.0)
    assert app.generate.angle_range == (0.0, 0.0)
    assert app.generate.words_per_image == (1, 3)
    assert app.generate.canvas == (128, 128)
    assert app.generate.background_complexity == 0
    assert app.train.input_size == 128
    assert app.train.end_trim < 0.5


def test_path_config(tmp_path):
    ini = tmp_path / "mine.ini"
    ini.write_text("[train]\nsteps = 7\nlr = 0.5\n\n[generate]\n"
                   "size_min = 20\nsize_max = 30\n")
    app = load_config(ini)
    assert app.train.steps == 7
    assert app.train.lr == 0.5
    assert app.generate.size_range == (20.0, 30.0)
    # unspecified keys keep their defaults
    assert app.train.batch_size == 8


def test_unknown_key_is_hard_error(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(ValueError, match="learning_rate"):
        load_config(ini)


def test_unknown_section_is_hard_error(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[optimizer]\nlr = 0.1\n")
    with pytest.raises(ValueError, match="optimizer"):
        load_config(ini)


def test_bad_value_type(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[train]\nsteps = plenty\n")
    with pytest.raises(ValueError, match="steps"):
        load_config(ini)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        resolve_config("no_such_config.ini")


def test_loss_weight_keys(tmp_path):
    ini = tmp_path / "w.ini"
    ini.write_text("[train]\nl4 = 0\nl5 = 0\nl1 = 2.0\n")
    app = load_config(ini)
    assert app.train.loss_weights.l1 == 2.0
    assert app.train.loss_weights.l4 == 0.0
    assert app.train.loss_weights.l5 == 0.0


def test_inference_section(tmp_path):
    ini = tmp_path / "inf.ini"
    ini.write_text("[inference]\nscore_thresh = 0.4\nstroke_keep = 0.2\n")
    app = load_config(ini)
    assert app.train.score_thresh == 0.4
    assert app.train.stroke_keep == 0.2


def test_inline_comments(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nsteps = 9  # a comment\n")
    assert load_config(ini).train.steps == 9
