import json

import numpy as np
import pytest

from discourse_atoms import __version__
from discourse_atoms import formats as fmt
from discourse_atoms.cli import main
from discourse_atoms.pipeline import (ConfigError, StageError, bundled_config, config_from_dict,
                                      load_config, resolve_input, resolve_workdir, run_pipeline)

SMALL = """
[paths]
corpus = "docs.txt"
sentences = ""
lexicon = ""
topics = ""
workdir = "work"

[corpus]
min_count = 2
window = 4

[embed]
dim = 8
epochs = 3
seed = 0

[sparse]
m = 12
k = 3
iters = 3
runs = 2
popular_cutoff = 1

[meta]
m2 = 3
k2 = 1
iters = 3

[theory]
worlds = 4
d = 10
contexts = 40
pairs = 0

[lineup]
enabled = false

[sentences]
enabled = false
"""


@pytest.fixture
def small_config(tmp_path):
    rng = np.random.default_rng(3)
    words = [f"tok{i}" for i in range(60)]
    p = 1.0 / np.arange(1, 61)
    lines = [" ".join(rng.choice(words, 40, p=p / p.sum())) for _ in range(150)]
    (tmp_path / "docs.txt").write_text("\n".join(lines) + "\n")
    (tmp_path / "small.toml").write_text(SMALL)
    return tmp_path / "small.toml"


def hits(manifest):
    return {s["name"]: s["cache_hit"] for s in manifest["stages"]}


class TestConfig:
    def test_bundled_configs_load(self):
        for name in ("toy", "full"):
            cfg = load_config(bundled_config(name))
            assert cfg.paths.corpus
        with pytest.raises(ConfigError):
            bundled_config("nope")

    def test_unknown_section_and_key(self):
        with pytest.raises(ConfigError, match="section"):
            config_from_dict({"bogus": {}})
        with pytest.raises(ConfigError, match="embed.dims"):
            config_from_dict({"embed": {"dims": 5}})

    @pytest.mark.parametrize("section,key,value", [
        ("embed", "dim", 0), ("embed", "dim", 2.5), ("embed", "learning_rate", -1.0),
        ("sparse", "k", 0), ("sparse", "coeff_floor", "median"), ("corpus", "window", 0),
        ("meta", "enabled", 1), ("sentences", "words", "abc"), ("run", "threads", 0),
    ])
    def test_invalid_values(self, section, key, value):
        with pytest.raises(ConfigError):
            config_from_dict({section: {key: value}})

    def test_toy_inputs_resolve(self):
        cfg = load_config(bundled_config("toy"))
        assert resolve_input(cfg, "corpus").exists()

    def test_hash_ignores_workdir(self, tmp_path):
        a = config_from_dict({"paths": {"workdir": "x"}})
        b = config_from_dict({"paths": {"workdir": "y"}}, base_dir=str(tmp_path))
        c = config_from_dict({"embed": {"seed": 4}})
        assert a.hash() == b.hash() != c.hash()

    def test_workdir_precedence(self, small_config, tmp_path, monkeypatch):
        cfg = load_config(small_config)
        monkeypatch.delenv("ATOMS_WORKDIR", raising=False)
        assert resolve_workdir(cfg) == tmp_path / "work"
        monkeypatch.setenv("ATOMS_WORKDIR", str(tmp_path / "env"))
        assert resolve_workdir(cfg) == tmp_path / "env"
        assert resolve_workdir(cfg, str(tmp_path / "flag")) == tmp_path / "flag"


class TestPipeline:
    def test_cache_and_invalidation(self, small_config, tmp_path):
        cfg = load_config(small_config)
        first = run_pipeline(cfg, tmp_path / "w")
        assert not any(hits(first).values())
        assert set(hits(first)) == {"corpus", "embed", "sparse", "meta", "theory_synth"}

        again = run_pipeline(cfg, tmp_path / "w")
        assert all(hits(again).values())

        cfg2 = cfg.replace(embed=type(cfg.embed)(**{**cfg.section("embed"), "seed": 1}))
        third = run_pipeline(cfg2, tmp_path / "w")
        assert hits(third) == {"corpus": True, "embed": False, "sparse": False, "meta": False,
                               "theory_synth": True}

    def test_tampered_artifact_reruns(self, small_config, tmp_path):
        cfg = load_config(small_config)
        run_pipeline(cfg, tmp_path / "w")
        with open(tmp_path / "w" / "embed" / "embeddings.txt", "a") as fh:
            fh.write("\n")
        assert hits(run_pipeline(cfg, tmp_path / "w"))["embed"] is False

    def test_artifacts_and_manifest(self, small_config, tmp_path):
        cfg = load_config(small_config)
        m = run_pipeline(cfg, tmp_path / "w")
        w = tmp_path / "w"
        assert json.loads((w / "manifest.json").read_text()) == m
        assert m["version"] == __version__ and m["config_hash"] == cfg.hash()
        basis = fmt.read_basis(w / "sparse" / "basis.txt")
        codes = fmt.read_codes(w / "sparse" / "codes.tsv", 3)
        assert all(0 <= a < basis.m for w_ in codes.words for a, _ in codes.entries(w_))
        for st in m["stages"]:
            for name, digest in st["artifacts"].items():
                assert fmt.sha256_file(w / st["name"] / name) == digest

    def test_stage_error_wraps(self, tmp_path):
        cfg = config_from_dict({"paths": {"corpus": "missing.txt", "sentences": "", "lexicon": "",
                                          "topics": ""},
                                "theory": {"enabled": False}}, base_dir=str(tmp_path))
        with pytest.raises(StageError) as info:
            run_pipeline(cfg, tmp_path / "w")
        assert info.value.stage == "corpus"
        assert isinstance(info.value.cause, FileNotFoundError)


class TestCLI:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_no_command_is_usage_error(self):
        assert main([]) == 2

    def test_run_and_env_workdir(self, small_config, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ATOMS_WORKDIR", str(tmp_path / "envwork"))
        assert main(["run", "--config", str(small_config)]) == 0
        assert (tmp_path / "envwork" / "manifest.json").exists()
        assert main(["run", "--config", str(small_config)]) == 0
        assert "cached" in capsys.readouterr().out

    def test_bad_config_exit_2(self, tmp_path):
        (tmp_path / "bad.toml").write_text("[embed]\ndim = -3\n")
        assert main(["run", "--config", str(tmp_path / "bad.toml")]) == 2
        (tmp_path / "broken.toml").write_text("[embed\n")
        assert main(["run", "--config", str(tmp_path / "broken.toml")]) == 2

    def test_missing_input_exit_2(self, tmp_path):
        assert main(["--workdir", str(tmp_path), "embed", "train"]) == 2

    def test_runtime_error_exit_1(self, small_config, tmp_path, monkeypatch):
        w = str(tmp_path / "cw")
        docs = str(tmp_path / "docs.txt")
        assert main(["--workdir", w, "corpus", "vocab", "--corpus", docs, "--min-count", "2"]) == 0
        assert main(["--workdir", w, "corpus", "cooc", "--corpus", docs, "--window", "3"]) == 0

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr("discourse_atoms.embed.train_sn", boom)
        assert main(["--workdir", w, "embed", "train", "--dim", "4", "--epochs", "1"]) == 1

    def test_step_commands(self, small_config, tmp_path, capsys):
        w = str(tmp_path / "cw")
        docs = str(tmp_path / "docs.txt")
        steps = [
            ["corpus", "vocab", "--corpus", docs, "--min-count", "2"],
            ["corpus", "cooc", "--corpus", docs, "--window", "3"],
            ["embed", "train", "--dim", "6", "--epochs", "2"],
            ["sparse", "learn", "--m", "8", "--k", "2", "--iters", "2"],
            ["inspect", "--atom", "0", "--top", "3"],
            ["sparse", "filter", "--top", "1"],
        ]
        for s in steps:
            assert main(["--workdir", w, *s]) == 0, s
        assert fmt.read_basis(tmp_path / "cw" / "sparse" / "basis.txt").m == 7
        assert main(["--workdir", w, "inspect", "--atom", "99"]) == 2
