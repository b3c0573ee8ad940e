import numpy as np
import pytest

from discourse_atoms import formats as fmt
from discourse_atoms.embed import EmbeddingSet
from discourse_atoms.pipeline import bundled_config, load_config, run_pipeline
from discourse_atoms.sparse_coding import AtomBasis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_embeddings(rng, n=40, d=8, prefix="w"):
    return EmbeddingSet(tuple(f"{prefix}{i}" for i in range(n)), rng.standard_normal((n, d)))


def random_basis(rng, m=6, d=8):
    return AtomBasis(rng.standard_normal((m, d)))


def planted_instance(seed=0, m=10, d=20, n=500):
    """Unit atoms and exact positive 2-sparse mixtures of them."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    X = np.empty((n, d))
    for i in range(n):
        a, b = rng.choice(m, 2, replace=False)
        X[i] = rng.uniform(0.5, 1.5) * A[a] + rng.uniform(0.5, 1.5) * A[b]
    return A, X


class ToyRun:
    """Loaded artifacts of one pipeline run on the bundled toy corpus."""

    def __init__(self, workdir, manifest, cfg):
        self.workdir = workdir
        self.manifest = manifest
        self.cfg = cfg

    def path(self, rel):
        return self.workdir / rel

    @property
    def vocab(self):
        return fmt.read_vocab(self.path("corpus/vocab.tsv"))

    @property
    def store(self):
        v = self.vocab
        return fmt.read_cooc_binary(self.path("corpus/cooc.bin"), len(v), self.cfg.corpus.window)

    @property
    def embeddings(self):
        return fmt.read_embeddings(self.path("embed/embeddings.txt"))

    @property
    def basis(self):
        return fmt.read_basis(self.path("sparse/basis.txt"))

    @property
    def codes(self):
        return fmt.read_codes(self.path("sparse/codes.tsv"), self.cfg.sparse.k)

    def stage(self, name):
        return next(s for s in self.manifest["stages"] if s["name"] == name)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    cfg = load_config(bundled_config("toy"))
    workdir = tmp_path_factory.mktemp("toy_run")
    manifest = run_pipeline(cfg, workdir)
    return ToyRun(workdir, manifest, cfg)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
