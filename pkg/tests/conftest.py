import numpy as np
import pytest

from recosa.corpus import EncodedSession, build_vocab, encode_session
from recosa.experiments import toy_corpus
from recosa.model import ModelConfig, ReCoSa
from recosa.trainer import TrainConfig, train

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sessions(rng, n, V, n_ctx=(1, 3), m=(1, 4), t=(1, 4)):
    """Encoded sessions with random ids in [4, V) and random shapes."""
    out = []
    for _ in range(n):
        N = int(rng.integers(n_ctx[0], n_ctx[1] + 1))
        ctx = [list(rng.integers(4, V, size=int(rng.integers(m[0], m[1] + 1)))) for _ in range(N)]
        y = list(rng.integers(4, V, size=int(rng.integers(t[0], t[1] + 1))))
        out.append(EncodedSession(ctx, [2] + y, y + [3]))
    return out


def toy_model(seed=0, V=11, d=8, heads=2, out_scale=0.5, **kw):
    cfg = ModelConfig(vocab_size=V, d=d, heads=heads, max_turns=kw.pop("max_turns", 5),
                      max_sent_len=kw.pop("max_sent_len", 6), seed=seed, **kw)
    model = ReCoSa(cfg)
    if out_scale:
        # a near-zero output layer hides most of the gradient signal upstream
        r = np.random.default_rng(seed + 99)
        model.params.out.data = r.uniform(-out_scale, out_scale, model.params.out.shape)
    return model


@pytest.fixture(scope="session")
def toy_data():
    tr, va = toy_corpus()
    vocab = build_vocab(tr + va, 1000)
    return vocab, [encode_session(s, vocab) for s in tr], [encode_session(s, vocab) for s in va]


@pytest.fixture(scope="session")
def memorized(toy_data):
    """The 32-session toy corpus trained for 2000 Adam steps at d=32, H=2."""
    import time
    vocab, tr, va = toy_data
    model = ReCoSa(ModelConfig(vocab_size=len(vocab), d=32, heads=2, seed=0))
    t0 = time.perf_counter()
    res = train(model, tr, va, TrainConfig(lr=1e-3, max_steps=2000, eval_interval=500, seed=0))
    return model, res, time.perf_counter() - t0
