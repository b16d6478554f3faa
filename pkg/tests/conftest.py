import numpy as np
import pytest

from edgecall import reference as ref
from edgecall.config import ConvSpec, ModelConfig, ResidualBlockSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(channels=8, blocks=1, depth=9, k=3, chunk_len=90, compression=True, **kw):
    from edgecall.config import CompressionSpec

    comp = CompressionSpec() if compression else None
    specs = tuple(ResidualBlockSpec(channels, repeats=3, depth=depth, k=k, compression=comp) for _ in range(blocks))
    return ModelConfig(channels=channels, blocks=specs, c2_depth=5, c3=ConvSpec(channels, 5),
                       chunk_len=chunk_len, **kw)


@pytest.fixture
def small_cfg():
    return small_config()


def random_bn(rng, C):
    return (rng.uniform(0.5, 1.5, C), rng.normal(0, 0.2, C), rng.normal(0, 0.2, C), rng.uniform(0.5, 2.0, C))


def ref_bn(x, gamma, beta, mean, var, eps):
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def ref_d2s_block(x, spec, w, prefix, eps):
    """Straight-line composition of the d2s residual block from the nested-loop primitives."""
    g = lambda name: np.asarray(w[f"{prefix}.{name}"], np.float64)
    bn = lambda unit, y: ref_bn(y, *(g(f"{unit}.bn.{f}") for f in ("gamma", "beta", "mean", "var")), eps)
    relu6 = lambda v: np.clip(v, 0, 6)
    y = relu6(bn("compress", ref.strided(x, g("compress.conv.weight"), g("compress.conv.bias"))))
    for u in range(spec.repeats - 2):
        p = f"main.{u}"
        y = ref.k_blueprint(y, g(f"{p}.pw.weight"), g(f"{p}.pw.bias"), g(f"{p}.dw.weight"), g(f"{p}.dw.bias"))
        y = relu6(bn(p, y))
    y = ref.depthwise(y, g("decompress.dw.weight"), g("decompress.dw.bias"))
    y = bn("decompress", ref.transposed(y, g("decompress.conv.weight"), g("decompress.conv.bias")))
    s = bn("skip", ref.pointwise(x, g("skip.pw.weight"), g("skip.pw.bias")))
    return relu6(y + s)


def one_hot(path: str) -> np.ndarray:
    from edgecall.ctc import LABELS

    p = np.zeros((len(path), 5))
    for t, ch in enumerate(path):
        p[t, LABELS.index(ch)] = 1.0
    return p


ACCEPTANCE = []  # "PASS/FAIL criterion N: ..." lines, repeated in the terminal summary


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
