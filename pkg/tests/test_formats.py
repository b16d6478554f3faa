import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from edgecall.formats import (
    FormatError,
    SignalRecord,
    as_quantized,
    dumps_signals,
    dumps_weights,
    format_record,
    load_weights,
    loads_signals_binary,
    loads_signals_text,
    loads_weights,
    read_signals,
    save_quantized,
    write_signals,
)
from edgecall.initializers import init_model
from edgecall.quant import QuantParams, quantize_model


def craft(entries, payload, qrecords=(), version=1, magic=b"DNCW"):
    """Hand-assembled container; entries are (name, code, dims, offset, nbytes)."""
    out = magic + struct.pack("<HHIII", version, 0, len(entries), len(qrecords), 0)
    for name, code, dims, off, nb in entries:
        b = name.encode()
        out += struct.pack("<H", len(b)) + b + struct.pack("<BB", code, len(dims))
        out += struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<QQ", off, nb)
    for name, scale, zp in qrecords:
        b = name.encode()
        out += struct.pack("<H", len(b)) + b + struct.pack("<di", scale, zp)
    return out + payload


def test_round_trip_bitwise(rng):
    tensors = {
        "a": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.integers(-128, 128, (7,)).astype(np.int8),
        "c": rng.integers(-2**31, 2**31, (2, 2, 2)).astype(np.int32),
        "scalar": np.float32(np.nan).reshape(()),
    }
    wf = loads_weights(dumps_weights(tensors, meta={"k": 1}))
    assert list(wf.tensors) == list(tensors) and wf.meta == {"k": 1}
    for n, a in tensors.items():
        assert wf.tensors[n].dtype == a.dtype and wf.tensors[n].tobytes() == a.tobytes()


@settings(max_examples=30)
@given(hnp.arrays(np.float32, hnp.array_shapes(max_dims=3, max_side=5)))
def test_round_trip_property(a):
    assert loads_weights(dumps_weights({"x": a})).tensors["x"].tobytes() == a.tobytes()


def test_truncation_names_tensor():
    buf = dumps_weights({"a": np.zeros(4, np.float32), "b": np.zeros(4, np.float32)})
    with pytest.raises(FormatError, match="tensor 'b'"):
        loads_weights(buf[:-1])
    with pytest.raises(FormatError, match="truncated"):
        loads_weights(buf[:10])


def test_bad_magic_and_version():
    with pytest.raises(FormatError, match="magic"):
        loads_weights(craft([], b"", magic=b"XXXX"))
    with pytest.raises(FormatError, match="version 2"):
        loads_weights(craft([], b"", version=2))


def test_crafted_directory_errors():
    payload = bytes(16)
    with pytest.raises(FormatError, match="duplicate tensor name 'w'"):
        loads_weights(craft([("w", 0, (2,), 0, 8), ("w", 0, (2,), 8, 8)], payload))
    with pytest.raises(FormatError, match="overlap"):
        loads_weights(craft([("u", 0, (2,), 0, 8), ("v", 0, (2,), 4, 8)], payload))
    with pytest.raises(FormatError, match="dtype code 9"):
        loads_weights(craft([("u", 9, (2,), 0, 8)], payload))
    with pytest.raises(FormatError, match="byte count"):
        loads_weights(craft([("u", 0, (2,), 0, 7)], payload))
    with pytest.raises(FormatError, match="duplicate quant record"):
        loads_weights(craft([], b"", [("q", 0.1, 0), ("q", 0.2, 0)]))
    ok = loads_weights(craft([("u", 1, (8,), 8, 8), ("v", 1, (8,), 0, 8)], payload))
    assert set(ok.tensors) == {"u", "v"}


def test_quantized_round_trip(tmp_path, small_cfg, rng):
    qm = quantize_model(small_cfg, init_model(small_cfg), [rng.normal(size=(90, 1))])
    path = tmp_path / "q.dncw"
    save_quantized(path, qm)
    wf = load_weights(path)
    assert wf.qparams == qm.qparams
    assert all(isinstance(q, QuantParams) for q in wf.qparams.values())
    back = as_quantized(wf, small_cfg)
    for n, t in qm.tensors.items():
        assert back.tensors[n].dtype == t.dtype and np.array_equal(back.tensors[n], t)
    del wf.tensors["c1.conv.bias"]
    with pytest.raises(FormatError, match="c1.conv.bias"):
        as_quantized(wf, small_cfg)


def test_load_missing_file(tmp_path):
    with pytest.raises(FormatError, match="cannot read"):
        load_weights(tmp_path / "none")


def test_signal_formats(tmp_path, rng):
    recs = [SignalRecord("r1", rng.normal(size=50).astype(np.float32)), SignalRecord("r two", np.ones(3, np.float32))]
    for text in (False, True):
        p = tmp_path / f"s{text}"
        write_signals(p, recs, text=text)
        back = read_signals(p)
        assert [r.read_id for r in back] == ["r1", "r two"]
        for a, b in zip(recs, back):
            np.testing.assert_array_equal(a.samples, b.samples)
    assert loads_signals_binary(dumps_signals(recs))[1].read_id == "r two"


def test_text_signal_without_header():
    recs = loads_signals_text("1\n2\n\n3.5\n# b\n4\n")
    assert [r.read_id for r in recs] == ["read0", "b"]
    np.testing.assert_array_equal(recs[0].samples, [1, 2, 3.5])
    with pytest.raises(FormatError, match="line 2"):
        loads_signals_text("1\nx\n")
    with pytest.raises(FormatError, match="no samples"):
        loads_signals_text("# empty\n# b\n1\n")


def test_signal_truncation():
    buf = dumps_signals([SignalRecord("r", np.ones(10, np.float32))])
    with pytest.raises(FormatError, match="'r'"):
        loads_signals_binary(buf[:-2])


def test_format_record():
    assert format_record("r", "ACG") == ">r\nACG\n"
    assert format_record("r", "AC", "II") == "@r\nAC\n+\nII\n"
