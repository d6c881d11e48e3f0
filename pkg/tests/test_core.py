import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prsans.core import (MAGIC, SNR_CAP, BadMagicError, ContractViolation, DetectorImage,
                         DimensionMismatchError, MetadataError, NonFiniteError, PayloadSizeError,
                         VersionError, ZeroReferenceError, compute_metrics, decode_image,
                         denormalize, encode_image, metrics_csv, normalize, read_image,
                         substream, write_image)

finite_f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


def test_metrics_hand_example():
    m = compute_metrics(np.array([3.0, 4.0]), np.array([3.0, 3.0]))
    assert m.snr_db == pytest.approx(20 * np.log10(5.0), abs=1e-12)
    assert m.snr_db == pytest.approx(13.9794, abs=1e-4)
    assert m.rmse == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert m.nmse == pytest.approx(0.04, abs=1e-15)
    assert m.mae == pytest.approx(0.5)


def test_metrics_identical_inputs_hit_cap():
    x = np.random.default_rng(0).random(20)
    m = compute_metrics(x, x)
    assert (m.rmse, m.mae, m.nmse, m.snr_db) == (0.0, 0.0, 0.0, SNR_CAP)


def test_metrics_reject_shape_and_mask_mismatch():
    with pytest.raises(ContractViolation):
        compute_metrics(np.zeros(3), np.zeros(4))
    a = DetectorImage(np.ones((2, 2)))
    b = DetectorImage(np.ones((2, 2)), mask=[[True, False], [True, True]])
    with pytest.raises(ContractViolation):
        compute_metrics(a, b)


def test_zero_reference_needs_explicit_opt_out():
    with pytest.raises(ZeroReferenceError):
        compute_metrics(np.zeros(4), np.ones(4))
    m = compute_metrics(np.zeros(4), np.ones(4), relative=False)
    assert m.snr_db is None and m.nmse is None and m.rmse == 1.0


def test_masked_pixels_are_ignored():
    ref = np.array([[1.0, 2.0], [3.0, 100.0]])
    est = np.array([[1.0, 2.0], [2.0, -50.0]])
    mask = np.array([[True, True], [True, False]])
    m = compute_metrics(DetectorImage(ref, mask=mask), DetectorImage(est, mask=mask))
    assert m.mae == pytest.approx(1 / 3)
    assert m.nmse == pytest.approx(1 / 14)


@given(hnp.arrays(np.float64, 12, elements=st.floats(0.1, 10)),
       hnp.arrays(np.float64, 12, elements=st.floats(-1, 1)),
       st.permutations(list(range(12))))
def test_metrics_permutation_equivariant(ref, delta, perm):
    est = ref + delta
    a = compute_metrics(ref, est)
    b = compute_metrics(ref[perm], est[perm])
    assert a.rmse == pytest.approx(b.rmse, rel=1e-12, abs=1e-15)
    assert a.mae == pytest.approx(b.mae, rel=1e-12, abs=1e-15)
    assert a.nmse == pytest.approx(b.nmse, rel=1e-12, abs=1e-15)
    assert a.snr_db == pytest.approx(b.snr_db, rel=1e-12)


@given(hnp.arrays(np.float64, 8, elements=st.floats(0.1, 10)),
       hnp.arrays(np.float64, 8, elements=st.floats(0.1, 10)))
def test_rmse_and_mae_are_symmetric(a, b):
    assert compute_metrics(a, b).rmse == pytest.approx(compute_metrics(b, a).rmse, rel=1e-12)
    assert compute_metrics(a, b).mae == pytest.approx(compute_metrics(b, a).mae, rel=1e-12)


def test_nmse_and_snr_are_asymmetric():
    a, b = np.array([1.0, 1.0]), np.array([2.0, 2.0])
    assert compute_metrics(a, b).nmse == pytest.approx(1.0)
    assert compute_metrics(b, a).nmse == pytest.approx(0.25)
    assert compute_metrics(a, b).snr_db != compute_metrics(b, a).snr_db


@given(st.floats(1e-3, 10), st.floats(1.01, 5))
def test_snr_decreases_with_perturbation_size(c, factor):
    rng = np.random.default_rng(1)
    ref = rng.random(30) + 0.5
    u = rng.standard_normal(30)
    u /= np.linalg.norm(u)
    assert compute_metrics(ref, ref + c * factor * u).snr_db < compute_metrics(ref, ref + c * u).snr_db


def test_metrics_csv_format():
    text = metrics_csv([compute_metrics(np.array([3.0, 4.0]), np.array([3.0, 3.0]))])
    assert text == "snr_db,rmse,nmse,mae\n13.9794,0.707107,0.04,0.5\n"
    labelled = metrics_csv([compute_metrics(np.ones(2), np.ones(2))], ["x"])
    assert labelled.splitlines()[0] == "label,snr_db,rmse,nmse,mae"


def test_image_invariants():
    with pytest.raises(ContractViolation):
        DetectorImage(np.array([[np.nan]]))
    with pytest.raises(ContractViolation):
        DetectorImage(np.ones(4))
    with pytest.raises(ContractViolation):
        DetectorImage(np.ones((2, 2)), acq_time=0.0)
    img = DetectorImage(np.ones((3, 5)))
    assert img.beam_center == (2.0, 1.0) and img.width == 5 and img.height == 3
    with pytest.raises(ValueError):
        img.data[0, 0] = 2.0


def test_normalize_round_trip():
    rng = np.random.default_rng(3)
    img = DetectorImage(rng.random((6, 7)) * 40 + 3)
    n = normalize(img)
    assert n.data.min() == pytest.approx(0) and n.data.max() == pytest.approx(1)
    np.testing.assert_allclose(denormalize(n).data, img.data, rtol=1e-14)


def test_write_read_4x4_bit_identical(tmp_path):
    data = np.random.default_rng(0).random((4, 4)).astype(np.float32).astype(np.float64)
    img = DetectorImage(data, beam_center=(1.5, 2.25), acq_time=300.0, meta={"note": "x"})
    write_image(tmp_path / "a.prsim", img)
    back = read_image(tmp_path / "a.prsim")
    assert back.data.tobytes() == img.data.tobytes()
    assert back.beam_center == img.beam_center and back.acq_time == 300.0
    assert back.meta["note"] == "x"


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=9), elements=finite_f32),
       st.data())
def test_round_trip_exact_for_every_finite_payload(data, draw):
    mask = draw.draw(hnp.arrays(np.bool_, data.shape))
    img = DetectorImage(data.astype(np.float64), mask=mask)
    back = decode_image(encode_image(img))
    assert back.data.astype(np.float32).tobytes() == data.tobytes()
    assert np.array_equal(back.mask, mask)


def _header(raw):
    _, _, n = struct.unpack_from("<8sII", raw, 0)
    return json.loads(raw[16:16 + n]), 16 + n


def test_truncated_payload_is_payload_size_error():
    raw = encode_image(DetectorImage(np.ones((3, 3))))
    with pytest.raises(PayloadSizeError) as e:
        decode_image(raw[:-4])
    assert e.value.code == "payload_size"


def test_header_dimension_disagreement():
    raw = encode_image(DetectorImage(np.ones((3, 3))))
    meta, off = _header(raw)
    payload = np.ones(8, dtype="<f4").tobytes()
    meta["payload_bytes"] = len(payload)
    block = json.dumps(meta).encode()
    bad = MAGIC + struct.pack("<II", 1, len(block)) + block + payload
    with pytest.raises(DimensionMismatchError) as e:
        decode_image(bad)
    assert e.value.code == "dimension"


def test_distinct_format_errors():
    raw = encode_image(DetectorImage(np.ones((2, 2))))
    with pytest.raises(BadMagicError):
        decode_image(b"NOTMAGIC" + raw[8:])
    with pytest.raises(VersionError):
        decode_image(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(MetadataError):
        decode_image(raw[:16] + b"{" * (len(raw) - 16))
    meta, off = _header(raw)
    nan_payload = np.array([1, np.nan, 1, 1], dtype="<f4").tobytes()
    with pytest.raises(NonFiniteError) as e:
        decode_image(raw[:off] + nan_payload)
    assert e.value.code == "non_finite"
    codes = {c.code for c in (BadMagicError, VersionError, MetadataError, PayloadSizeError,
                              DimensionMismatchError, NonFiniteError)}
    assert len(codes) == 6


def test_substreams_are_named_and_reproducible():
    a = substream(5, "noise").random(4)
    assert np.array_equal(a, substream(5, "noise").random(4))
    assert not np.array_equal(a, substream(5, "init").random(4))
    assert not np.array_equal(a, substream(6, "noise").random(4))
