import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from relgraph.dataio import (
    FormatError,
    IdentitySampler,
    Manifest,
    SamplingError,
    SyntheticSpec,
    decode_tensor,
    directory_digest,
    encode_tensor,
    generate,
    generate_arrays,
    read_array,
    read_tensor,
    sample_batch,
    write_tensor,
)

# -- tensor files -------------------------------------------------------------------

def test_round_trip_is_bit_identical(tmp_path, rng):
    x = rng.standard_normal((32, 12, 6)).astype(np.float32)
    write_tensor(tmp_path / "t.rgt", x)
    back = read_tensor(tmp_path / "t.rgt").data
    assert back.dtype == np.float32 and back.tobytes() == x.tobytes()


def test_layout_is_little_endian(rng):
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = encode_tensor(x)
    assert buf[:4] == b"RGT1"
    assert buf[4:6] == bytes([1, 2])
    assert struct.unpack("<2I", buf[6:14]) == (2, 3)
    assert buf[14:] == x.astype("<f4").tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_round_trip_property(x):
    back, end = decode_tensor(encode_tensor(x))
    assert back.shape == x.shape and back.dtype == x.dtype
    assert back.tobytes() == x.tobytes()
    assert end == len(encode_tensor(x))


def test_bad_magic_reports_offset_zero(tmp_path):
    (tmp_path / "bad.rgt").write_bytes(b"XXXX" + bytes(10))
    with pytest.raises(FormatError) as info:
        read_array(tmp_path / "bad.rgt")
    assert info.value.offset == 0


def test_truncated_payload(rng):
    buf = encode_tensor(rng.standard_normal((4, 4)).astype(np.float32))
    with pytest.raises(FormatError, match="truncated payload") as info:
        decode_tensor(buf[:-3])
    assert info.value.offset == len(buf) - 3


def test_unknown_dtype_code():
    buf = bytearray(encode_tensor(np.zeros(2, np.float32)))
    buf[4] = 9
    with pytest.raises(FormatError, match="dtype code 9") as info:
        decode_tensor(bytes(buf))
    assert info.value.offset == 4


# -- synthetic data --------------------------------------------------------------

def test_generation_is_byte_identical(tmp_path):
    spec = SyntheticSpec()
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")


def test_default_dataset_layout(synthetic_dir):
    manifest = Manifest.read(synthetic_dir / "manifest.csv")
    assert len(manifest) == 16 * 12 * 2
    for split, count in (("train", 8), ("query", 2), ("gallery", 2)):
        for modality in ("vis", "ir"):
            part = manifest.select(split, modality)
            assert len(part) == 16 * count
            assert set(part.labels.tolist()) == set(range(16))
    assert set(manifest.select(modality="ir").cameras.tolist()) == {3}
    assert set(manifest.select(modality="vis").cameras.tolist()) == {1, 2}
    assert manifest.load_images().shape == (384, 3, 48, 24)


def test_manifest_round_trip(tmp_path, synthetic_dir):
    manifest = Manifest.read(synthetic_dir / "manifest.csv")
    manifest.write(tmp_path / "copy.csv")
    assert (tmp_path / "copy.csv").read_bytes() == (synthetic_dir / "manifest.csv").read_bytes()
    assert Manifest.read(tmp_path / "copy.csv").rows == manifest.rows


def test_manifest_header_checked(tmp_path):
    (tmp_path / "m.csv").write_text("file,id\n")
    with pytest.raises(ValueError, match="header"):
        Manifest.read(tmp_path / "m.csv")


def test_nuisance_free_images_repeat():
    spec = SyntheticSpec(num_identities=3, images_per_modality=4, noise_sigma=0.0, max_shift=0)
    images, labels, modalities, _, _ = generate_arrays(spec)
    for pid in range(3):
        for m in ("vis", "ir"):
            group = images[(labels == pid) & (modalities == m)]
            assert all(np.array_equal(group[0], g) for g in group[1:])


def test_modalities_look_different():
    images, labels, modalities, _, _ = generate_arrays(SyntheticSpec(num_identities=2, images_per_modality=2))
    assert abs(images[modalities == "ir"].mean() - images[modalities == "vis"].mean()) > 0.3


def test_zero_identities_rejected(tmp_path):
    with pytest.raises(ValueError):
        generate(SyntheticSpec(num_identities=0), tmp_path)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate(SyntheticSpec(num_identities=1, images_per_modality=1), blocker / "sub")


# -- sampling -----------------------------------------------------------------------

def toy_pool(ids=6, per=5):
    labels = np.repeat(np.arange(ids), 2 * per)
    modalities = np.tile(np.array(["vis"] * per + ["ir"] * per), ids)
    return labels, modalities


def test_all_identities_drawn_once():
    labels, modalities = toy_pool()
    batch = IdentitySampler(labels, modalities, 6, 2, 2, np.random.default_rng(0)).sample()
    assert sorted(batch.identities.tolist()) == list(range(6))


def test_four_by_eight_plus_eight_batch_size():
    labels, modalities = toy_pool(ids=5, per=8)
    batch = IdentitySampler(labels, modalities, 4, 8, 8, np.random.default_rng(0)).sample()
    assert len(batch) == 64


def test_sampling_deterministic():
    labels, modalities = toy_pool()

    def draws(seed):
        s = IdentitySampler(labels, modalities, 3, 2, 2, np.random.default_rng(seed))
        return [s.sample().indices.tolist() for _ in range(5)]

    assert draws(3) == draws(3)
    assert draws(3) != draws(4)


def test_sampling_deficit_is_listed():
    labels, modalities = toy_pool(ids=3, per=2)
    with pytest.raises(SamplingError, match="identity 0 has 2 vis samples, needs 3"):
        IdentitySampler(labels, modalities, 3, 3, 1, np.random.default_rng(0))
    with pytest.raises(SamplingError, match="need 4 identities"):
        IdentitySampler(labels, modalities, 4, 1, 1, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5))
def test_batches_cover_both_modalities(seed, p, kv, ki):
    labels, modalities = toy_pool()
    batch = IdentitySampler(labels, modalities, p, kv, ki, np.random.default_rng(seed)).sample()
    for pid in batch.identities:
        assert np.sum(batch.vis_labels == pid) == kv and np.sum(batch.ir_labels == pid) == ki
    assert np.all(modalities[batch.vis_indices] == "vis") and np.all(modalities[batch.ir_indices] == "ir")
    np.testing.assert_array_equal(labels[batch.indices], batch.labels)
    assert len(set(batch.indices.tolist())) == len(batch)


def test_sample_batch_from_manifest(synthetic_dir):
    manifest = Manifest.read(synthetic_dir / "manifest.csv").select("train")
    batch = sample_batch(manifest, 4, 4, 4, np.random.default_rng(0))
    assert len(batch) == 32
    np.testing.assert_array_equal(manifest.labels[batch.indices], batch.labels)
