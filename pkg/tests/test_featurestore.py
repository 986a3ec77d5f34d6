import json
import struct

import numpy as np
import pytest

from dermapipe.errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    NonFinite,
    ProvenanceMismatch,
    TruncatedFile,
    UnknownId,
    UnsupportedVersion,
)
from dermapipe.featurestore import (
    MASKING_MASKED,
    MASKING_WHOLE,
    FeatureStore,
    get_embedding,
    merge_stores,
    meta_path,
    read_feature_file,
    write_feature_file,
)


def small_store(dim=4, n=3, masking=None):
    store = FeatureStore(dim, provider="unit-test", masking=masking)
    gen = np.random.default_rng(0)
    for i in range(n):
        store.add(f"id{i}", gen.normal(size=dim).astype(np.float32))
    return store


# --- in-memory behaviour ---


def test_store_add_get_matrix():
    store = small_store()
    assert store.dim == 4
    assert len(store) == 3
    assert store.ids() == ["id0", "id1", "id2"]
    v = store.get("id1")
    assert v.shape == (4,) and v.dtype == np.float32
    assert "id0" in store and "nope" not in store
    with pytest.raises(UnknownId):
        store.get("nope")
    mat = store.matrix(["id2", "id0"])
    assert mat.shape == (2, 4)
    assert np.array_equal(mat[0], store.get("id2"))
    assert np.array_equal(store.matrix(), store.matrix(store.ids()))


def test_store_vectors_are_frozen():
    store = small_store()
    with pytest.raises(ValueError):
        store.get("id0")[0] = 99.0


def test_store_rejects_bad_vectors():
    store = FeatureStore(4)
    with pytest.raises(DimMismatch):
        store.add("a", np.zeros(5, dtype=np.float32))
    with pytest.raises(DimMismatch):
        store.add("a", np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(NonFinite):
        store.add("a", np.array([1, 2, np.nan, 4], dtype=np.float32))
    with pytest.raises(NonFinite):
        store.add("a", np.array([1, 2, np.inf, 4], dtype=np.float32))
    store.add("a", np.zeros(4, dtype=np.float32))
    with pytest.raises(DuplicateId):
        store.add("a", np.zeros(4, dtype=np.float32))
    with pytest.raises(DimMismatch):
        FeatureStore(0)


def test_get_embedding_protocol_helper():
    store = small_store()
    assert np.array_equal(get_embedding(store, "id0"), store.get("id0"))


# --- wire format ---


def test_header_layout_exact_bytes(tmp_path):
    # magic 'DDXF' | version u32=1 | dim u32 | count u64, little-endian.
    path = tmp_path / "empty.ddxf"
    write_feature_file(FeatureStore(768), path)
    blob = path.read_bytes()
    assert len(blob) == 20
    assert blob[:4] == b"DDXF"
    assert struct.unpack("<I", blob[4:8])[0] == 1
    assert struct.unpack("<I", blob[8:12])[0] == 768
    assert struct.unpack("<Q", blob[12:20])[0] == 0


def test_file_size_formula(tmp_path):
    store = small_store(dim=6, n=5)
    path = tmp_path / "f.ddxf"
    write_feature_file(store, path)
    expected = 20 + sum(2 + len(rid.encode()) + 4 * 6 for rid in store.ids())
    assert path.stat().st_size == expected


def test_roundtrip_bit_exact(tmp_path):
    store = small_store(dim=16, n=10, masking=MASKING_MASKED)
    path = tmp_path / "f.ddxf"
    write_feature_file(store, path)
    back = read_feature_file(path)
    assert back.ids() == store.ids()
    assert back.dim == store.dim
    for rid in store.ids():
        assert np.array_equal(back.get(rid), store.get(rid))  # bit-exact f32
    assert back.masking == MASKING_MASKED
    assert back.provider == "unit-test"
    # writing what we read reproduces the identical file
    path2 = tmp_path / "g.ddxf"
    write_feature_file(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_unicode_ids_roundtrip(tmp_path):
    store = FeatureStore(3)
    store.add("皮膚-1", np.array([1, 2, 3], dtype=np.float32))
    store.add("id-ü", np.array([4, 5, 6], dtype=np.float32))
    path = tmp_path / "u.ddxf"
    write_feature_file(store, path)
    back = read_feature_file(path)
    assert back.ids() == ["皮膚-1", "id-ü"]


def test_sidecar_meta(tmp_path):
    path = tmp_path / "f.ddxf"
    write_feature_file(small_store(masking=MASKING_WHOLE), path)
    side = meta_path(path)
    assert side.name == "f.ddxf.meta.json"
    meta = json.loads(side.read_text())
    assert meta["masking"] == "whole_image"
    assert meta["provider"] == "unit-test"
    assert isinstance(meta["created_unix"], int)


def test_missing_sidecar_is_tolerated(tmp_path):
    path = tmp_path / "f.ddxf"
    write_feature_file(small_store(masking=MASKING_MASKED), path)
    meta_path(path).unlink()
    back = read_feature_file(path)
    assert back.masking is None and back.provider == ""


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagic):
        read_feature_file(p)
    p.write_bytes(b"DD")
    with pytest.raises(BadMagic):
        read_feature_file(p)


def test_read_rejects_bad_version(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(struct.pack("<4sIIQ", b"DDXF", 2, 4, 0))
    with pytest.raises(UnsupportedVersion):
        read_feature_file(p)


def test_read_rejects_zero_dim(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(struct.pack("<4sIIQ", b"DDXF", 1, 0, 0))
    with pytest.raises(DimMismatch):
        read_feature_file(p)


def test_read_rejects_truncation_everywhere(tmp_path):
    store = small_store(dim=8, n=4)
    path = tmp_path / "f.ddxf"
    write_feature_file(store, path)
    blob = path.read_bytes()
    # chop at several interesting offsets: inside header, inside an id,
    # inside a vector, and one byte short of the end
    for cut in (10, 21, 30, len(blob) - 1):
        trunc = tmp_path / f"t{cut}.ddxf"
        trunc.write_bytes(blob[:cut])
        with pytest.raises((TruncatedFile, BadMagic)):
            read_feature_file(trunc)
    # trailing junk is also a framing error
    extra = tmp_path / "extra.ddxf"
    extra.write_bytes(blob + b"\x00")
    with pytest.raises(TruncatedFile):
        read_feature_file(extra)


def test_read_rejects_nonfinite_payload(tmp_path):
    # craft a valid frame whose vector holds a NaN
    rid = b"r0"
    vec = struct.pack("<4f", 1.0, float("nan"), 3.0, 4.0)
    frame = struct.pack("<4sIIQ", b"DDXF", 1, 4, 1) + struct.pack("<H", 2) + rid + vec
    p = tmp_path / "nan.ddxf"
    p.write_bytes(frame)
    with pytest.raises(NonFinite):
        read_feature_file(p)


def test_read_rejects_duplicate_ids_in_file(tmp_path):
    rid = b"r0"
    vec = struct.pack("<2f", 1.0, 2.0)
    rec = struct.pack("<H", 2) + rid + vec
    p = tmp_path / "dup.ddxf"
    p.write_bytes(struct.pack("<4sIIQ", b"DDXF", 1, 2, 2) + rec + rec)
    with pytest.raises(DuplicateId):
        read_feature_file(p)


# --- merging ---


def test_merge_stores():
    a = small_store(dim=4, n=2)
    b = FeatureStore(4, provider="unit-test")
    b.add("x", np.ones(4, dtype=np.float32))
    merged = merge_stores(a, b)
    assert sorted(merged.ids()) == ["id0", "id1", "x"]

    c = FeatureStore(5)
    with pytest.raises(DimMismatch):
        merge_stores(a, c)

    tagged1 = small_store(masking=MASKING_MASKED)
    tagged2 = FeatureStore(4, masking=MASKING_WHOLE)
    tagged2.add("y", np.ones(4, dtype=np.float32))
    with pytest.raises(ProvenanceMismatch):
        merge_stores(tagged1, tagged2)
    # untagged + tagged is fine and keeps the tag
    untagged = FeatureStore(4)
    untagged.add("z", np.ones(4, dtype=np.float32))
    assert merge_stores(tagged1, untagged).masking == MASKING_MASKED
