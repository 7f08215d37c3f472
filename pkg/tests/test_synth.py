import filecmp
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccreid import synth
from ccreid.errors import ConfigError, DataError, ProtocolError, ReIDIOError
from ccreid.synth import (CATEGORY_TABLE, LOWER_CLOTHES, UPPER_CLOTHES, GenConfig, degrade_face,
                          faceless_indices, generate_dataset, load_manifest, load_sample, outfit,
                          outfit_texture, person_traits, render_sample, split_protocol, wardrobe_items)


def small(seed=0, **kw):
    base = dict(seed=seed, num_identities=4, outfits_per_identity=2, samples_per_outfit=2)
    base.update(kw)
    return GenConfig(**base)


def test_category_table_and_cloth_set():
    names = {c.name for c in CATEGORY_TABLE}
    assert {"background", "head", "arm", "leg", "upper-clothes", "lower-clothes"} <= names
    m = synth.DatasetManifest(0, list(CATEGORY_TABLE), [], (64, 32), (16, 16))
    assert m.cloth_codes == {UPPER_CLOTHES, LOWER_CLOTHES}
    assert m.cloth_codes == {c.code for c in CATEGORY_TABLE if c.is_cloth_related}


def test_counts(tmp_path):
    m = generate_dataset(GenConfig(num_identities=5, outfits_per_identity=3, samples_per_outfit=4), tmp_path)
    assert len(m.samples) == 60
    assert len({s.identity_id for s in m.samples}) == 5


def test_faceless_count_matches_counting_oracle(tmp_path):
    m = generate_dataset(GenConfig(num_identities=5, outfits_per_identity=3, samples_per_outfit=4,
                                   faceless_fraction=0.1), tmp_path)
    assert sum(not s.has_face for s in m.samples) == round(0.1 * 60) == 6


@given(st.integers(0, 1000), st.integers(1, 300), st.floats(0, 1))
def test_faceless_indices_count(seed, n, frac):
    idx = faceless_indices(seed, n, frac)
    assert len(idx) == int(round(frac * n))
    assert all(0 <= i < n for i in idx)


def test_face_presence_consistency(tiny_root):
    m = load_manifest(tiny_root)
    for s in m.samples:
        assert (s.face_box is None) == (s.face_clean is None) == (s.face_degraded is None)
        if s.has_face:
            assert (tiny_root / s.face_clean).exists() and (tiny_root / s.face_degraded).exists()


def test_layout_and_manifest_round_trip(tiny_root):
    m = load_manifest(tiny_root)
    raw = json.loads((tiny_root / "manifest.json").read_text())
    assert set(raw) == {"dataset_seed", "category_table", "samples", "image_dims", "face_dims"}
    for s in m.samples:
        assert s.image == f"images/{s.identity_id:04d}_{s.clothing_id:02d}_{s.instance:02d}.png"
        assert s.mask.startswith("masks/")
    assert synth.DatasetManifest.from_json(m.to_json()) == m


def test_determinism_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(small(seed=5), a)
    generate_dataset(small(seed=5), b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    _, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors


def test_identity_descriptors_pure_and_distinct():
    a1, a2, b = person_traits(3, 1, 3), person_traits(3, 1, 3), person_traits(3, 2, 3)
    np.testing.assert_array_equal(a1.face_pattern.fine, a2.face_pattern.fine)
    assert a1.body_shape.torso_width == a2.body_shape.torso_width
    assert not np.array_equal(a1.face_pattern.fine, b.face_pattern.fine)


def test_shared_wardrobe_is_identity_independent():
    items = [wardrobe_items(0, pid, 3, 4) for pid in range(6)]
    assert all(len(set(i)) == 3 for i in items)
    shared = {}
    for pid, its in enumerate(items):
        for cid, item in enumerate(its):
            shared.setdefault(item, []).append(outfit(0, pid, cid, item))
    for outfits in shared.values():
        assert all(np.array_equal(o.upper, outfits[0].upper) and o.pattern == outfits[0].pattern for o in outfits)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mask_fidelity(seed):
    """Every cloth-coded pixel carries the outfit texture at its body-local position."""
    traits = person_traits(seed, 0, 3)
    o = outfit(seed, 0, 1)
    for k in range(5):
        img, mask, _, _, (dy, dx) = render_sample(traits, o, (64, 32), (16, 16), np.random.default_rng([seed, k]),
                                                   with_face=k % 2 == 0)
        yy, xx = np.mgrid[0:64, 0:32]
        for part in (UPPER_CLOTHES, LOWER_CLOTHES):
            m = mask == part
            assert m.any()
            want = synth.quantize(outfit_texture(o, part, yy[m] - dy, xx[m] - dx))
            np.testing.assert_array_equal(img[m], want)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        generate_dataset(GenConfig(image_dims=(0, 32)), tmp_path)
    with pytest.raises(ConfigError):
        GenConfig(num_identities=1).validate()
    with pytest.raises(ConfigError):
        GenConfig(wardrobe_size=2, outfits_per_identity=3).validate()


def test_unwritable_root(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReIDIOError):
        generate_dataset(small(), blocker / "sub")


def test_unknown_code_on_load(tmp_path):
    m = generate_dataset(small(), tmp_path)
    rec = m.samples[0]
    from PIL import Image
    arr = np.asarray(Image.open(tmp_path / rec.mask)).copy()
    arr[0, 0] = 42
    Image.fromarray(arr).save(tmp_path / rec.mask)
    with pytest.raises(DataError):
        load_sample(tmp_path, rec, m)


# --------------------------------------------------------------------------- degradation


def test_degrade_constant_image():
    face = np.full((16, 16, 3), 0.4)
    np.testing.assert_allclose(degrade_face(face, 2, 0.0, 0), 0.4, atol=1e-15)


def test_degrade_noise_free_is_pure_resample():
    face = np.random.default_rng(0).uniform(size=(16, 16, 3))
    a, b = degrade_face(face, 4, 0.0, 1), degrade_face(face, 4, 0.0, 2)
    np.testing.assert_array_equal(a, b)
    up = synth.resample.resize(synth.resample.resize(face, 4, 4, "area"), 16, 16, "bilinear")
    np.testing.assert_allclose(a, np.clip(up, 0, 1))


def test_degrade_checkerboard_loses_detail():
    yy, xx = np.mgrid[0:16, 0:16]
    board = ((yy + xx) % 2).astype(float)[..., None].repeat(3, axis=2)
    out = degrade_face(board, 4, 0.0, 0)
    # area-averaging a one-pixel checkerboard over 4x4 blocks gives exactly 0.5 everywhere
    np.testing.assert_allclose(out, 0.5)
    assert np.abs(board - out).mean() == pytest.approx(0.5)


def test_degrade_seeded_and_errors():
    face = np.random.default_rng(0).uniform(size=(16, 16, 3))
    np.testing.assert_array_equal(degrade_face(face, 4, 0.1, 7), degrade_face(face, 4, 0.1, 7))
    assert not np.array_equal(degrade_face(face, 4, 0.1, 7), degrade_face(face, 4, 0.1, 8))
    out = degrade_face(face, 4, 0.5, 0)
    assert out.min() >= 0 and out.max() <= 1
    for factor, noise in ((1, 0.1), (32, 0.1), (4, -0.1)):
        with pytest.raises(ConfigError):
            degrade_face(face, factor, noise, 0)


def _nn_accuracy(x, y):
    d = ((x[:, None] - x[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    return float((y[d.argmin(1)] == y).mean())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_face_identity_signal(tmp_path, seed):
    """Leave-one-out nearest neighbour identifies faces better from clean crops than degraded ones."""
    m = generate_dataset(GenConfig(seed=seed, num_identities=12, outfits_per_identity=2, samples_per_outfit=3,
                                   noise_std=0.3), tmp_path)
    recs = [r for r in m.samples if r.has_face]
    samples = [load_sample(tmp_path, r) for r in recs]
    y = np.array([r.identity_id for r in recs])
    clean = np.stack([s.face_clean.ravel() for s in samples])
    degraded = np.stack([s.face_degraded.ravel() for s in samples])
    assert _nn_accuracy(clean, y) > _nn_accuracy(degraded, y)


# --------------------------------------------------------------------------- protocols


def _check_split(m, protocol):
    q, g = m.by_split("query"), m.by_split("gallery")
    assert {s.identity_id for s in q} <= {s.identity_id for s in g}
    for a in q:
        same_id = [b for b in g if b.identity_id == a.identity_id]
        if protocol == "cross_clothes":
            assert not any(b.clothing_id == a.clothing_id for b in same_id)
            assert same_id
        else:
            assert all(b.clothing_id == a.clothing_id for b in same_id)
    train_ids = {s.identity_id for s in m.by_split("train")}
    assert not train_ids & {s.identity_id for s in q + g}


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5), st.integers(2, 3), st.integers(2, 3))
def test_split_invariants_property(tmp_path_factory, seed, n_ids, outfits, per):
    root = tmp_path_factory.mktemp("split")
    m = generate_dataset(GenConfig(seed=seed, num_identities=n_ids, outfits_per_identity=outfits,
                                   samples_per_outfit=per, image_dims=(16, 8), face_dims=(4, 4),
                                   downscale_factor=2), root)
    _check_split(m, "cross_clothes")
    _check_split(split_protocol(m, "same_clothes"), "same_clothes")


def test_split_unsatisfiable():
    recs = [synth.SampleRecord(i, 9, 0, i, "gallery", "", "") for i in range(3)]
    m = synth.DatasetManifest(0, list(CATEGORY_TABLE), recs, (64, 32), (16, 16))
    with pytest.raises(ProtocolError):
        split_protocol(m, "cross_clothes")
    with pytest.raises(ProtocolError):
        split_protocol(m, "bogus")
