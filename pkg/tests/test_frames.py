import numpy as np
import pytest
from PIL import Image

from coneboot.frames import (
    DatasetManifest,
    Frame,
    ManifestEntry,
    ManifestError,
    MissingSequenceDir,
    MixedFrameSizes,
    TooFewFrames,
    UndecodableFrame,
    load_manifest,
    load_png_gray,
    load_sequence,
    resize_bilinear,
    write_manifest,
)


def _write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


class TestLoadSequence:
    def test_identity_white_frames(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        for i in range(3):
            _write_png(d / f"frame_{i:03d}.png", np.full((8, 8), 255))
        seq = load_sequence(d)
        assert len(seq) == 3
        assert seq.source_size == (8, 8)
        assert all((f.pixels == 255).all() for f in seq.frames)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(MissingSequenceDir):
            load_sequence(tmp_path / "nope")

    def test_too_few_frames(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        _write_png(d / "frame_000.png", np.zeros((4, 4)))
        with pytest.raises(TooFewFrames):
            load_sequence(d)

    def test_mixed_dimensions(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        _write_png(d / "frame_000.png", np.zeros((8, 8)))
        _write_png(d / "frame_001.png", np.zeros((16, 16)))
        with pytest.raises(MixedFrameSizes):
            load_sequence(d)

    def test_undecodable_file(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        _write_png(d / "frame_000.png", np.zeros((4, 4)))
        (d / "frame_001.png").write_bytes(b"not a png at all")
        with pytest.raises(UndecodableFrame):
            load_sequence(d)

    def test_mask_files_ignored(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        for i in range(2):
            _write_png(d / f"frame_{i:03d}.png", np.full((4, 4), i))
        _write_png(d / "truth_mask.png", np.full((4, 4), 255))
        _write_png(d / "mask_hull.png", np.full((4, 4), 255))
        assert len(load_sequence(d)) == 2

    def test_lexicographic_order(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        _write_png(d / "frame_001.png", np.full((4, 4), 10))
        _write_png(d / "frame_000.png", np.full((4, 4), 5))
        seq = load_sequence(d)
        assert seq.frames[0].pixels[0, 0] == 5
        assert seq.frames[1].pixels[0, 0] == 10


class TestGrayscale:
    def test_red_luma(self, tmp_path):
        p = tmp_path / "rgb.png"
        arr = np.zeros((2, 2, 3), dtype=np.uint8)
        arr[..., 0] = 255
        Image.fromarray(arr).save(p)
        gray = load_png_gray(p)
        # round(0.299 * 255) computed by hand
        assert (gray == 76).all()

    def test_idempotent_on_gray(self, tmp_path):
        p = tmp_path / "g.png"
        for v in (0, 1, 37, 128, 254, 255):
            arr = np.full((3, 3, 3), v, dtype=np.uint8)
            Image.fromarray(arr).save(p)
            assert (load_png_gray(p) == v).all()


class TestResizeBilinear:
    def test_uniform_stays_uniform(self):
        f = Frame(np.full((5, 7), 37, dtype=np.uint8))
        out = resize_bilinear(f, 13, 3)
        assert out.pixels.shape == (3, 13)
        assert (out.pixels == 37).all()

    def test_identity_size(self):
        rng = np.random.default_rng(0)
        f = Frame(rng.integers(0, 256, size=(9, 6)).astype(np.uint8))
        out = resize_bilinear(f, 6, 9)
        assert (out.pixels == f.pixels).all()

    def test_matches_per_pixel_reference(self):
        # direct evaluation of the documented convention, one output pixel at a time
        def reference(src, out_w, out_h):
            in_h, in_w = src.shape
            out = np.zeros((out_h, out_w))
            for oy in range(out_h):
                for ox in range(out_w):
                    sx = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
                    sy = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
                    x0, y0 = int(sx), int(sy)
                    x1, y1 = min(x0 + 1, in_w - 1), min(y0 + 1, in_h - 1)
                    fx, fy = sx - x0, sy - y0
                    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
                    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
                    out[oy, ox] = top * (1 - fy) + bot * fy
            return out

        src = np.array([[0.0, 100.0]])
        got = resize_bilinear(Frame(src), 4, 1)
        want = reference(src, 4, 1)
        assert np.allclose(got.pixels, want, atol=1e-12)

        rng = np.random.default_rng(3)
        src = rng.integers(0, 256, size=(7, 5)).astype(np.float64)
        got = resize_bilinear(Frame(src), 11, 4)
        assert np.allclose(got.pixels, reference(src, 11, 4), atol=1e-9)

    def test_bounds_preserved(self):
        rng = np.random.default_rng(1)
        src = rng.integers(10, 200, size=(6, 6)).astype(np.uint8)
        out = resize_bilinear(Frame(src), 17, 3)
        assert out.pixels.min() >= src.min()
        assert out.pixels.max() <= src.max()

    def test_rejects_bad_target(self):
        f = Frame(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            resize_bilinear(f, 0, 4)


class TestManifest:
    def _manifest(self, tmp_path, n=2):
        entries = []
        for i in range(n):
            d = tmp_path / f"seq_{i}"
            d.mkdir(exist_ok=True)
            entries.append(ManifestEntry(f"seq_{i}", f"seq_{i}", 4, "unsorted"))
        return DatasetManifest(entries=entries, seed_log={"corpus": 7})

    def test_roundtrip_empty(self, tmp_path):
        p = tmp_path / "manifest.json"
        write_manifest(DatasetManifest(), p)
        assert load_manifest(p) == DatasetManifest()

    def test_roundtrip_entries(self, tmp_path):
        m = self._manifest(tmp_path)
        m.entries[1].split = "train_good"
        p = tmp_path / "manifest.json"
        write_manifest(m, p)
        assert load_manifest(p) == m

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ManifestError):
            DatasetManifest(entries=[
                ManifestEntry("a", "a", 2), ManifestEntry("a", "b", 2),
            ])

    def test_duplicate_ids_rejected_on_load(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text(
            '{"version": 1, "entries": ['
            '{"sequence_id": "a", "path": "a", "frame_count": 2, "split": "unsorted"},'
            '{"sequence_id": "a", "path": "b", "frame_count": 2, "split": "unsorted"}], "seed_log": {}}'
        )
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_missing_path_rejected_on_write(self, tmp_path):
        m = DatasetManifest(entries=[ManifestEntry("ghost", "ghost", 2)])
        with pytest.raises(ManifestError):
            write_manifest(m, tmp_path / "manifest.json")

    def test_split_queries(self):
        m = DatasetManifest(entries=[
            ManifestEntry("x", "x", 2, "representative_test"),
            ManifestEntry("y", "y", 2, "bad_mask_test"),
            ManifestEntry("z", "z", 2, "train_good"),
        ])
        assert m.ids_in_split("representative_test") == ["x"]
        assert m.ids_in_split("bad_mask_test") == ["y"]
        assert set(m.ids_in_split("representative_test")).isdisjoint(m.ids_in_split("train_good"))

    def test_unknown_split_rejected(self):
        with pytest.raises(ManifestError):
            ManifestEntry("a", "a", 2, "mystery")

    def test_malformed_document(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text("{not json")
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_unknown_version(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text('{"version": 99, "entries": []}')
        with pytest.raises(ManifestError):
            load_manifest(p)


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        Frame(np.full((2, 2), 1.5), normalized=True)
    with pytest.raises(ValueError):
        Frame(np.full((2, 2), 256.0))
