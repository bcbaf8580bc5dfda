import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneboot.frames import Frame
from coneboot.maskgen import BinaryMask
from coneboot.metrics import (
    apply_mask,
    confusion_counts,
    deid_leakage,
    pixel_accuracy,
    resize_mask_nearest,
    set_accuracy,
)


def _mask(bits):
    return BinaryMask(np.asarray(bits, dtype=bool))


class TestConfusionCounts:
    def test_all_foreground(self):
        m = _mask(np.ones((4, 4)))
        c = confusion_counts(m, m)
        assert (c.tp, c.tn, c.fp, c.fn) == (16, 0, 0, 0)

    def test_complement(self):
        rng = np.random.default_rng(0)
        t = _mask(rng.random((5, 5)) < 0.5)
        p = _mask(~t.bits)
        c = confusion_counts(p, t)
        assert c.tp == 0 and c.tn == 0
        assert c.fp + c.fn == 25

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        p = rng.random((32, 32)) < 0.5
        t = rng.random((32, 32)) < 0.5
        c = confusion_counts(_mask(p), _mask(t))
        tp = tn = fp = fn = 0
        for y in range(32):
            for x in range(32):
                if p[y, x] and t[y, x]:
                    tp += 1
                elif not p[y, x] and not t[y, x]:
                    tn += 1
                elif p[y, x]:
                    fp += 1
                else:
                    fn += 1
        assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
        assert c.total == 1024

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            confusion_counts(_mask(np.ones((2, 2))), _mask(np.ones((3, 3))))


class TestPixelAccuracy:
    def test_identical(self):
        rng = np.random.default_rng(2)
        m = _mask(rng.random((8, 8)) < 0.3)
        assert pixel_accuracy(m, m) == 1.0

    def test_complementary(self):
        m = _mask(np.eye(6))
        assert pixel_accuracy(m, _mask(~m.bits)) == 0.0

    def test_counted_disagreements(self):
        p = np.zeros((256, 256), dtype=bool)
        t = np.zeros((256, 256), dtype=bool)
        flat = t.ravel()
        flat[:5243] = True
        assert abs(pixel_accuracy(_mask(p), _mask(t)) - (1 - 5243 / 65536)) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_symmetry_and_complement_identity(self, seed):
        rng = np.random.default_rng(seed)
        a = _mask(rng.random((6, 6)) < 0.5)
        b = _mask(rng.random((6, 6)) < 0.5)
        assert pixel_accuracy(a, b) == pixel_accuracy(b, a)
        assert abs(pixel_accuracy(a, b) + pixel_accuracy(a, _mask(~b.bits)) - 1.0) < 1e-12


class TestApplyMask:
    def test_all_foreground_keeps_frame(self):
        f = Frame(np.full((4, 4), 123, dtype=np.uint8))
        out = apply_mask(f, _mask(np.ones((4, 4))))
        assert (out.pixels == 123).all()

    def test_all_background_zeroes(self):
        f = Frame(np.full((4, 4), 123, dtype=np.uint8))
        out = apply_mask(f, _mask(np.zeros((4, 4))))
        assert (out.pixels == 0).all()

    def test_half_and_half(self):
        f = Frame(np.full((4, 8), 100, dtype=np.uint8))
        bits = np.zeros((4, 8), dtype=bool)
        bits[:, :4] = True
        out = apply_mask(f, _mask(bits))
        assert (out.pixels[:, :4] == 100).all()
        assert (out.pixels[:, 4:] == 0).all()

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        f = Frame(rng.integers(0, 256, (6, 6)).astype(np.uint8))
        m = _mask(rng.random((6, 6)) < 0.5)
        once = apply_mask(f, m)
        twice = apply_mask(once, m)
        assert (once.pixels == twice.pixels).all()


class TestDeidLeakage:
    def test_disjoint_passes(self):
        m = _mask(np.eye(4))
        s = _mask(np.zeros((4, 4)))
        s.bits[0, 3] = True
        assert deid_leakage(m, s) == 0.0

    def test_total_failure(self):
        s = _mask(np.zeros((4, 4)))
        s.bits[1:3, 1:3] = True
        m = _mask(np.ones((4, 4)))
        assert deid_leakage(m, s) == 1.0

    def test_partial(self):
        s = _mask(np.zeros((2, 4)))
        s.bits[0, :] = True
        m = _mask(np.zeros((2, 4)))
        m.bits[0, :2] = True
        assert deid_leakage(m, s) == 0.5

    def test_empty_sensitive_region(self):
        m = _mask(np.ones((3, 3)))
        assert deid_leakage(m, _mask(np.zeros((3, 3)))) == 0.0


class TestResizeMaskNearest:
    def test_upsample_blocks(self):
        m = _mask([[1, 0], [0, 1]])
        up = resize_mask_nearest(m, 4, 4)
        assert (up.bits[:2, :2]).all()
        assert (up.bits[2:, 2:]).all()
        assert not up.bits[:2, 2:].any()

    def test_identity(self):
        rng = np.random.default_rng(4)
        m = _mask(rng.random((5, 7)) < 0.5)
        assert (resize_mask_nearest(m, 7, 5).bits == m.bits).all()


def test_set_accuracy_is_unweighted_mean():
    assert set_accuracy([1.0, 0.5, 0.75]) == 0.75
    with pytest.raises(ValueError):
        set_accuracy([])
