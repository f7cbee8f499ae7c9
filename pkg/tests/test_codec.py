from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_image, smooth_image
from sdpc.bitstream import EncodedStream, ModePolicy, StreamFormatError, pack_indices
from sdpc.codec import (
    ALL_MODES,
    CodecConfig,
    Mode,
    Quantizer,
    build_candidates,
    decode_measurements,
    dequantize,
    encode,
    previous_block,
    quantize,
    select_mode,
)
from sdpc.image_io import BlockLattice, Image, ScanOrder
from sdpc.sensing import MeasurementGrid


def grid_with(recon, bx=4, by=3, order=ScanOrder.RASTER):
    lat = BlockLattice(2, bx, by, order)
    g = MeasurementGrid(lat, np.zeros((lat.n, recon.shape[1])))
    g.reconstructed[:] = recon
    return g


# -- candidates -------------------------------------------------------------

def test_first_block_has_no_candidates():
    g = grid_with(np.arange(24.0).reshape(12, 2))
    assert build_candidates(g, (0, 0)) == []


def test_top_row_horizontal_only():
    g = grid_with(np.arange(24.0).reshape(12, 2))
    cands = build_candidates(g, (0, 3))
    assert [m for m, _ in cands] == [Mode.HORIZONTAL]
    assert cands[0][1].tolist() == g.reconstructed[2].tolist()


def test_left_column_vertical_only():
    g = grid_with(np.arange(24.0).reshape(12, 2))
    assert [m for m, _ in build_candidates(g, (2, 0))] == [Mode.VERTICAL]


@pytest.mark.parametrize("order", list(ScanOrder))
def test_interior_block_neighbours(order):
    recon = np.arange(24.0).reshape(12, 2)
    g = grid_with(recon, order=order)
    lat = g.lattice
    cands = dict(build_candidates(g, (1, 2)))
    assert set(cands) == set(ALL_MODES)
    assert cands[Mode.VERTICAL].tolist() == recon[lat.index(0, 2)].tolist()
    assert cands[Mode.HORIZONTAL].tolist() == recon[lat.index(1, 1)].tolist()
    assert cands[Mode.DIAGONAL].tolist() == recon[lat.index(0, 1)].tolist()


def test_dc_is_mean():
    lat = BlockLattice(2, 2, 2)
    g = MeasurementGrid(lat, np.zeros((4, 2)))
    g.reconstructed[lat.index(0, 1)] = [2, 4]  # up of (1, 1)
    g.reconstructed[lat.index(1, 0)] = [4, 0]  # left of (1, 1)
    g.reconstructed[lat.index(0, 0)] = [0, 0]
    assert dict(build_candidates(g, (1, 1)))[Mode.DC].tolist() == [3, 2]


def test_candidates_read_only_reconstructed():
    recon = np.arange(24.0).reshape(12, 2)
    g = grid_with(recon)
    before = [(m, p.copy()) for m, p in build_candidates(g, (2, 3))]
    g.vectors[:] = 1e9  # corrupt the clean measurements
    after = build_candidates(g, (2, 3))
    assert [m for m, _ in before] == [m for m, _ in after]
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(before, after))


# -- selection --------------------------------------------------------------

def test_select_mode_l1():
    x = np.array([4.0, 0.0])
    cands = [
        (Mode.VERTICAL, np.array([4.0, 1.0])),
        (Mode.HORIZONTAL, np.array([0.0, 0.0])),
        (Mode.DC, np.array([2.0, 0.5])),
        (Mode.DIAGONAL, np.array([9.0, 9.0])),
    ]
    # brute-force l1 over all four candidates
    costs = {m: sum(abs(a - b) for a, b in zip(p, x)) for m, p in cands}
    assert costs == {Mode.VERTICAL: 1, Mode.HORIZONTAL: 4, Mode.DC: 2.5, Mode.DIAGONAL: 14}
    mode, pred = select_mode(x, cands)
    assert mode == min(costs, key=costs.get) == Mode.VERTICAL
    assert pred.tolist() == [4.0, 1.0]


def test_select_exact_match():
    x = np.array([1.0, 2.0, 3.0])
    mode, pred = select_mode(x, [(Mode.VERTICAL, x + 1), (Mode.DC, x.copy())])
    assert mode == Mode.DC and np.abs(pred - x).sum() == 0


def test_select_tie_lowest_code():
    x = np.zeros(2)
    cands = [(Mode.DIAGONAL, np.array([1.0, 0])), (Mode.HORIZONTAL, np.array([0, -1.0])), (Mode.DC, np.array([0, 1.0]))]
    assert select_mode(x, cands)[0] == Mode.HORIZONTAL


def test_select_empty():
    mode, pred = select_mode(np.ones(5), [])
    assert mode is None and pred.tolist() == [0.0] * 5


# -- quantizer --------------------------------------------------------------

def test_quantize_examples():
    q = Quantizer(10)
    assert quantize(q, [17, -4, 5]).tolist() == [2, 0, 1]
    assert quantize(q, [-5, -15, 15, 25]).tolist() == [-1, -2, 2, 3]
    assert quantize(q, np.zeros(4)).tolist() == [0] * 4
    assert dequantize(q, [2, 0, 1]).tolist() == [20, 0, 10]
    assert dequantize(q, [0, 0]).tolist() == [0, 0]


def test_quantize_rejects_nonfinite():
    with pytest.raises(ValueError):
        quantize(Quantizer(1.0), [np.nan])
    with pytest.raises(ValueError):
        quantize(Quantizer(1.0), [np.inf])
    with pytest.raises(ValueError):
        Quantizer(0.0)


def within_half_step(d, s, step):
    """|d - step*s| <= step/2 evaluated exactly on the binary64 inputs."""
    return abs(Fraction(float(d)) - Fraction(step) * int(s)) <= Fraction(step) / 2


@pytest.mark.parametrize("step", [0.25, 1.0, 7.3, 32.0])
def test_quantizer_cell_grid(step):
    # a fine grid covering several cells, edges included
    q = Quantizer(step)
    d = np.linspace(-3 * step, 3 * step, 60001)
    s = quantize(q, d)
    assert all(within_half_step(x, k, step) for x, k in zip(d, s))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e3))
def test_midtread_bound(d, step):
    s = quantize(Quantizer(step), [d])
    assert within_half_step(d, s[0], step)


def test_quantize_exact_ties():
    # cell edges for q = 7.3, where float residuals alone cannot tell the sides apart
    q = Quantizer(7.3)
    for d in (127.75, -127.75, 164.25, 200.75):
        assert within_half_step(d, quantize(q, d), 7.3)
    assert quantize(Quantizer(2.0), 3.0) == 2 and quantize(Quantizer(2.0), -3.0) == -2


# -- closed loop ------------------------------------------------------------

def test_no_prediction_is_plain_sq(rng):
    img = random_image(rng, 32, 32)
    cfg = CodecConfig(ModePolicy.NONE, 8, 0.5, 4.0, 3)
    stream, rep = encode(img, cfg)
    assert stream.modes is None
    expected = quantize(Quantizer(4.0), rep.grid.vectors)
    assert np.array_equal(stream.indices, expected)
    assert np.array_equal(rep.residual_l1, np.abs(rep.grid.vectors).sum(axis=1))


def test_constant_image_full_rate():
    img = Image(np.full((64, 64), 93, np.uint8))
    for q in (0.5, 3.0, 40.0):
        stream, rep = encode(img, CodecConfig(ModePolicy.SDPC, 16, 1.0, q, 1))
        first = rep.grid.reconstructed[0]
        assert np.all(rep.modes[1:] >= 0)
        # every later block is predicted exactly from block 0's reconstruction
        assert np.all(stream.indices[1:] == 0)
        assert np.all(rep.grid.reconstructed == first)
        assert np.all(np.abs(rep.grid.vectors[1:] - first) <= q / 2)


def test_dpcm_equivalent_to_vertical_only(rng):
    for k in range(20):
        img = smooth_image(rng, 16 * int(rng.integers(1, 5)), 16 * int(rng.integers(1, 5)))
        q = float(rng.choice([1.0, 8.0, 32.0]))
        base = dict(block_size=16, subrate=0.25, step=q, seed=k, scan_order=ScanOrder.COLUMN_MAJOR)
        dpcm, _ = encode(img, CodecConfig(ModePolicy.DPCM, **base))
        vert, _ = encode(img, CodecConfig(ModePolicy.SDPC, modes=(Mode.VERTICAL,), **base))
        assert pack_indices(vert.indices) == pack_indices(dpcm.indices)


def test_previous_block_is_scan_line_neighbour():
    lat = BlockLattice(2, 3, 2, ScanOrder.RASTER)
    assert previous_block(lat, 1, 2) == lat.index(1, 1)
    assert previous_block(lat, 1, 0) is None
    lat = BlockLattice(2, 3, 2, ScanOrder.COLUMN_MAJOR)
    assert previous_block(lat, 1, 2) == lat.index(0, 2)
    assert previous_block(lat, 0, 2) is None


def test_encoder_uses_reconstructed_neighbours(rng):
    img = smooth_image(rng, 48, 48)
    stream, rep = encode(img, CodecConfig(ModePolicy.SDPC, 8, 0.5, 16.0, 2))
    g = rep.grid
    for i in range(1, g.lattice.n):
        mode = int(rep.modes[i])
        if mode < 0:
            continue
        cands = dict(build_candidates(g, g.lattice.position(i)))
        pred = cands[Mode(mode)]
        assert np.array_equal(g.reconstructed[i], pred + dequantize(Quantizer(16.0), stream.indices[i]))


@pytest.mark.parametrize("policy", list(ModePolicy))
@pytest.mark.parametrize("order", list(ScanOrder))
def test_decoder_matches_encoder(rng, policy, order):
    img = smooth_image(rng, 40, 56)  # not a multiple of 16
    cfg = CodecConfig(policy, 16, 0.3, 5.0, 4, order)
    stream, rep = encode(img, cfg)
    grid = decode_measurements(EncodedStream.from_bytes(stream.to_bytes()))
    assert grid.reconstructed.tobytes() == rep.grid.reconstructed.tobytes()


def test_argmin_dominance(rng):
    img = smooth_image(rng, 64, 64)
    for order in ScanOrder:
        _, rep = encode(img, CodecConfig(ModePolicy.SDPC, 8, 0.5, 6.0, 1, order))
        prev_mode = Mode.HORIZONTAL if order == ScanOrder.RASTER else Mode.VERTICAL
        l1 = rep.candidate_l1
        avail = ~np.isnan(l1[:, prev_mode])
        assert avail.sum() > 0
        assert np.all(rep.residual_l1[avail] <= l1[avail, prev_mode])
        chosen = rep.modes >= 0
        assert np.array_equal(rep.residual_l1[chosen], np.nanmin(l1[chosen], axis=1))


def test_mode_percentages_sum(rng):
    _, rep = encode(smooth_image(rng, 64, 64), CodecConfig(ModePolicy.SDPC, 8, 0.5, 2.0, 1))
    assert sum(rep.mode_percentages().values()) == pytest.approx(100.0, abs=1e-9)
    assert sum(rep.histogram.values()) == rep.grid.vectors.size


def test_decoder_rejects_unavailable_mode(rng):
    stream, _ = encode(smooth_image(rng, 32, 32), CodecConfig(ModePolicy.SDPC, 8, 0.5, 4.0, 1))
    bad = stream.modes.copy()
    bad[1] = Mode.VERTICAL  # block (0, 1) has no up neighbour
    with pytest.raises(StreamFormatError, match="block 1"):
        decode_measurements(EncodedStream(stream.header, bad, stream.indices))
    bad = stream.modes.copy()
    bad[0] = 3
    with pytest.raises(StreamFormatError, match="block 0"):
        decode_measurements(EncodedStream(stream.header, bad, stream.indices))


def test_decoder_rejects_flags_under_dpcm(rng):
    stream, _ = encode(smooth_image(rng, 32, 32), CodecConfig(ModePolicy.DPCM, 8, 0.5, 4.0, 1))
    with pytest.raises(StreamFormatError):
        decode_measurements(EncodedStream(stream.header, np.zeros(16, np.int8), stream.indices))


def test_border_flags_written():
    img = Image(np.tile(np.arange(64, dtype=np.uint8), (64, 1)))
    stream, rep = encode(img, CodecConfig(ModePolicy.SDPC, 16, 0.5, 8.0, 1))
    lat = rep.grid.lattice
    assert stream.modes[0] == 0
    for i in range(1, lat.blocks_x):  # top row
        assert stream.modes[i] == Mode.HORIZONTAL
    for r in range(1, lat.blocks_y):  # left column
        assert stream.modes[lat.index(r, 0)] == Mode.VERTICAL
    assert len(stream.modes) == lat.n


def test_encode_is_deterministic(rng):
    img = smooth_image(rng, 48, 48)
    cfg = CodecConfig(ModePolicy.SDPC, 16, 0.5, 8.0, 9)
    assert encode(img, cfg)[0].to_bytes() == encode(img, cfg)[0].to_bytes()


def test_config_validation():
    with pytest.raises(ValueError):
        CodecConfig(step=0)
    with pytest.raises(ValueError):
        CodecConfig(subrate=0)
    with pytest.raises(ValueError):
        CodecConfig(modes=())
