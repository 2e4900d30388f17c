import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sspdsim import optics
from sspdsim.optics import (
    VACUUM,
    DispersionRangeError,
    DispersionTable,
    Layer,
    LayerStack,
    absorption_spectrum,
    characteristic_matrix,
    default_stack,
    fresnel_reflectance,
    load_material,
    stack_response,
)

SI = load_material("Si")
SIO2 = load_material("SiO2")
NBN = load_material("NbN")


def airy_single_film(n0, N1, d, Ns, wl):
    """Independent oracle: single film by summing multiple reflections (Airy)."""
    r01 = (n0 - N1) / (n0 + N1)
    r12 = (N1 - Ns) / (N1 + Ns)
    t01 = 2 * n0 / (n0 + N1)
    t12 = 2 * N1 / (N1 + Ns)
    ph = cmath.exp(2j * cmath.pi * N1 * d / wl)
    r = (r01 + r12 * ph ** 2) / (1 + r01 * r12 * ph ** 2)
    t = t01 * t12 * ph / (1 + r01 * r12 * ph ** 2)
    R = abs(r) ** 2
    T = (Ns.real / n0) * abs(t) ** 2 if isinstance(Ns, complex) else (Ns / n0) * abs(t) ** 2
    return R, T


def const_stack(layers, ns=1.5 + 0j):
    ls = tuple(Layer(d, DispersionTable.constant(N.real, N.imag, name=f"L{i}"), f)
               for i, (d, N, f) in enumerate(layers))
    return LayerStack(VACUUM, ls, DispersionTable.constant(ns.real, ns.imag, name="sub"))


# --- examples -------------------------------------------------------------


def test_bare_silicon_reflectance_633():
    # [DERIVED] TMM with no layers must equal the single-interface Fresnel value
    st_ = LayerStack(VACUUM, (), SI)
    N = SI.index(633.0)
    expect = abs((1 - N) / (1 + N)) ** 2
    r = stack_response(st_, 633.0)
    assert r.R == pytest.approx(expect, abs=1e-14)
    assert r.R == pytest.approx(fresnel_reflectance(1.0, N), abs=1e-14)
    # sanity: silicon reflects about a third of visible light
    assert 0.34 < r.R < 0.36
    assert r.R + r.T == pytest.approx(1.0, abs=1e-12)


def test_quarter_wave_layer_reflectance():
    # [DERIVED] quarter-wave film: R = ((n0 ns - n1^2) / (n0 ns + n1^2))^2
    n1, ns, wl = 1.45, 3.5, 800.0
    st_ = const_stack([(wl / (4 * n1), complex(n1), 1.0)], complex(ns))
    r = stack_response(st_, wl)
    assert r.R == pytest.approx(((ns - n1 ** 2) / (ns + n1 ** 2)) ** 2, abs=1e-13)


def test_half_wave_layer_is_absentee():
    n1, ns, wl = 2.1, 3.5, 633.0
    st_ = const_stack([(wl / (2 * n1), complex(n1), 1.0)], complex(ns))
    assert stack_response(st_, wl).R == pytest.approx(fresnel_reflectance(1.0, ns), abs=1e-13)


def test_quarter_wave_matrix():
    n1, wl = 1.45, 700.0
    layer = Layer(wl / (4 * n1), DispersionTable.constant(n1))
    M = characteristic_matrix(layer, wl)
    expect = np.array([[0, -1j / n1], [-1j * n1, 0]])
    assert np.allclose(M, expect, atol=1e-14)


@pytest.mark.parametrize("wl", [500.0, 637.0, 900.0, 1300.0])
def test_absorbing_film_matches_airy(wl):
    # [DERIVED] independent multiple-reflection sum for a lossy film on Si
    d = 4.0
    st_ = LayerStack(VACUUM, (Layer(d, NBN),), SI)
    r = stack_response(st_, wl)
    R, T = airy_single_film(1.0, NBN.index(wl), d, SI.index(wl), wl)
    assert r.R == pytest.approx(R, abs=1e-12)
    assert r.T == pytest.approx(T, abs=1e-12)
    assert r.absorption_per_layer[0] == pytest.approx(1 - R - T, abs=1e-12)


def test_default_stack_layout():
    s = default_stack()
    assert [layer.name for layer in s.layers] == ["NbN", "SiO2"]
    assert s.layers[0].thickness_nm == 4.0 and s.layers[0].fill_factor == 0.6
    assert s.layers[1].thickness_nm == 160.0


def test_spacer_thickness_moves_peak():
    # a quarter-wave spacer puts the antinode at the film: thicker spacer, redder peak
    wl = np.arange(500.0, 1301.0, 5.0)
    peaks = []
    for spacer in (100.0, 160.0, 220.0):
        A = [r.absorption_per_layer[0] for r in absorption_spectrum(default_stack(spacer_nm=spacer), wl)]
        peaks.append(wl[int(np.argmax(A))])
    assert peaks[0] < peaks[1] < peaks[2]


def test_zero_thickness_layer_is_identity():
    base = LayerStack(VACUUM, (Layer(160.0, SIO2),), SI)
    extra = LayerStack(VACUUM, (Layer(0.0, NBN), Layer(160.0, SIO2)), SI)
    a, b = stack_response(base, 700.0), stack_response(extra, 700.0)
    assert b.R == pytest.approx(a.R, abs=1e-15)
    assert b.absorption_per_layer[0] == pytest.approx(0.0, abs=1e-15)


def test_fill_factor_effective_medium():
    wl = 700.0
    eps = NBN.permittivity(wl)
    layer = Layer(4.0, NBN, 0.6)
    N = layer.effective_index(wl)
    assert N ** 2 == pytest.approx(0.6 * eps + 0.4, abs=1e-12)
    assert N.imag >= 0
    assert Layer(4.0, NBN, 1.0).effective_index(wl) == NBN.index(wl)


def test_range_errors_name_layer_and_wavelength():
    s = default_stack()
    with pytest.raises(DispersionRangeError, match="'Si' table range"):
        stack_response(s, 300.0)
    film = LayerStack(VACUUM, (Layer(4.0, NBN, name="meander"),), VACUUM)
    with pytest.raises(DispersionRangeError, match="layer 'meander'"):
        stack_response(film, 300.0)
    with pytest.raises(DispersionRangeError, match="wavelength index 1"):
        absorption_spectrum(s, [700.0, 2000.0])
    with pytest.raises(ValueError):
        absorption_spectrum(s, [])


def test_table_validation():
    with pytest.raises(ValueError):
        DispersionTable((500.0,), (1.0,), (0.0,))
    with pytest.raises(ValueError):
        DispersionTable((500.0, 400.0), (1.0, 1.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        DispersionTable((400.0, 500.0), (1.0, 1.0), (0.0, -0.1))
    with pytest.raises(ValueError):
        LayerStack(DispersionTable.constant(1.0, 0.1), (), SI)
    with pytest.raises(ValueError):
        Layer(-1.0, SIO2)
    with pytest.raises(ValueError):
        Layer(1.0, SIO2, 0.0)
    with pytest.raises(ValueError):
        load_material("unobtainium")


def test_dispersion_file_roundtrip(tmp_path):
    path = tmp_path / "m.txt"
    optics.write_dispersion(NBN, path, comment="round trip")
    back = optics.read_dispersion(path, name="NbN")
    assert back == NBN
    bad = tmp_path / "bad.txt"
    bad.write_text("# header\n500 1.0\n")
    with pytest.raises(ValueError, match="bad.txt:2"):
        optics.read_dispersion(bad)
    assert load_material(str(path)).n == NBN.n


# --- properties -----------------------------------------------------------

layer_st = st.tuples(
    st.floats(0.0, 400.0),
    st.complex_numbers(min_magnitude=0, max_magnitude=6, allow_nan=False, allow_infinity=False)
    .map(lambda z: complex(abs(z.real) + 1.0, abs(z.imag))),
    st.floats(0.05, 1.0),
)


@given(st.lists(layer_st, min_size=0, max_size=5), st.floats(500.0, 1300.0),
       st.floats(1.0, 4.5), st.floats(0.0, 0.5))
def test_energy_conservation(layers, wl, ns, ks):
    r = stack_response(const_stack(layers, complex(ns, ks)), wl)
    assert r.total == pytest.approx(1.0, abs=1e-10)
    assert all(a >= -1e-12 for a in r.absorption_per_layer)
    assert 0.0 <= r.R <= 1.0 + 1e-12


@given(st.lists(st.tuples(st.floats(0.0, 400.0), st.floats(1.0, 4.0)), max_size=5),
       st.floats(500.0, 1300.0), st.floats(1.0, 4.0))
def test_lossless_stack_absorbs_nothing(layers, wl, ns):
    r = stack_response(const_stack([(d, complex(n), 1.0) for d, n in layers], complex(ns)), wl)
    assert max([abs(a) for a in r.absorption_per_layer], default=0.0) < 1e-12
    assert r.R + r.T == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.0, 500.0), st.complex_numbers(max_magnitude=5, allow_nan=False,
                                                 allow_infinity=False), st.floats(400.0, 1500.0))
def test_characteristic_matrix_unimodular(d, z, wl):
    N = complex(abs(z.real) + 0.5, abs(z.imag))
    M = characteristic_matrix(Layer(d, DispersionTable.constant(N.real, N.imag)), wl)
    assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-9 * max(1.0, np.abs(M).max() ** 2))


@given(st.floats(1.0, 300.0), st.floats(1.0, 300.0), st.floats(500.0, 1300.0))
def test_splitting_a_layer_changes_nothing(d1, d2, wl):
    one = const_stack([(d1 + d2, 2.0 + 0.3j, 1.0)])
    two = const_stack([(d1, 2.0 + 0.3j, 1.0), (d2, 2.0 + 0.3j, 1.0)])
    a, b = stack_response(one, wl), stack_response(two, wl)
    assert b.R == pytest.approx(a.R, abs=1e-12)
    assert sum(b.absorption_per_layer) == pytest.approx(a.absorption_per_layer[0], abs=1e-12)


def test_fresnel_symmetry():
    assert fresnel_reflectance(1.0, 1.5) == pytest.approx(0.04, abs=1e-15)
    assert fresnel_reflectance(1.5, 1.0) == pytest.approx(0.04, abs=1e-15)
    assert math.isclose(fresnel_reflectance(2.0, 2.0), 0.0)
