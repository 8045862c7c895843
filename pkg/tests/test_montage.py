import itertools

import numpy as np
import pytest

from luna_eeg.montage import (BIPOLAR_PAIRS, SEED_62, SIENA_29, TEN_TWENTY, MontageError, MontageLayout,
                              UnknownElectrodeError, bipolar_montage, electrode_position, montage_from_labels,
                              standard_montage)

REFERENCE_PAIRS = [
    "Fp1-F7", "F7-T3", "T3-T5", "T5-O1", "Fp2-F8", "F8-T4", "T4-T6", "T6-O2", "T3-C3", "C3-CZ",
    "Fp1-F3", "F3-C3", "C3-P3", "P3-O1", "Fp2-F4", "F4-C4", "C4-P4", "P4-O2", "CZ-C4", "C4-T4",
]


@pytest.mark.parametrize("name,count", [("10-20", 19), ("tcp20", 20), ("siena29", 29), ("seed62", 62)])
def test_standard_sizes(name, count):
    m = standard_montage(name)
    assert len(m) == count
    norms = np.linalg.norm(m.positions, axis=1)
    assert np.all((norms >= 0.99) & (norms <= 1.01))


def test_bipolar_pairs_in_order():
    assert list(standard_montage("tcp20").labels) == REFERENCE_PAIRS
    assert len(BIPOLAR_PAIRS) == 20


def test_bipolar_positions_are_normalised_midpoints():
    uni = montage_from_labels(TEN_TWENTY)
    bi = bipolar_montage(uni)
    for lab, pos in zip(bi.labels, bi.positions):
        a, b = lab.split("-")
        mid = electrode_position(a) + electrode_position(b)
        np.testing.assert_allclose(pos, mid / np.linalg.norm(mid), atol=1e-15)


def test_seed62_positions_distinct():
    pos = standard_montage("seed62").positions
    dmin = min(np.linalg.norm(pos[i] - pos[j]) for i, j in itertools.combinations(range(62), 2))
    assert dmin > 0.1


def test_aliases_and_case():
    np.testing.assert_array_equal(electrode_position("T3"), electrode_position("T7"))
    np.testing.assert_array_equal(electrode_position("fp1"), electrode_position("FP1"))
    assert electrode_position("Cz")[2] == pytest.approx(1.0)


def test_geometry_landmarks():
    assert electrode_position("Fpz")[1] == pytest.approx(1.0)
    assert electrode_position("T8")[0] == pytest.approx(1.0)
    assert electrode_position("C3")[0] < 0 < electrode_position("C4")[0]


def test_unknown_electrode():
    with pytest.raises(UnknownElectrodeError) as exc:
        electrode_position("XYZ")
    assert exc.value.label == "XYZ"


def test_duplicate_label_rejected():
    with pytest.raises(MontageError):
        MontageLayout(("C3", "c3"), np.stack([electrode_position("C3")] * 2))


def test_off_sphere_rejected():
    with pytest.raises(MontageError):
        MontageLayout(("C3",), np.array([[0.5, 0.0, 0.0]]))


def test_index_and_permute():
    m = standard_montage("10-20")
    assert m.index("cz") == TEN_TWENTY.index("Cz")
    perm = np.random.default_rng(0).permutation(len(m))
    p = m.permuted(perm)
    assert p.labels[0] == m.labels[perm[0]]
    np.testing.assert_array_equal(p.positions[3], m.positions[perm[3]])
    assert p != m and m == standard_montage("10-20")


def test_siena_labels_resolve():
    assert montage_from_labels(SIENA_29).labels == SIENA_29
    assert montage_from_labels(SEED_62).labels == SEED_62
