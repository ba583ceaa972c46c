import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairtriplet.core import (
    CONTINENTS,
    DEFAULT_TAXONOMY,
    Dataset,
    DemographicLabel,
    GroupTaxonomy,
    continent_of,
    cross_squared_distances,
    normalize,
    normalize_rows,
    squared_distance,
)
from fairtriplet.datagen import GeneratorConfig, generate_dataset


def unit_vectors(dim=5):
    return arrays(
        np.float64, dim,
        elements=st.floats(-1.0, 1.0, allow_nan=False),
    ).filter(lambda v: np.linalg.norm(v) > 1e-3).map(normalize)


class TestNormalize:
    def test_already_unit(self):
        assert np.array_equal(normalize(np.array([1.0, 0.0, 0.0])), [1.0, 0.0, 0.0])

    def test_three_four_five(self):
        assert np.allclose(normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            normalize(np.zeros(2))

    @given(unit_vectors())
    def test_unit_norm(self, v):
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_rows(self):
        x = np.array([[3.0, 4.0], [0.0, 2.0]])
        out = normalize_rows(x)
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0)


class TestSquaredDistance:
    def test_identical(self):
        v = normalize(np.array([1.0, 2.0, 3.0]))
        assert squared_distance(v, v) == 0.0

    def test_antipodal(self):
        assert squared_distance(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == 4.0

    def test_orthogonal(self):
        assert squared_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            squared_distance(np.zeros(2), np.zeros(3))

    @given(unit_vectors(), unit_vectors())
    def test_symmetry_and_range(self, a, b):
        d1 = squared_distance(a, b)
        d2 = squared_distance(b, a)
        assert d1 == d2
        assert -1e-12 <= d1 <= 4.0 + 1e-12

    @given(unit_vectors(), unit_vectors())
    def test_inner_product_identity(self, a, b):
        # For unit vectors, direct subtraction equals 2 - 2<a,b>.
        assert abs(squared_distance(a, b) - (2.0 - 2.0 * float(a @ b))) < 1e-9

    @given(unit_vectors(), unit_vectors())
    def test_zero_iff_equal(self, a, b):
        if squared_distance(a, b) < 1e-20:
            assert np.allclose(a, b, atol=1e-9)

    def test_cross_matrix_matches_scalar(self):
        rng = np.random.default_rng(0)
        a = normalize_rows(rng.normal(size=(7, 4)))
        b = normalize_rows(rng.normal(size=(9, 4)))
        d = cross_squared_distances(a, b)
        for i in range(7):
            for j in range(9):
                assert abs(d[i, j] - squared_distance(a[i], b[j])) < 1e-12


class TestTaxonomy:
    def test_thirty_groups_partitioned(self):
        tax = DEFAULT_TAXONOMY
        assert len(tax.countries) == 30
        buckets = {k: tax.countries_in(k) for k in CONTINENTS}
        assert sum(len(v) for v in buckets.values()) == 30
        flat = [c for v in buckets.values() for c in v]
        assert sorted(flat) == sorted(tax.countries)

    def test_known_mappings(self):
        assert continent_of("nigeria") == "AF"
        assert continent_of("thailand") == "AS"
        assert continent_of("unknown") == "UN"
        assert continent_of("oceania") == "OC"
        assert continent_of("usa") == "AM"
        assert continent_of("poland") == "EU"

    def test_unknown_code(self):
        with pytest.raises(ValueError):
            continent_of("atlantis")

    def test_each_country_exactly_one_continent(self):
        tax = DEFAULT_TAXONOMY
        for country in tax.countries:
            hits = [k for k in CONTINENTS if country in tax.countries_in(k)]
            assert hits == [tax.continent_of(country)]

    def test_table_hash_stable(self):
        assert DEFAULT_TAXONOMY.table_hash() == GroupTaxonomy().table_hash()


class TestDemographicLabel:
    def test_consistent(self):
        lbl = DemographicLabel.for_country("india", "female")
        assert lbl.continent == "AS"

    def test_inconsistent_rejected(self):
        with pytest.raises(ValueError):
            DemographicLabel("india", "EU", "male")

    def test_bad_gender_rejected(self):
        with pytest.raises(ValueError):
            DemographicLabel.for_country("india", "other")


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GeneratorConfig(seed=11, n_pairs=500, input_dim=8))


class TestDataset:
    @pytest.mark.parametrize("axis", ["country", "continent", "gender"])
    def test_group_index_partitions(self, dataset, axis):
        index = dataset.group_index(axis)
        all_idx = np.concatenate([v for v in index.values()])
        assert sorted(all_idx.tolist()) == list(range(len(dataset)))

    def test_pair_view(self, dataset):
        pair = dataset.pair(3)
        assert pair.label.continent == dataset.continents[3]
        assert np.array_equal(pair.selfie_features, dataset.selfie_features[3])

    def test_arrays_read_only(self, dataset):
        with pytest.raises(ValueError):
            dataset.selfie_features[0, 0] = 1.0
