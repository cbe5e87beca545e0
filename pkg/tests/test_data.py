import numpy as np
import pytest

from msda.analysis import EmpiricalDomain, lm_divergence
from msda.data import (DataFormatError, DomainDataset, SyntheticSpec, batcher,
                       gen_gaussian_domains, gen_moons_domains, load_csv,
                       save_csv)


def make_spec(**overrides):
    base = dict(n_domains=3, n_classes=2, dim=2, samples_per_class=10,
                class_separation=3.0, domain_shift_scale=0.5,
                noise_sigma=1.0, seed=42)
    base.update(overrides)
    return SyntheticSpec(**base)


class TestGaussianDomains:
    def test_counts(self):
        datasets = gen_gaussian_domains(make_spec())
        assert len(datasets) == 3
        assert all(d.n_samples == 20 for d in datasets)
        assert all(d.dim == 2 for d in datasets)

    def test_same_seed_bit_identical(self):
        a = gen_gaussian_domains(make_spec())
        b = gen_gaussian_domains(make_spec())
        for da, db in zip(a, b):
            assert (da.features == db.features).all()
            assert (da.labels == db.labels).all()

    def test_different_seed_differs(self):
        a = gen_gaussian_domains(make_spec())
        b = gen_gaussian_domains(make_spec(seed=43))
        assert not (a[0].features == b[0].features).all()

    def test_zero_shift_identical_mixture(self):
        # distinct samples but matching per-class means across domains
        spec = make_spec(domain_shift_scale=0.0, samples_per_class=2000)
        a, b, _ = gen_gaussian_domains(spec)
        assert not (a.features == b.features).all()
        for c in range(2):
            mean_a = a.features[a.labels == c].mean(axis=0)
            mean_b = b.features[b.labels == c].mean(axis=0)
            np.testing.assert_allclose(mean_a, mean_b, atol=0.15)

    def test_all_domains_labeled(self):
        for ds in gen_gaussian_domains(make_spec()):
            assert ds.labels is not None
            assert set(np.unique(ds.labels)) == {0, 1}

    def test_zero_shift_divergence_vanishes(self):
        spec = make_spec(n_domains=2, domain_shift_scale=0.0,
                         samples_per_class=10_000)
        a, b = gen_gaussian_domains(spec)
        d = lm_divergence(EmpiricalDomain.from_dataset(a),
                          EmpiricalDomain.from_dataset(b), 1)
        per_term = 5 * spec.noise_sigma / np.sqrt(spec.samples_per_class)
        n_terms = spec.n_classes * spec.dim
        assert d < n_terms * per_term


class TestMoonsDomains:
    def test_canonical_first_domain(self):
        spec = make_spec(noise_sigma=1e-6, samples_per_class=200,
                         domain_shift_scale=0.7)
        ds = gen_moons_domains(spec)[0]
        upper = ds.features[ds.labels == 0]
        # noiseless upper moon sits on the unit circle
        np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0,
                                   atol=1e-4)

    def test_pi_rotation_point_reflects(self):
        spec = make_spec(n_domains=2, domain_shift_scale=np.pi,
                         noise_sigma=1e-6, samples_per_class=100)
        d0, d1 = gen_moons_domains(spec)
        # same class-0 arc, reflected through the origin (up to noise draw)
        arc0 = np.sort(np.arctan2(d0.features[d0.labels == 0][:, 1],
                                  d0.features[d0.labels == 0][:, 0]))
        arc1 = np.sort(np.arctan2(-d1.features[d1.labels == 0][:, 1],
                                  -d1.features[d1.labels == 0][:, 0]))
        assert abs(np.median(arc0) - np.median(arc1)) < 0.2

    def test_determinism(self):
        spec = make_spec()
        a = gen_moons_domains(spec)
        b = gen_moons_domains(spec)
        assert (a[1].features == b[1].features).all()

    def test_rejects_wrong_class_count(self):
        with pytest.raises(ValueError, match="n_classes"):
            gen_moons_domains(make_spec(n_classes=3))

    def test_rejects_wrong_dim(self):
        with pytest.raises(ValueError, match="dim"):
            gen_moons_domains(make_spec(dim=3))


class TestCsvRoundTrip:
    def test_labeled_round_trip(self, tmp_path):
        ds = gen_gaussian_domains(make_spec())[0]
        path = tmp_path / "d.csv"
        save_csv(ds, path)
        loaded = load_csv(path)
        assert (loaded.features == ds.features).all()
        assert (loaded.labels == ds.labels).all()
        assert loaded.domain_name == ds.domain_name
        assert loaded.n_classes == ds.n_classes

    def test_unlabeled_round_trip(self, tmp_path):
        ds = gen_gaussian_domains(make_spec())[0].without_labels()
        path = tmp_path / "d.csv"
        save_csv(ds, path)
        assert load_csv(path).labels is None

    def test_empty_data_section(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("dim=2,labeled=1,classes=2,domain=empty\n")
        loaded = load_csv(path)
        assert loaded.n_samples == 0

    def test_extra_label_column_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("dim=2,labeled=0,classes=2,domain=x\n1.0,2.0,1\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv(path)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("dim=2,labeled=1,classes=2,domain=x\n"
                        "1.0,2.0,1\nfoo,2.0,0\n")
        with pytest.raises(DataFormatError, match="line 3"):
            load_csv(path)

    def test_label_out_of_range_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("dim=1,labeled=1,classes=2,domain=x\n1.0,5\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("dim=1,labeled=1\n")
        with pytest.raises(DataFormatError, match="line 1"):
            load_csv(path)


class TestBatcher:
    def dataset(self, n):
        return DomainDataset(np.zeros((n, 1)), np.zeros(n, dtype=int), "d", 1)

    def test_batch_sizes(self):
        batches = batcher(self.dataset(10), 4, epoch_seed=0)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_large_batch_is_permutation(self):
        batches = batcher(self.dataset(7), 100, epoch_seed=1)
        assert len(batches) == 1
        assert sorted(batches[0]) == list(range(7))

    def test_determinism(self):
        a = batcher(self.dataset(20), 6, epoch_seed=5)
        b = batcher(self.dataset(20), 6, epoch_seed=5)
        assert all((x == y).all() for x, y in zip(a, b))

    def test_epochs_differ(self):
        a = batcher(self.dataset(20), 6, epoch_seed=5)
        b = batcher(self.dataset(20), 6, epoch_seed=6)
        assert any((x != y).any() for x, y in zip(a, b))

    def test_union_covers_index_set(self):
        batches = batcher(self.dataset(23), 5, epoch_seed=9)
        merged = np.concatenate(batches)
        assert sorted(merged) == list(range(23))


class TestValidation:
    def test_label_count_mismatch(self):
        with pytest.raises(ValueError):
            DomainDataset(np.zeros((3, 2)), np.zeros(2, dtype=int), "d", 2)

    def test_label_range(self):
        with pytest.raises(ValueError):
            DomainDataset(np.zeros((2, 2)), np.array([0, 5]), "d", 2)

    def test_spec_rejects_single_domain(self):
        with pytest.raises(ValueError):
            make_spec(n_domains=1)

    def test_spec_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            make_spec(noise_sigma=0.0)
