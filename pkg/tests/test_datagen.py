import numpy as np
import pytest

from stablebc.datagen import (
    Dataset,
    encode_dataset,
    generate,
    load_dataset,
    save_dataset,
)
from stablebc.envs import DrivingEnv, PointMassEnv, QuadrotorEnv, train_autoencoder
from stablebc.errors import ConfigError, ConvergenceError, DimensionError


@pytest.fixture(scope="module")
def driving_ds():
    return generate(DrivingEnv(), demos=5, seed=0)


class TestGenerate:
    def test_driving_demo_count_times_horizon(self, driving_ds):
        assert len(driving_ds) == 100  # 5 demos x 20 pairs

    def test_dims_match_env(self, driving_ds):
        assert driving_ds.X.shape == (100, 2)
        assert driving_ds.Y.shape == (100, 2)
        assert driving_ds.U.shape == (100, 2)
        assert driving_ds.env_name == "driving"

    def test_actions_within_candidate_bound_plus_noise(self, driving_ds):
        env = DrivingEnv()
        cap = env.spec.speed + 4.0 * env.spec.expert_noise * np.sqrt(2.0)
        assert np.linalg.norm(driving_ds.U, axis=1).max() <= cap

    def test_same_seed_reproduces(self):
        a = generate(DrivingEnv(), demos=2, seed=9)
        b = generate(DrivingEnv(), demos=2, seed=9)
        assert a.fingerprint() == b.fingerprint()
        assert np.array_equal(a.X, b.X)

    def test_different_seed_differs(self):
        a = generate(DrivingEnv(), demos=2, seed=1)
        b = generate(DrivingEnv(), demos=2, seed=2)
        assert a.fingerprint() != b.fingerprint()

    def test_zero_demos_rejected(self):
        with pytest.raises(ConfigError):
            generate(DrivingEnv(), demos=0, seed=0)

    def test_quadrotor_resamples_failed_demos(self):
        ds = generate(QuadrotorEnv(), demos=8, seed=7)
        prov = ds.provenance
        assert prov["demos"] == 8
        assert prov["failed_attempts"] >= 0
        # every accepted demo contributed at least a handful of samples
        assert len(ds) >= 8 * 10

    def test_expert_cap_raises(self):
        class HopelessEnv(QuadrotorEnv):
            def demo(self, rng):
                from stablebc.envs.base import DemoFailure

                raise DemoFailure("never succeeds")

        with pytest.raises(ConvergenceError) as err:
            generate(HopelessEnv(), demos=3, seed=0)
        assert "30 attempts" in str(err.value)

    def test_pointmass_one_sample_per_demo(self):
        ds = generate(PointMassEnv(), demos=7, seed=3)
        assert len(ds) == 7
        assert ds.d == 441


class TestDatasetType:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            Dataset("driving", 2, 2, 2, np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((3, 2)))

    def test_fingerprint_sensitive_to_values(self):
        a = Dataset("driving", 2, 2, 2, np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))
        b = Dataset("driving", 2, 2, 2, np.ones((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))
        assert a.fingerprint() != b.fingerprint()

    def test_fingerprint_ignores_provenance(self):
        a = Dataset("driving", 2, 2, 2, np.zeros((1, 2)), np.zeros((1, 2)),
                    np.zeros((1, 2)), provenance={"seed": 1})
        b = Dataset("driving", 2, 2, 2, np.zeros((1, 2)), np.zeros((1, 2)),
                    np.zeros((1, 2)), provenance={"seed": 2})
        assert a.fingerprint() == b.fingerprint()


class TestRoundTrip:
    def test_bit_exact_roundtrip(self, driving_ds, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(driving_ds, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.X, driving_ds.X)
        assert np.array_equal(loaded.Y, driving_ds.Y)
        assert np.array_equal(loaded.U, driving_ds.U)
        assert loaded.fingerprint() == driving_ds.fingerprint()
        assert loaded.provenance == driving_ds.provenance

    def test_file_bytes_deterministic(self, driving_ds, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(driving_ds, p1)
        save_dataset(driving_ds, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_first_line_then_one_sample_per_line(self, driving_ds, tmp_path):
        import json

        path = tmp_path / "d.jsonl"
        save_dataset(driving_ds, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + len(driving_ds)
        header = json.loads(lines[0])
        assert header["format"] == "stablebc-dataset-v1"
        assert header["count"] == len(driving_ds)


class TestLoadErrors:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.jsonl"
        path.write_text("")
        with pytest.raises(ConfigError, match="empty"):
            load_dataset(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "h.jsonl"
        path.write_text('{"format": "something-else"}\n')
        with pytest.raises(ConfigError, match="line 1"):
            load_dataset(path)

    def test_malformed_sample_names_line(self, driving_ds, tmp_path):
        path = tmp_path / "m.jsonl"
        save_dataset(driving_ds, path)
        lines = path.read_text().splitlines()
        lines[3] = "{broken json"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigError, match="line 4"):
            load_dataset(path)

    def test_wrong_sample_width_names_line(self, driving_ds, tmp_path):
        path = tmp_path / "w.jsonl"
        save_dataset(driving_ds, path)
        lines = path.read_text().splitlines()
        lines[2] = '{"x": [1.0], "y": [0.0, 0.0], "u": [0.0, 0.0]}'
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigError, match="line 3"):
            load_dataset(path)

    def test_count_mismatch(self, driving_ds, tmp_path):
        path = tmp_path / "c.jsonl"
        save_dataset(driving_ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ConfigError, match="declares"):
            load_dataset(path)


class TestEncodeDataset:
    def test_latent_replacement(self):
        ds = generate(PointMassEnv(), demos=6, seed=5)
        ae = train_autoencoder(ds.Y, latent_dim=10, epochs=20, seed=0)
        enc = encode_dataset(ds, ae)
        assert enc.d == 10
        assert enc.Y.shape == (6, 10)
        assert np.array_equal(enc.X, ds.X)
        assert np.array_equal(enc.U, ds.U)
        assert enc.provenance["encoded"] is True
        assert enc.fingerprint() != ds.fingerprint()
