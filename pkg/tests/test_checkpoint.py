import numpy as np
import pytest

from latentpoison.attack import Perturbation
from latentpoison.checkpoint import (
    CheckpointHashError,
    CheckpointKindError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from latentpoison.models import ClassifierParams, VaeParams


@pytest.fixture
def vae():
    return VaeParams.initialize(16, 4, np.random.default_rng(0), hidden=(8, 6))


@pytest.fixture
def classifier():
    return ClassifierParams.initialize(16, np.random.default_rng(1), role="eval", hidden=(8,))


@pytest.fixture
def perturbation():
    return Perturbation(
        np.random.default_rng(2).standard_normal(4), 1, "additive", 0.01, "poisoning"
    )


class TestRoundTrip:
    def test_vae_bitwise(self, tmp_path, vae):
        path = tmp_path / "vae.ckpt"
        save_checkpoint(vae, path, config={"seed": 3})
        loaded, config = load_checkpoint(path, expect_kind="vae")
        assert config == {"seed": 3}
        assert loaded.hidden == vae.hidden
        assert (loaded.latent_dim, loaded.image_dim) == (vae.latent_dim, vae.image_dim)
        for a, b in zip(loaded.parameters(), vae.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_classifier_bitwise(self, tmp_path, classifier):
        path = tmp_path / "clf.ckpt"
        save_checkpoint(classifier, path)
        loaded, config = load_checkpoint(path, expect_kind="classifier")
        assert config is None
        assert loaded.role == "eval"
        for a, b in zip(loaded.parameters(), classifier.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_perturbation_bitwise(self, tmp_path, perturbation):
        path = tmp_path / "dz.ckpt"
        save_checkpoint(perturbation, path)
        loaded, _ = load_checkpoint(path, expect_kind="perturbation")
        assert np.array_equal(loaded.delta, perturbation.delta)
        assert loaded.norm_order == 1
        assert loaded.family == "additive"
        assert loaded.provenance == "poisoning"
        assert loaded.delta_reverse is None

    def test_perturbation_with_reverse_vector(self, tmp_path):
        pert = Perturbation(
            np.array([1.0, 2.0]), 2, "additive", 0.1, "independent",
            delta_reverse=np.array([-1.0, 0.5]),
        )
        path = tmp_path / "dz.ckpt"
        save_checkpoint(pert, path)
        loaded, _ = load_checkpoint(path)
        assert np.array_equal(loaded.delta_reverse, pert.delta_reverse)

    def test_save_is_deterministic(self, tmp_path, vae):
        save_checkpoint(vae, tmp_path / "a.ckpt", config={"seed": 1})
        save_checkpoint(vae, tmp_path / "b.ckpt", config={"seed": 1})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_trained_vae_inference_identical_after_reload(self, tmp_path, tiny_vae, tiny_data):
        from latentpoison.models import encode

        path = tmp_path / "vae.ckpt"
        save_checkpoint(tiny_vae, path)
        loaded, _ = load_checkpoint(path)
        mu_a, _ = encode(tiny_data.images, tiny_vae)
        mu_b, _ = encode(tiny_data.images, loaded)
        assert np.array_equal(mu_a.data, mu_b.data)


class TestCorruption:
    def test_flipped_payload_byte_detected(self, tmp_path, perturbation):
        path = tmp_path / "dz.ckpt"
        save_checkpoint(perturbation, path)
        blob = bytearray(path.read_bytes())
        blob[-12] ^= 0xFF  # inside the payload, before the 8-byte hash
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointHashError, match="hash"):
            load_checkpoint(path)

    def test_truncated_file_detected(self, tmp_path, classifier):
        path = tmp_path / "clf.ckpt"
        save_checkpoint(classifier, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)

    def test_unsupported_version_detected(self, tmp_path, perturbation):
        path = tmp_path / "dz.ckpt"
        save_checkpoint(perturbation, path)
        blob = bytearray(path.read_bytes())
        blob[3] = ord("2")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError, match="version 2"):
            load_checkpoint(path)

    def test_foreign_file_detected(self, tmp_path):
        path = tmp_path / "not.ckpt"
        path.write_bytes(b"PNG\x89 definitely not a checkpoint")
        with pytest.raises(CheckpointVersionError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_kind_mismatch(self, tmp_path, classifier):
        path = tmp_path / "clf.ckpt"
        save_checkpoint(classifier, path)
        with pytest.raises(CheckpointKindError, match="holds a classifier, expected a vae"):
            load_checkpoint(path, expect_kind="vae")

    def test_unknown_artifact_type_rejected(self, tmp_path):
        with pytest.raises(TypeError, match="cannot checkpoint"):
            save_checkpoint({"weights": 1}, tmp_path / "x.ckpt")
