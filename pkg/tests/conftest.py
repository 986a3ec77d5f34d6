import pytest

from dermapipe.featurestore import MASKING_MASKED, MASKING_WHOLE, write_feature_file

from helpers import blob_labels, blob_store, write_manifest


@pytest.fixture(scope="session")
def accept_ws(tmp_path_factory):
    """On-disk datasets shared by the acceptance and experiment tests.

    - e2e: 2000 well-separated blobs (the CV / fraction-sweep dataset).
    - abl: 400 records with a clean masked arm and a whole-image arm whose
      class signal is attenuated and half-drowned in nuisance dimensions.
    - small: 120 records for cheap determinism / CLI runs.
    """
    root = tmp_path_factory.mktemp("accept")
    ws = {"root": root}

    e2e = blob_labels(2000)
    ws["e2e_manifest"] = write_manifest(root / "manifest_e2e.jsonl", e2e)
    store = blob_store(e2e, noise_seed=11, masking=MASKING_MASKED)
    ws["e2e_features"] = root / "feats_e2e.ddxf"
    write_feature_file(store, ws["e2e_features"])

    abl = blob_labels(400)
    ws["abl_manifest"] = write_manifest(root / "manifest_abl.jsonl", abl)
    masked = blob_store(abl, center_seed=3, noise_seed=21, masking=MASKING_MASKED)
    whole = blob_store(abl, center_seed=3, noise_seed=22, signal_gain=0.3,
                       nuisance=4.0, masking=MASKING_WHOLE)
    ws["abl_masked"] = root / "abl_masked.ddxf"
    ws["abl_whole"] = root / "abl_whole.ddxf"
    write_feature_file(masked, ws["abl_masked"])
    write_feature_file(whole, ws["abl_whole"])

    small = blob_labels(120)
    ws["small_manifest"] = write_manifest(root / "manifest_small.jsonl", small)
    ws["small_features"] = root / "feats_small.ddxf"
    write_feature_file(blob_store(small, noise_seed=31), ws["small_features"])

    return ws
