import os

import pytest

from milcount import cli


@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    """Full synthetic pipeline shared by the acceptance tests.

    synthgen (80 grid-safe slides) -> blob featurize -> stratified 5-fold
    splits -> 5-fold CV of both models over seeds 1-3, all through the CLI.
    """
    root = tmp_path_factory.mktemp("e2e")
    data = os.path.join(root, "data")
    manifest_path = os.path.join(root, "bags", "manifest.json")
    splits = os.path.join(root, "splits")
    mlp_out = os.path.join(root, "mlp_cv")
    mil_out = os.path.join(root, "mil_cv")

    assert cli.main(["synthgen", "--n", "80", "--grid-safe", "--out", data]) == 0
    ann = os.path.join(data, "annotations.json")
    os.makedirs(os.path.dirname(manifest_path))
    assert (
        cli.main(
            ["featurize", "--mode", "blob", "--in", ann, "--images", data, "--out", manifest_path]
        )
        == 0
    )
    assert cli.main(["split", "--in", manifest_path, "--k", "5", "--seed", "0", "--out", splits]) == 0
    assert (
        cli.main(
            ["cv", "--model", "mlp", "--manifest", manifest_path, "--splits", splits,
             "--seeds", "1,2,3", "--out", mlp_out]
        )
        == 0
    )
    assert (
        cli.main(
            ["cv", "--model", "mil", "--manifest", manifest_path, "--splits", splits,
             "--seeds", "1,2,3", "--out", mil_out]
        )
        == 0
    )
    return {
        "root": str(root),
        "data": data,
        "annotations": ann,
        "manifest": manifest_path,
        "splits": splits,
        "mlp_out": mlp_out,
        "mil_out": mil_out,
    }
