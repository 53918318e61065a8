import json
import subprocess

import pytest


@pytest.fixture(scope="session")
def tiny_suite(tmp_path_factory):
    """A small generated suite (2 subjects, 48x48) made through the
    reconstruction toolkit's command line - the same interface the trainer
    uses in production."""
    root = tmp_path_factory.mktemp("suite")
    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "n_subjects": 2,
                "height": 48,
                "width": 48,
                "n_sweeps": 5,
                "angular_step": 8.0,
                "ct_phases": 2,
                "ct_angles": 40,
                "cbct_count": 3,
                "basis": "harmonic",
                "recon_iters": 8,
            }
        )
    )
    out = root / "suite"
    proc = subprocess.run(
        ["perfrec", "suite", "--config", str(config), "--seed", "77",
         "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return out
