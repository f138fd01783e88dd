import json
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]

# Optional external dataset (case-control contingency table).  The repo
# does not ship it; when both files exist the conditional paper-value
# tests run, otherwise they skip with an explicit reason.
CASECONTROL_CSV = REPO_ROOT / "data" / "schlesselman_table76.csv"
CASECONTROL_CONFIG = REPO_ROOT / "data" / "schlesselman_config.json"


def casecontrol_available() -> bool:
    return CASECONTROL_CSV.exists() and CASECONTROL_CONFIG.exists()


requires_casecontrol = pytest.mark.skipif(
    not casecontrol_available(),
    reason=(
        "external case-control dataset not present "
        f"(expected {CASECONTROL_CSV} and {CASECONTROL_CONFIG}; see README)"
    ),
)


@pytest.fixture(scope="session")
def casecontrol_data():
    from lscp.logistic import load_model_data

    with open(CASECONTROL_CONFIG) as fh:
        cfg = json.load(fh)
    return load_model_data(
        CASECONTROL_CSV,
        theta_cols=cfg["theta_cols"],
        gamma_cols=cfg["gamma_cols"],
        successes_col=cfg["successes_col"],
        trials_col=cfg.get("trials_col"),
        a_vector=cfg["a_vector"],
        gamma_tilde=cfg["gamma_tilde"],
        intercept=cfg.get("intercept", False),
    )
