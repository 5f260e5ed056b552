import pandas as pd
import pytest

from structalign.reporting import ABLATION_COLUMNS, ablation_criteria


def _frame(overrides=None):
    base = {
        "framework": (30.0, 5.0, 0.20, 0.22, 0.9, 1.2),
        "crp": (30.5, 3.0, 0.20, 0.21, 0.9, 1.2),
        "cetf": (30.5, 4.5, 0.15, 0.12, 0.5, 0.6),
        "full": (31.5, 2.5, 0.15, 0.10, 0.5, 0.6),
    }
    base.update(overrides or {})
    rows = [(arm, seed, *values) for seed in range(5) for arm, values in base.items()]
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def test_expected_grid_passes_every_criterion():
    assert all(ablation_criteria(_frame()).values())


@pytest.mark.parametrize(
    "overrides,failed",
    [
        ({"full": (30.9, 2.5, 0.15, 0.10, 0.5, 0.6)}, "R@1 full - framework >= 1"),
        ({"cetf": (29.9, 4.5, 0.15, 0.12, 0.5, 0.6)}, "R@1 cetf >= framework"),
        ({"full": (31.5, 5.0, 0.15, 0.10, 0.5, 0.6)}, "BWF full < framework"),
        ({"full": (31.5, 2.5, 0.15, 0.15, 0.5, 0.6)}, "MICD falls and stays > 0.01 on full"),
        ({"full": (31.5, 2.5, 0.15, 0.005, 0.5, 0.6)}, "MICD falls and stays > 0.01 on full"),
        ({"full": (31.5, 2.5, 0.15, 0.10, 0.5, 1.2)}, "gamma full < framework"),
    ],
)
def test_single_violation_is_reported(overrides, failed):
    flags = ablation_criteria(_frame(overrides))
    assert flags[failed] is False
    assert sum(not ok for ok in flags.values()) == 1


def test_micd_tolerates_one_seed():
    frame = _frame()
    full_seed0 = (frame["arm"] == "full") & (frame["seed"] == 0)
    frame.loc[full_seed0, "micd_last"] = 0.3
    assert ablation_criteria(frame)["MICD falls and stays > 0.01 on full"]
    frame.loc[(frame["arm"] == "full") & (frame["seed"] == 1), "micd_last"] = 0.3
    assert not ablation_criteria(frame)["MICD falls and stays > 0.01 on full"]
