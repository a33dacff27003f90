import math
from dataclasses import replace

import numpy as np
import pytest

from crowdbudget import FixedP, SpammerHammer, ValidationError
from crowdbudget.montecarlo import (
    CSV_HEADER,
    ExperimentConfig,
    SweepResult,
    SweepRow,
    exponential_decay_check,
    run_trial,
    sweep,
)

ALL = ("iterative", "majority", "em", "spectral", "oracle")


def cfg(**kw):
    base = dict(m=200, l_values=(5,), model=SpammerHammer(0.3), algorithms=ALL, k_max=10, trials=4, base_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_perfect_crowd_all_zero():
    errs = run_trial(cfg(model=FixedP(1.0)), 5, 5, 0, 0)
    assert errs == {a: 0.0 for a in ALL}


def test_no_signal_near_half():
    res = sweep(cfg(model=FixedP(0.5), trials=40, m=500))
    for a in ALL:
        row = res.get(5, a)
        assert abs(row.mean_error - 0.5) <= 4 * row.std_error + 1e-9


def test_run_trial_deterministic():
    c = cfg()
    assert run_trial(c, 5, 5, 3, 2) == run_trial(c, 5, 5, 3, 2)
    assert run_trial(c, 5, 5, 3, 2) != run_trial(c, 5, 5, 3, 1)


def test_algorithm_streams_independent():
    a = run_trial(cfg(), 5, 5, 0, 0)
    b = run_trial(cfg(algorithms=("iterative",)), 5, 5, 0, 0)
    assert a["iterative"] == b["iterative"]


def test_config_validation():
    with pytest.raises(ValidationError):
        cfg(trials=0)
    with pytest.raises(ValidationError):
        cfg(l_values=())
    with pytest.raises(ValidationError):
        cfg(algorithms=("nope",))
    with pytest.raises(ValidationError):
        cfg(r_policy="ratio")
    c = cfg(r_policy="ratio", r_value=50 / 28, l_values=(28, 14))
    assert c.cells() == [(28, 50), (14, 25)]
    assert cfg(r_policy="fixed", r_value=10).r_for(3) == 10


def test_csv_byte_identical(tmp_path):
    c = cfg(l_values=(3, 5), output=str(tmp_path / "a.csv"))
    sweep(c)
    sweep(replace(c, output=str(tmp_path / "b.csv")))
    sweep(replace(c, output=str(tmp_path / "c.csv"), n_jobs=2))
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()
    assert a.decode().splitlines()[0] == ",".join(CSV_HEADER)


def test_single_cell_equals_trial_aggregate():
    c = cfg(trials=6)
    res = sweep(c)
    errs = np.array([[run_trial(c, 5, 5, 0, t)[a] for a in ALL] for t in range(6)])
    for j, a in enumerate(ALL):
        row = res.get(5, a)
        assert row.mean_error == pytest.approx(errs[:, j].mean(), abs=0)
        assert row.std_error == pytest.approx(errs[:, j].std(ddof=1) / math.sqrt(6))
        assert 0 <= row.mean_error <= 1


def test_standard_error_shrinks_with_trials():
    # four times the trials should halve the standard error
    c = cfg(algorithms=("majority",), m=100, model=SpammerHammer(0.2), l_values=(3,))
    se = [sweep(replace(c, trials=t)).get(3, "majority").std_error for t in (100, 400)]
    assert 0.8 <= (se[0] / se[1]) / 2 <= 1.2


def test_failed_cells_recorded_and_sweep_continues():
    res = sweep(cfg(m=10, l_values=(3, 2), r_policy="fixed", r_value=4, algorithms=("majority",)))
    assert [f["l"] for f in res.failures] == [3]
    assert [row.l for row in res.rows] == [2]


def test_error_ordering_at_l15():
    res = sweep(cfg(m=1000, l_values=(15,), algorithms=("oracle", "iterative", "majority"), k_max=20, trials=50))
    o, i, m = (res.get(15, a) for a in ("oracle", "iterative", "majority"))
    assert o.mean_error <= i.mean_error <= m.mean_error
    assert m.mean_error - i.mean_error >= 2 * math.hypot(m.std_error, i.std_error)


def _synthetic(errors, algorithm="iterative", q=0.3):
    c = cfg(l_values=tuple(errors), algorithms=(algorithm,))
    rows = [SweepRow(l, l, 200, algorithm, e, 0.0, 4) for l, e in errors.items()]
    return SweepResult(c, rows)


def test_decay_constant_errors_zero_slope():
    fit = exponential_decay_check(_synthetic({7: 0.1, 9: 0.1, 11: 0.1, 13: 0.1}), 0.3)
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_decay_recovers_exponent_and_flags_zero_cells():
    errs = {l: 0.5 * math.exp(-0.2 * l) for l in (7, 9, 11, 13, 15)}
    errs[20] = 0.0
    errs[2] = 0.4  # below the transition for q = 0.3
    fit = exponential_decay_check(_synthetic(errs), 0.3)
    assert fit.slope == pytest.approx(-0.2)
    assert fit.excluded_zero == (20,) and fit.excluded_below_threshold == (2,)
    assert all(t < e < 0 for t, e in zip(fit.theory_slope, fit.theory_envelope))


def test_decay_needs_four_points():
    with pytest.raises(ValidationError):
        exponential_decay_check(_synthetic({7: 0.1, 9: 0.05}), 0.3)
