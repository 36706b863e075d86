import json

import numpy as np
import pytest

from ksdk.deterministic import EvolutionParams, build_baseline, solve
from ksdk.experiments import (
    ExperimentReport,
    band_increments,
    band_limit,
    convolution_variance_probe,
    cosine_background,
    evolve_spde_ensemble,
    run_blowup,
    run_clt,
    run_enhancement_scan,
    run_lln,
    run_negativity,
    run_particle_comparison,
    scaling_schedule,
)
from ksdk.experiments import _probe_steps
from ksdk.noise import sample_increment_batch
from ksdk.spectral import lattice_size


# ---------------------------------------------------------------------------
# Report container


def sample_report():
    return ExperimentReport(
        name="demo",
        config={"M": 4, "eps": 0.1},
        table={"x": [1, 2], "flag": [True, False], "y": [0.5, float("nan")]},
        verdicts={"ok": True, "also_ok": True},
        details={"note": np.float64(1.25), "arr": np.arange(3)},
        seed=42,
    )


def test_report_passed_is_conjunction_of_verdicts():
    rep = sample_report()
    assert rep.passed
    rep.verdicts["also_ok"] = False
    assert not rep.passed


def test_report_json_round_trips_and_is_stable():
    rep = sample_report()
    first, second = rep.to_json(), rep.to_json()
    assert first == second
    payload = json.loads(first)
    assert payload["name"] == "demo"
    assert payload["seed"] == 42
    assert payload["verdicts"] == {"ok": True, "also_ok": True}
    # numpy scalars and arrays come back as plain types, NaN as null
    assert payload["details"]["note"] == 1.25
    assert payload["details"]["arr"] == [0, 1, 2]
    assert payload["table"]["y"][1] is None


def test_report_csv_has_header_and_typed_cells():
    csv = sample_report().table_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "x,flag,y"
    assert lines[1] == "1,true,0.5"
    # NaN cell is left empty
    assert lines[2].startswith("2,false,")
    assert lines[2].endswith(",")


def test_report_write_emits_json_and_csv(tmp_path):
    rep = sample_report()
    paths = rep.write(tmp_path / "out")
    assert [p.name for p in paths] == ["report.json", "table.csv"]
    assert paths[0].read_text() == rep.to_json()
    assert paths[1].read_text() == rep.table_csv()


# ---------------------------------------------------------------------------
# Banded draws


def test_band_limit_clips_to_lattice_and_handles_zero():
    assert band_limit(0.3, 15) == 3
    assert band_limit(0.05, 15) == 15
    assert band_limit(0.0, 15) == 15
    assert band_limit(-1.0, 8) == 8
    # exact reciprocals: modes strictly below 1/delta survive
    assert band_limit(0.25, 15) == 3
    assert band_limit(0.125, 15) == 7


def test_band_increments_embed_centered_block():
    M, band = 9, 3
    inc = band_increments(5, range(4), 2, band, M, 1e-3)
    L = lattice_size(M)
    assert inc.shape == (4, 2, L, L)
    lo, hi = M - band, M + band + 1
    inner = inc[..., lo:hi, lo:hi]
    small = sample_increment_batch(5, range(4), 2, band, 1e-3)
    assert np.array_equal(inner, small)
    outside = inc.copy()
    outside[..., lo:hi, lo:hi] = 0.0
    assert np.all(outside == 0.0)


def test_band_increments_full_band_matches_plain_sampler():
    M = 6
    a = band_increments(1, range(3), 0, M, M, 1e-3)
    b = sample_increment_batch(1, range(3), 0, M, 1e-3)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Fused ensemble


def small_setup(chi=0.0, amplitude=0.2):
    params = EvolutionParams(M=6, dt=1e-3, horizon=0.01, chi=chi)
    rho0 = cosine_background(6, amplitude)
    baseline = build_baseline(rho0, params, need_drift=False, keep_coeffs=True)
    return params, rho0, baseline


def test_eps_zero_row_reproduces_deterministic_run():
    params, rho0, baseline = small_setup(chi=1.1)
    det = solve(rho0, params)
    states, stop, alive = evolve_spde_ensemble(
        rho0.coeffs, params, (0.0, 0.05), (0.2, 0.2), baseline, 3, 2
    )
    assert np.array_equal(states[0, 0], det.stored_fields[-1].coeffs)
    assert np.array_equal(states[0, 1], det.stored_fields[-1].coeffs)
    assert np.all(stop == -1)
    assert np.all(alive)


def test_power_of_two_eps_scaling_is_an_exact_coupling():
    # a uniform start under chi = 0 keeps the baseline modes exactly zero,
    # so quadrupling eps doubles the gap bit for bit (scaling by a power of
    # two commutes with rounding)
    params, rho0, baseline = small_setup(chi=0.0, amplitude=0.0)
    det = solve(rho0, params)
    states, _, _ = evolve_spde_ensemble(
        rho0.coeffs, params, (0.01, 0.04), (0.2, 0.2), baseline, 9, 3
    )
    ref = det.stored_fields[-1].coeffs
    gap_small = states[0] - ref
    gap_large = states[1] - ref
    assert np.array_equal(gap_large, 2.0 * gap_small)


def test_shared_increments_couple_arms_pathwise():
    # same eps in both arms means identical paths, even with drift on
    params, rho0, baseline = small_setup(chi=0.8)
    states, _, _ = evolve_spde_ensemble(
        rho0.coeffs, params, (0.02, 0.02), (0.2, 0.2), baseline, 4, 2
    )
    assert np.array_equal(states[0], states[1])


def test_level_freezes_crossed_paths_and_records_step():
    params, rho0, baseline = small_setup(chi=0.0)
    # absurdly low level: every path crosses at the first step
    states, stop, alive = evolve_spde_ensemble(
        rho0.coeffs, params, (0.05,), (0.2,), baseline, 7, 3, level=0.5
    )
    assert np.all(stop == 1)
    assert not np.any(alive)
    # frozen states keep the crossing value: rerun and compare one step
    one_step, _, _ = evolve_spde_ensemble(
        rho0.coeffs, params, (0.05,), (0.2,), baseline, 7, 3, level=0.5, n_steps=1
    )
    assert np.array_equal(states, one_step)


def test_observer_sees_initial_state_and_every_step():
    params, rho0, baseline = small_setup()
    seen = []
    evolve_spde_ensemble(
        rho0.coeffs, params, (0.01,), (0.2,), baseline, 1, 2,
        observer=lambda s, states, alive: seen.append(s),
    )
    assert seen == list(range(params.n_steps + 1))


# ---------------------------------------------------------------------------
# Helpers


def test_probe_steps_map_and_rejected_times():
    steps = _probe_steps(((0.002, (1, 0)), (0.004, (0, 1))), 1e-3, 10)
    assert steps == {2: [0], 4: [1]}
    with pytest.raises(ValueError, match="not a usable step multiple"):
        _probe_steps(((0.0035, (1, 0)),), 1e-3, 10)
    with pytest.raises(ValueError, match="not a usable step multiple"):
        _probe_steps(((0.02, (1, 0)),), 1e-3, 10)


def test_scaling_schedule_flags_regime():
    good = scaling_schedule((1e-2, 1e-3), (0.3, 0.2), gamma=0.0)
    assert good["regime_ok"]
    assert len(good["noise_size"]) == 2
    # eps shrinking too slowly against delta breaks the first quantity
    bad = scaling_schedule((1e-2, 9e-3), (0.3, 0.01), gamma=0.0)
    assert not bad["regime_ok"]


def test_cosine_background_mass_and_mode():
    f = cosine_background(5, 0.3, wave=(2, 1))
    assert f.coeffs[5, 5] == 1.0
    assert f.coeffs[5 + 2, 5 + 1] == pytest.approx(0.15)
    assert f.coeffs[5 - 2, 5 - 1] == pytest.approx(0.15)


# ---------------------------------------------------------------------------
# Experiment entry points at desk scale


def test_lln_report_structure_and_determinism():
    kw = dict(
        M=6, dt=1e-3, horizon=0.01, chi=0.0, rho0_amplitude=0.0,
        eps_list=(1e-2, 1e-3), n_samples=6, seed=2,
    )
    rep = run_lln(**kw)
    again = run_lln(**kw)
    assert rep.to_json() == again.to_json()
    assert set(rep.verdicts) == {
        "gap_decreasing", "matches_linear_oracle", "coupling_linear_in_sqrt_eps"
    }
    assert rep.verdicts["coupling_linear_in_sqrt_eps"]
    assert rep.details["coupling_defect"] == 0.0
    assert len(rep.table["gap_mean"]) == 2
    assert all(se > 0 for se in rep.table["gap_stderr"])
    assert all(n == 6 for n in rep.table["n_samples"])


def test_lln_oracle_only_offered_for_uniform_linear_runs():
    rep = run_lln(
        M=6, dt=1e-3, horizon=0.01, chi=1.0, rho0_amplitude=0.2,
        eps_list=(1e-2, 1e-3), n_samples=4, seed=2,
    )
    assert "matches_linear_oracle" not in rep.verdicts
    assert "coupling_linear_in_sqrt_eps" not in rep.verdicts


def test_clt_uniform_needed_for_closed_form():
    with pytest.raises(ValueError, match="uniform start"):
        run_clt(M=6, chi=0.0, rho0_amplitude=0.1, n_samples=4)


def test_clt_closed_form_report_at_desk_scale():
    rep = run_clt(
        M=6, dt=1e-3, horizon=0.004, chi=0.0, rho0_amplitude=0.0,
        eps=1e-3, delta=0.3, probes=((0.002, (1, 0)), (0.004, (1, 1))),
        n_samples=500, seed=5,
    )
    assert set(rep.verdicts) == {"matches_oracle_3se"}
    assert rep.verdicts["matches_oracle_3se"]
    # exact references carry no sampling error
    assert all(ref_se is None for ref_se in rep.table["reference_stderr"])


def test_negativity_below_resolution_path_is_reported_not_raised():
    rep = run_negativity(
        M=6, dt=1e-3, horizon=0.005, rho0_amplitude=0.0,
        eps_list=(1e-8, 1e-9), neg_level=0.5, n_samples=4, seed=0,
    )
    assert rep.details["resolution"] == "below MC resolution"
    assert all(k == 0 for k in rep.table["n_flagged"])
    assert "decay_slope_negative" not in rep.verdicts


def test_blowup_precondition_guards_deterministic_run():
    with pytest.raises(ValueError, match="does not stay under"):
        run_blowup(M=6, chi=0.0, rho0_amplitude=0.1, threshold=0.5, n_samples=2)


def test_blowup_desk_scale_report():
    rep = run_blowup(
        M=6, dt=1e-3, horizon=0.01, chi=2.0, rho0_amplitude=0.3,
        eps_list=(1e-2, 1e-3), n_samples=4, seed=1,
    )
    assert "crossing_nonincreasing" in rep.verdicts
    assert rep.details["threshold"] > rep.details["det_sup"]
    assert all(n == 4 for n in rep.table["n_samples"])


def test_enhancement_scan_rejects_unknown_sigma_mode():
    with pytest.raises(ValueError, match="sigma_mode"):
        run_enhancement_scan(M=6, sigma_mode="tilted")


def test_enhancement_scan_skips_fit_below_three_cutoffs():
    rep = run_enhancement_scan(
        M=6, dt=1e-3, horizon=0.005, delta_list=(0.3, 0.2),
        n_samples=3, n_probe_times=2, seed=0,
    )
    assert rep.details["fit"] == "skipped, need at least 3 cutoffs"
    assert rep.verdicts == {}
    # table still carries all four objects per cutoff
    assert len(rep.table["object"]) == 8


def test_particle_comparison_desk_scale():
    rep = run_particle_comparison(
        n_list=(50, 200, 800), M=8, dt=1e-3, horizon=0.002,
        n_repeats=10, seed=4,
    )
    assert "slope_in_band" in rep.verdicts
    assert rep.details["slope"] < 0
    gaps = rep.table["gap_mean"]
    assert gaps[0] > gaps[1] > gaps[2]


def test_variance_probe_matches_single_mode_law_quickly():
    rep = convolution_variance_probe(
        M=6, dt=1e-3, horizon=0.01, delta=0.3, probes=((1, 0),),
        n_samples=400, seed=3,
    )
    lam = (2 * np.pi) ** 2
    target = (1.0 - np.exp(-2 * 0.01 * lam)) / 2.0
    phi = np.exp(1.0 - 1.0 / (1.0 - 0.3**2))
    target *= phi**2
    mom, se = rep.table["second_moment"][0], rep.table["stderr"][0]
    assert abs(mom - target) < 4 * se
