"""Acceptance criteria at their stated budgets.

Each test prints one ``criterion N PASS|FAIL`` line; the lines are repeated
in the terminal summary. Runtime is dominated by the rate experiments
(several minutes on one core). Run alone with

    python3 -m pytest tests/test_acceptance.py -v
"""

import dataclasses
import subprocess
import sys
from pathlib import Path

import pytest

from sde_lab import harness

from conftest import ACCEPTANCE_LINES


def _report(number, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


_cache = {}


def _run(name, out_dir, **overrides):
    key = (name, tuple(sorted(overrides.items())))
    if key not in _cache:
        cfg = dataclasses.replace(harness.preset(name), **overrides)
        _cache[key] = harness.run(cfg, out_dir=out_dir)
    return _cache[key]


def _slope(result, scheme):
    (fit,) = [f for f in result.summary["fits"] if f["scheme"] == scheme]
    return fit["slope"], fit


def _fmt(fit):
    extra = f", excluded levels {fit['excluded']}" if fit.get("excluded") else ""
    return f"{fit['slope']:.3f} (stderr {fit['slope_stderr']:.3f}, r^2 {fit['r_squared']:.3f}{extra})"


def test_criterion_1_smooth_milstein_order(out_dir):
    slope, fit = _slope(_run("smooth-rate", out_dir), "milstein")
    ok = -1.10 <= slope <= -0.85
    assert _report(1, ok, f"smooth model Milstein slope {_fmt(fit)} in [-1.10, -0.85]")


def test_criterion_2_main_rate_and_euler(out_dir):
    res = _run("main-rate-a05", out_dir, scheme_kinds=("milstein", "euler"))
    mil, fit_m = _slope(res, "milstein")
    eul, fit_e = _slope(res, "euler")
    ok = -0.90 <= mil <= -0.62 and -0.62 <= eul <= -0.40 and mil < eul - 0.1
    detail = (f"alpha=0.5 Milstein slope {_fmt(fit_m)} in [-0.90, -0.62]; Euler slope {_fmt(fit_e)} "
              f"in [-0.62, -0.40]; separation {eul - mil:.3f} > 0.1")
    assert _report(2, ok, detail)


def test_criterion_3_rate_trend_in_alpha(out_dir):
    slopes = {0.5: _slope(_run("main-rate-a05", out_dir, scheme_kinds=("milstein", "euler")), "milstein")[0]}
    for alpha, name in ((0.25, "main-rate-a025"), (0.75, "main-rate-a075")):
        slopes[alpha] = _slope(_run(name, out_dir), "milstein")[0]
    within = {a: abs(s + (1 + a) / 2) <= 0.15 for a, s in slopes.items()}
    ordered = slopes[0.75] < slopes[0.5] < slopes[0.25]
    ok = ordered and all(within.values())
    detail = ", ".join(f"alpha={a}: {slopes[a]:.3f} (target {-(1 + a) / 2:.3f} +- 0.15)" for a in (0.25, 0.5, 0.75))
    assert _report(3, ok, f"{detail}; ordered={ordered}")


def test_criterion_4_moment_scaling(out_dir):
    fit = _run("moments", out_dir).summary["fit"]
    ok = 0.45 <= fit["slope"] <= 0.55
    assert _report(4, ok, f"m=4 increment-norm slope {_fmt(fit)} in [0.45, 0.55], M=1e5")


def test_criterion_5_local_expansion_residual(out_dir):
    slope, fit = _slope(_run("residual-smooth", out_dir), "milstein")
    ok = slope <= -0.9
    assert _report(5, ok, f"L^4 residual slope {_fmt(fit)} <= -0.9 (f = sigma^11)")


def test_criterion_6_good_event_decay(out_dir):
    res = _run("omega-decay", out_dir)
    fit = res.summary["fit"]
    ok = fit is not None and fit["slope"] < 0 and fit["r_squared"] >= 0.9 and len(fit["n"]) == 5
    detail = (f"log P(not good) vs n over n={fit['n']}: slope {fit['slope']:.4f}, r^2 {fit['r_squared']:.3f}, "
              f"kappa {res.summary['kappa']}" if fit else "no fit")
    assert _report(6, ok, detail)


def test_criterion_7_girsanov_mean(out_dir):
    s = _run("girsanov-mean", out_dir).summary
    ok = abs(s["mean"] - 1.0) <= 3 * s["std_error"]
    assert _report(7, ok, f"E[rho] = {s['mean']:.5f} +- {s['std_error']:.5f} (z = {s['z_score']:.2f}), M=1e5")


def test_criterion_8_additive_functional_rate(out_dir):
    slope, fit = _slope(_run("functional-rate", out_dir), "milstein")
    ok = slope <= -0.6
    assert _report(8, ok, f"L^2 additive functional slope {_fmt(fit)} <= -0.6")


PROPERTY_TESTS = [
    "test_refinement_is_bitwise_pairwise",
    "test_iterated_integral_symmetry_identity",
    "test_scalar_iterated_integral_identity",
    "test_milstein_constant_sigma_is_euler",
    "test_constant_sigma_milstein_is_euler_bitwise",
    "test_brownian_motion_path",
    "test_coupling_telescoping",
    "test_truncation_equivalence_on_good_event",
    "test_additive_integral_is_linear",
    "test_additive_functional_constant_f_is_zero",
    "test_residual_zero_at_coarse_points",
    "test_girsanov_zero_drift_is_one",
    "test_cutoff_plateau_and_zero_are_exact",
    "test_fit_exact_power_law",
    "test_fit_reproduces_any_exponent",
    "test_strong_error_permutation_invariant",
    "test_rerun_is_byte_identical",
    "test_thread_count_never_changes_output",
]


def test_criterion_9_property_suites():
    here = Path(__file__).parent
    files = [str(here / f) for f in ("test_coefficients.py", "test_brownian.py", "test_schemes.py",
                                     "test_functionals.py", "test_analysis.py", "test_harness.py")]
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", " or ".join(PROPERTY_TESTS), *files],
        capture_output=True, text=True, cwd=here.parent,
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    assert _report(9, proc.returncode == 0, f"property suites: {tail}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
