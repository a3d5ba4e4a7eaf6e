"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.record_acceptance``)
that is repeated in the pytest terminal summary.
"""
import time

import numpy as np
import pytest

from irwri_kit.acquisition import AcquisitionGeometry, line_geometry, synthesize_data
from irwri_kit.experiments import (SweepCell, desk_case, observed_data, signature_trial,
                                   starting_model, sweep)
from irwri_kit.grid_model import Grid2D, smooth_model, velocity_to_squared_slowness
from irwri_kit.helmholtz import assemble, greens_function_oracle
from irwri_kit.irwri import (InversionConfig, frequency_schedule, init_state, iterate_batch,
                             run_inversion)
from irwri_kit.linsolve import dense_lstsq_oracle
from irwri_kit.metrics import model_re
from irwri_kit.model_update import (ModelTerm, RegularizerConfig, model_gradient,
                                    model_objective)
from irwri_kit.source_estimation import (default_lambda, estimate_joint, estimate_separate,
                                         offdiagonal_ratio)

from conftest import random_velocity, record_acceptance

FREQS = (3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
SEEDS = tuple(range(10))

# Signature desk case: 80 x 40 nodes at 25 m, sources three rows below the surface.
SIGNATURE_CASE = dict(model="marmousi", nx=80, nz=40, h=25.0, npml=10, n_receivers=60,
                      water_rows=6, seed=0)
ACCURATE_RADIUS, ROUGH_RADIUS = 100.0, 400.0

# Inversion desk case: 90 x 30 nodes, sources one node below the free surface.
INVERSION_CASE = dict(model="marmousi", nx=90, nz=30, h=25.0, npml=10, n_sources=8,
                      n_receivers=30, source_depth=0, water_rows=6, seed=0)
INVERSION_PATHS = [(3.0, 6.0), (3.0, 7.0), (3.0, 8.0)]


def check(number, title, passed, detail):
    record_acceptance(number, title, bool(passed), detail)
    assert passed, detail


def test_c01_forward_solver_matches_greens_function():
    t0 = time.perf_counter()
    n, h, c, f, npml = 200, 10.0, 1500.0, 5.0, 20
    g = Grid2D(n, n, h, h, npml=npml)
    m = velocity_to_squared_slowness(np.full((n, n), c), g)
    wavelength = c / f
    src = (n // 2, n // 2)
    iz, ix = np.mgrid[0:n, 0:n]
    dist = np.hypot(ix - src[0], iz - src[1]) * h
    edge = np.minimum.reduce([ix, iz, n - 1 - ix, n - 1 - iz]) * h
    keep = (dist >= 2 * wavelength) & (edge >= wavelength)
    rx, rz = ix[keep], iz[keep]
    geom = AcquisitionGeometry(g, [g.node_index(*src)], g.node_index(rx, rz))
    omega = 2 * np.pi * f
    d = synthesize_data(m, geom, [-1 / h**2], omega, pml_velocity=c).values[:, 0]
    oracle = np.array([greens_function_oracle(omega, c, (src[0] * h, src[1] * h), (x * h, z * h))
                       for x, z in zip(rx, rz)])
    ratio = d / oracle
    phase = np.abs(np.angle(ratio)).max() / (2 * np.pi)
    amp = np.abs(np.abs(ratio) - 1).max()
    elapsed = time.perf_counter() - t0
    check(1, "forward accuracy", phase < 0.02 and amp < 0.05 and elapsed < 10,
          f"{keep.sum()} receivers, max phase error {100 * phase:.2f}% of a cycle, "
          f"max amplitude error {100 * amp:.2f}%, {elapsed:.1f} s")


def test_c02_exact_model_signature_recovery():
    t0 = time.perf_counter()
    case = desk_case(nx=80, nz=40, n_sources=8, n_receivers=20, source_depth=3)
    trial = signature_trial(case, case.m_true, (3.0, 5.5, 8.0), None, seeds=(0,))
    worst = {k: float(v.max()) for k, v in trial.re.items()}
    elapsed = time.perf_counter() - t0
    check(2, "exact-model recovery", max(worst.values()) < 1e-6 and elapsed < 5,
          ", ".join(f"{k} max RE {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f} s")


def test_c03_variable_projection_equals_stacked_least_squares():
    g = Grid2D(8, 6, 25.0, 25.0, npml=2, free_surface_top=True)
    assert g.n <= 200
    m = velocity_to_squared_slowness(random_velocity(6, 8, seed=7), g)
    geom = line_geometry(g, 3, 5, source_depth=1, margin=1)
    s = np.array([1.0 + 0.5j, -0.3 + 1j, 0.8 - 0.2j])
    D = synthesize_data(m, geom, s, 2 * np.pi * 4.0).values
    A = assemble(smooth_model(m, 60.0), 2 * np.pi * 4.0)
    lam = 1e2 * default_lambda(A, geom)
    Ad, P, Phi = A.matrix.toarray(), geom.p.toarray(), geom.phi.toarray()

    def stacked(d, phi):
        K = np.vstack([np.hstack([P, np.zeros((P.shape[0], phi.shape[1]))]),
                       np.sqrt(lam) * np.hstack([Ad, -phi])])
        x = dense_lstsq_oracle(K, np.concatenate([d, np.zeros(g.n)]))
        return x[:g.n], x[g.n:]

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    Us, Ss = estimate_separate(A, geom, D, lam)
    Uj, Sj = estimate_joint(A, geom, D, lam)
    errs = []
    for i in range(geom.n_sources):
        u, si = stacked(D[:, i], Phi[:, [i]])
        errs += [rel(Us[:, i], u), rel(Ss.signatures[i:i + 1], si)]
        u, sj = stacked(D[:, i], Phi)
        errs += [rel(Uj[:, i], u), rel(Sj.S[:, i], sj)]
    worst = max(errs)
    check(3, "variable projection = stacked least squares", worst < 1e-8,
          f"N = {g.n}, worst relative difference {worst:.1e}")


def test_c04_projector_algebra():
    g = Grid2D(12, 10, 20.0, 20.0, npml=4, free_surface_top=True)
    geom = line_geometry(g, 4, 6, source_depth=1)
    ok = True
    for src in (None, 0, 1, 2, 3):
        Q = geom.q(src).toarray()
        Phi = geom.phi.toarray() if src is None else geom.phi.toarray()[:, [src]]
        ok &= np.array_equal(Q @ Q, Q) and np.array_equal(Q.T, Q) and not np.any(Q @ Phi)
    m = velocity_to_squared_slowness(random_velocity(10, 12, seed=4), g)
    g1 = line_geometry(g, 1, 6, source_depth=2)
    D = synthesize_data(m, g1, [1.0 + 0.5j], 2 * np.pi * 4.0).values
    A = assemble(smooth_model(m, 50.0), 2 * np.pi * 4.0)
    lam = default_lambda(A, g1)
    Uj, Sj = estimate_joint(A, g1, D, lam)
    Us, Ss = estimate_separate(A, g1, D, lam)
    diff = max(np.linalg.norm(Uj - Us) / np.linalg.norm(Us),
               abs(Sj.S[0, 0] - Ss.S[0, 0]) / abs(Ss.S[0, 0]))
    check(4, "projector algebra", ok and diff < 1e-12,
          f"Q^2 = Q, Q^T = Q, Q Phi = 0 exact: {ok}; single-source joint vs separate {diff:.1e}")


def test_c05_factorization_count_law():
    case = desk_case(nx=40, nz=20, n_sources=8, n_receivers=20, source_depth=2)
    f = 4.0
    data = observed_data(case, [f])
    m0 = starting_model(case, radius=200.0)
    expected = {"separate": 8, "alg1": 1, "alg2": 2, "known_source": 1}
    seen = {}
    for alg in expected:
        cfg = InversionConfig(alg, (((f,),),), max_iterations=3, min_relative_drop=0.0)
        res = run_inversion(cfg, data, m0, case.geometry, {f: case.signatures.at(f)},
                            pml_velocity=case.pml_velocity)
        seen[alg] = sorted({r.factor_count for r in res.history})
    check(5, "factorization counts", all(seen[a] == [n] for a, n in expected.items()),
          ", ".join(f"{a} {seen[a]}" for a in expected))


@pytest.fixture(scope="module")
def inversion_runs():
    """The three end-to-end inversions shared by criteria 6 and 11."""
    case = desk_case(**INVERSION_CASE)
    m0 = starting_model(case, radius=ROUGH_RADIUS)
    sched = tuple(tuple(tuple(b) for b in p)
                  for p in frequency_schedule(INVERSION_PATHS, 0.5, 2, 1))
    freqs = sorted({f for p in sched for b in p for f in b})
    data = observed_data(case, freqs)
    truth = {f: case.signatures.at(f) for f in freqs}
    runs = {}
    t0 = time.perf_counter()
    for alg in ("known_source", "alg2", "alg1"):
        cfg = InversionConfig(alg, sched, max_iterations=15, lambda_scale=0.1,
                              regularizer=RegularizerConfig(gamma_scale=0.1))
        runs[alg] = run_inversion(cfg, data, m0, case.geometry, truth, case.m_true,
                                  case.pml_velocity)
    return case, m0, runs, time.perf_counter() - t0


def test_c06_offdiagonal_dominance(inversion_runs):
    case, m0, runs, _ = inversion_runs
    f = INVERSION_PATHS[0][0]
    D = observed_data(case, [f])[f]

    def ratio(m):
        A = assemble(m, 2 * np.pi * f, pml_velocity=case.pml_velocity)
        return offdiagonal_ratio(estimate_joint(A, case.geometry, D,
                                                default_lambda(A, case.geometry))[1])

    r0, r1 = ratio(m0), ratio(runs["alg2"].model)
    check(6, "off-diagonal dominance", r0 < 0.05 and r1 < 1e-3,
          f"{f:g} Hz: rough start {r0:.2e} (< 5e-2), final alg2 model {r1:.2e} (< 1e-3)")


def test_c07_joint_at_least_as_good_as_separate_on_rough_start():
    case = desk_case(**SIGNATURE_CASE, n_sources=8, source_depth=3)
    med = {}
    for label, radius in (("accurate", ACCURATE_RADIUS), ("rough", ROUGH_RADIUS)):
        trial = signature_trial(case, starting_model(case, radius=radius), FREQS, None, SEEDS,
                                methods=("separate", "joint"))
        med[label] = {k: float(np.median(v.mean(axis=1))) for k, v in trial.re.items()}
    acc, rough = med["accurate"], med["rough"]
    agree = abs(acc["joint"] - acc["separate"]) / acc["separate"]
    check(7, "joint >= separate under rough models",
          rough["joint"] <= rough["separate"] and agree < 0.1,
          f"rough: joint {rough['joint']:.4f} vs separate {rough['separate']:.4f}; "
          f"accurate: joint {acc['joint']:.4f} vs separate {acc['separate']:.4f} "
          f"({100 * agree:.1f}% apart)")


def test_c08_noise_sensitivity_surface():
    t0 = time.perf_counter()
    radii, snrs = (100.0, 400.0, 1200.0), (40.0, 20.0, 10.0, 5.0)
    rows = sweep({k: v for k, v in SIGNATURE_CASE.items()}, SweepCell(source_depth=3, n_sources=8),
                 "radius", radii, "snr", snrs, FREQS, SEEDS)
    elapsed = time.perf_counter() - t0
    re = {(r, s, k): v for r, s, k, v, _ in rows}
    conv_snr = max(max(re[(r, s, "conventional")] for s in snrs) /
                   min(re[(r, s, "conventional")] for s in snrs) for r in radii)
    # across-radii spread at the cleanest data, where model error dominates
    conv_radius = max(re[(r, snrs[0], "conventional")] for r in radii) / \
        min(re[(r, snrs[0], "conventional")] for r in radii)
    monotone = all(np.all(np.diff([re[(r, s, k)] for s in snrs]) > 0)
                   for r in radii for k in ("separate", "joint"))
    check(8, "noise sensitivity surface",
          conv_snr < 2 and conv_radius > 5 and monotone and elapsed < 300,
          f"conventional max spread over SNR {conv_snr:.2f}x, over radii at {snrs[0]:g} dB "
          f"{conv_radius:.2f}x; separate/joint monotone in SNR: {monotone}; {elapsed:.0f} s")


def test_c09_source_count_instability():
    base = {k: v for k, v in SIGNATURE_CASE.items() if k != "n_receivers"}
    rows = sweep({**base, "n_receivers": 20}, SweepCell(radius=ROUGH_RADIUS, source_depth=3),
                 "n_sources", (10, 30), frequencies=FREQS, seeds=SEEDS,
                 methods=("separate", "joint"))
    re = {(n, k): v for n, _, k, v, _ in rows}
    joint = re[(30, "joint")] / re[(10, "joint")]
    sep = re[(30, "separate")] / re[(10, "separate")]
    sep_change = max(sep, 1 / sep)
    check(9, "source-count instability", joint >= 3 and sep_change < 1.5,
          f"M = 20: joint RE x{joint:.1f} from 10 to 30 sources, separate x{sep:.2f}")


def test_c10_fixed_point_and_dual_ascent():
    case = desk_case(nx=40, nz=20, n_sources=4, n_receivers=12, source_depth=2)
    f = 4.0
    D = observed_data(case, [f])[f]
    S = case.signatures.at(f)
    A = assemble(case.m_true, 2 * np.pi * f, pml_velocity=case.pml_velocity)
    lam = default_lambda(A, case.geometry)
    worst_data = worst_pde = 0.0
    for alg in ("known_source", "separate", "alg1", "alg2"):
        cfg = InversionConfig(alg, (((f,),),), regularizer=RegularizerConfig(gamma_tik=0.0))
        state = init_state(case.m_true, case.geometry, case.pml_velocity)
        for _ in range(5):
            state, diag = iterate_batch(state, {f: A.with_model(state.m)}, {f: D}, {f: lam}, cfg,
                                        {f: S})
            worst_data = max(worst_data, diag["data_misfit"] / np.linalg.norm(D))
            worst_pde = max(worst_pde, diag["pde_misfit"] / np.linalg.norm(S))
    cfg = InversionConfig("alg2", (((f,),),))
    m0 = starting_model(case, radius=200.0)
    state = init_state(m0, case.geometry, case.pml_velocity)
    sums = [np.zeros_like(state.dual(f).b_hat), np.zeros_like(state.dual(f).d_hat)]
    exact = True
    for _ in range(5):
        state, _ = iterate_batch(state, {f: A.with_model(state.m)}, {f: D}, {f: lam}, cfg)
        sums = [sums[0] + state.source_residuals[f], sums[1] + state.data_residuals[f]]
        exact &= np.array_equal(state.dual(f).b_hat, sums[0]) and \
            np.array_equal(state.dual(f).d_hat, sums[1])
    check(10, "fixed point and dual ascent", worst_data < 1e-6 and worst_pde < 1e-6 and exact,
          f"at m_true: data misfit {worst_data:.1e}, PDE misfit {worst_pde:.1e} of scale; "
          f"duals equal running residual sums bit for bit: {exact}")


def test_c11_end_to_end_inversion_parity(inversion_runs):
    case, m0, runs, elapsed = inversion_runs
    re0 = model_re(case.m_true, m0)
    re = {k: model_re(case.m_true, r.model) for k, r in runs.items()}
    parity = abs(re["alg2"] - re["known_source"]) / re["known_source"]
    ok = (parity <= 0.2 and re0 / re["alg2"] >= 2 and re0 / re["known_source"] >= 2
          and re["alg1"] < re0 and elapsed < 900)
    check(11, "end-to-end inversion parity", ok,
          f"initial RE {re0:.4f}; known_source {re['known_source']:.4f}, alg2 {re['alg2']:.4f} "
          f"({100 * parity:.1f}% apart), alg1 {re['alg1']:.4f}; {elapsed:.0f} s")


def test_c12_model_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        g = Grid2D(10, 10, 20.0, 20.0)
        m = velocity_to_squared_slowness(rng.uniform(1500, 3500, (10, 10)), g)
        geom = line_geometry(g, 2, 4, source_depth=1)
        A = assemble(m, 2 * np.pi * 5.0)
        U = rng.standard_normal((g.n, 2)) + 1j * rng.standard_normal((g.n, 2))
        B = rng.standard_normal((g.n, 2)) + 1j * rng.standard_normal((g.n, 2))
        terms = [ModelTerm(A, U, rng.standard_normal(2) + 1j, B, 0.5)]
        gamma = 1e-3 * rng.uniform()
        x = m.values * (1 + 0.2 * rng.uniform(-1, 1, g.n))
        analytic = model_gradient(x, geom, terms, gamma)
        numeric = np.empty_like(x)
        for k in range(g.n):
            e = np.zeros_like(x)
            e[k] = 1e-3 * x[k]
            numeric[k] = (model_objective(x + e, geom, terms, gamma) -
                          model_objective(x - e, geom, terms, gamma)) / (2 * e[k])
        worst = max(worst, np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic))
    check(12, "model-subproblem gradient", worst < 1e-5,
          f"5 random 10x10 instances, worst relative difference {worst:.1e}")
