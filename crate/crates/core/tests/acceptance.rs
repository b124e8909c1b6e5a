//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wiener_core::config::{parse_config, reports_json, run};
use wiener_core::operator::{det2_product_identity_check, injectivity_report, inverse_kernel, kappa_s};
use wiener_core::scenarios::{
    integrability_bound, rank_one_exp_moment, sweep_laplace, verify_cameron_martin, verify_harmonic,
    verify_integrability_bound, verify_inverse, verify_surjective, verify_transf, Comparison, Method, RunSetup,
    ScenarioOptions, ScenarioReport, Verdict,
};
use wiener_core::stochastic::{
    exp_q_moment_guard, h_functionals, map_paths, quadratic_form, MomentGuard, TestFunctional,
};
use wiener_core::zoo::remark_pair;
use wiener_core::{assemble, kernel_zoo, KernelSpec, MatrixKernel, TimeGrid};

const SEED: u64 = 20_240_917;

struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn within(&mut self, name: &str, elapsed: Duration, limit: Duration) {
        self.require(elapsed <= limit, format!("{name} {:.1}s ≤ {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }
}

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(1.0, n).unwrap()
}

fn spec(text: &str) -> KernelSpec {
    text.parse().unwrap()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `det₂(I + A) = det(I + A)·e^{−tr A}` straight from nalgebra.
fn det2_oracle(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (DMatrix::identity(n, n) + a).determinant() * (-a.trace()).exp()
}

/// Random symmetric kernel rescaled so that its top Rayleigh quotient is `lambda`.
fn random_eta(rng: &mut ChaCha8Rng, n: usize, d: usize, lambda: f64) -> MatrixKernel {
    let g = grid(n);
    let nd = n * d;
    let raw = DMatrix::from_fn(nd, nd, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sym = (&raw + raw.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone() * g.step());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let top = if hi > 0.0 { hi } else { -lo };
    let sign = if hi > 0.0 { 1.0 } else { -1.0 };
    MatrixKernel::from_values(g, d, sym * (sign * lambda / top), true).unwrap()
}

/// Combined standard error, nominal when the estimate has no valid error bar.
fn std_error(c: &Comparison) -> f64 {
    match (c.lhs.std_error, c.rhs.std_error) {
        (Some(a), Some(b)) => a.hypot(b),
        _ => c.nominal_std_error,
    }
}

fn strict_3_sigma(c: &Comparison) -> (bool, f64) {
    let se = std_error(c);
    (c.difference.abs() <= 3.0 * se, c.difference / se)
}

/// The verdict band `|Δ| ≤ max(0.02·|rhs|, 3σ)`, recomputed from the raw fields.
fn verdict_band(c: &Comparison) -> (bool, f64) {
    let se = std_error(c);
    (c.difference.abs() <= (0.02 * c.rhs.mean.abs()).max(3.0 * se), c.difference / se)
}

fn check_names(o: &mut Outcome, r: &ScenarioReport) {
    for c in &r.checks {
        o.require(c.passed, format!("{}: {} err {:.2e} tol {:.0e}", r.name, c.name, c.error, c.tolerance));
    }
}

// 1 ------------------------------------------------------------------------
fn operator_round_trips(o: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let shapes = [(64, 1), (128, 1), (256, 1), (512, 1), (32, 2), (128, 2), (256, 2), (96, 3), (64, 4), (32, 8)];
    let mut worst_eta: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for k in 0..20 {
        let (n, d) = shapes[k % shapes.len()];
        assert!(n * d <= 512);
        let eta = random_eta(&mut rng, n, d, 0.9);
        let ks = kappa_s(&eta).unwrap();
        let gap = ks.eta().sub(&eta).unwrap().l2_norm() / eta.l2_norm();
        worst_eta = worst_eta.max(gap);
        let hat = inverse_kernel(&ks).unwrap();
        let nd = n * d;
        let id = DMatrix::<f64>::identity(nd, nd);
        let m = ks.values() * ks.grid().step();
        let m_hat = hat.values() * hat.grid().step();
        let res = ((&id + &m) * (&id + &m_hat) - &id).amax();
        worst_inv = worst_inv.max(res);
    }
    o.require(worst_eta <= 1e-8, format!("max ‖η(κ_S(η))−η‖₂/‖η‖₂ = {worst_eta:.1e} ≤ 1e-8"));
    o.require(worst_inv <= 1e-10, format!("max ‖(I+M)(I+M̂)−I‖_max = {worst_inv:.1e} ≤ 1e-10"));
    o.within("runtime", start.elapsed(), Duration::from_secs(10));
}

// 2 ------------------------------------------------------------------------
fn det2_closed_forms(o: &mut Outcome) {
    let g = grid(256);
    let gencv = assemble(&kernel_zoo("remark_gencv:b1=-2,b2=-3", g, 1).unwrap()).det2().value();
    let want = 2.0 * 5f64.exp();
    let rel = (gencv / want - 1.0).abs();
    o.require(rel <= 1e-6, format!("gencv det₂ = {gencv:.6} vs 2e⁵ rel {rel:.1e}"));
    for b in [0.3f64, -0.5, -2.0] {
        let got = assemble(&kernel_zoo(&format!("rank1:b={b}"), g, 1).unwrap()).det2().value();
        let want = (1.0 + b) * (-b).exp();
        let rel = (got / want - 1.0).abs();
        o.require(rel <= 1e-10, format!("rank-one b={b}: rel {rel:.1e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = grid(8);
        let v = DMatrix::from_fn(8, 8, |_, _| 4.0 * rng.sample::<f64, _>(StandardNormal));
        let k = MatrixKernel::from_values(g, 1, v, false).unwrap();
        let m = k.values() * g.step();
        let mt = m.transpose();
        let lhs = det2_oracle(&(&m + &mt + &mt * &m));
        let rhs = det2_oracle(&m) * det2_oracle(&mt) * (-(&mt * &m).trace()).exp();
        let rep = det2_product_identity_check(&k);
        let oracle_gap = (lhs / rhs - 1.0).abs();
        let lib_gap = (rep.product_det2.value() / lhs - 1.0).abs();
        worst = worst
            .max(rep.relative_discrepancy)
            .max(rep.eta_relative_discrepancy)
            .max(oracle_gap)
            .max(lib_gap);
    }
    o.require(worst <= 1e-10, format!("product identity, 20 random 8×8: max rel {worst:.1e}"));
}

// 3 ------------------------------------------------------------------------
fn non_injectivity_witness(o: &mut Outcome) {
    let (k1, k2) = remark_pair(grid(256), 1, 2f64.sqrt() - 1.0, 1.0).unwrap();
    let r = injectivity_report(&k1, &k2).unwrap();
    let want = 8.0 - 4.0 * 2f64.sqrt();
    let sq = r.kappa_distance.powi(2);
    o.require(r.eta_distance <= 1e-8, format!("‖η(κ₁)−η(κ₂)‖₂ = {:.1e}", r.eta_distance));
    o.require((sq - want).abs() <= 1e-3, format!("‖κ₁−κ₂‖₂² = {sq:.6} vs {want:.6}"));
}

// 4 ------------------------------------------------------------------------
fn harmonic_oscillator(o: &mut Outcome) {
    let start = Instant::now();
    let setup = RunSetup::new(1.0, 1024, 1, 100_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let volterra = spec("volterra");
    let kappa = volterra.build(setup.grid, 1).unwrap();
    let h = map_paths(setup.grid, 1, setup.samples, setup.seed, |b| h_functionals(&kappa, None, b)).unwrap();
    for lambda in [0.5f64, 1.0, 2.0] {
        let oracle = lambda.sqrt().cosh().powf(-0.5);
        // determinant side only: one path is enough for the report
        let r = verify_harmonic(&setup.with_samples(1), &volterra, None, lambda, &TestFunctional::One, &opts).unwrap();
        let det = r.provenance.values["det_factor"];
        let rel = (det / oracle - 1.0).abs();
        o.require(rel <= 0.01, format!("λ={lambda}: det^(-1/2) = {det:.5} vs {oracle:.5} rel {rel:.1e}"));
        let weights: Vec<f64> = h.iter().map(|v| (-lambda * v).exp()).collect();
        let (m, se) = mean_se(&weights);
        let z = (m - oracle) / se;
        o.require(z.abs() <= 3.0, format!("λ={lambda}: MC {m:.5} z {z:+.2}"));
    }
    o.within("runtime", start.elapsed(), Duration::from_secs(60));
}

// 5 ------------------------------------------------------------------------
fn transformation_identity(o: &mut Outcome) {
    let setup = RunSetup::new(1.0, 256, 1, 200_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let f = TestFunctional::CosEnd { a: 1.0 };
    for k in ["rank1:b=0.3", "remark_gencv:b1=-2,b2=-3"] {
        let start = Instant::now();
        let r = verify_transf(&setup, &spec(k), &f, &opts).unwrap();
        let c = r.primary.as_ref().unwrap();
        let se = c.lhs.std_error.unwrap().hypot(c.rhs.std_error.unwrap());
        let rel = (c.lhs.mean / c.rhs.mean - 1.0).abs();
        let bound = 0.02f64.max(3.0 * se / c.rhs.mean.abs());
        o.require(c.method == Method::ZScore && rel <= bound, format!("{k}: |L/R−1| = {rel:.1e} ≤ {bound:.1e}"));
        check_names(o, &r);
        o.within(k, start.elapsed(), Duration::from_secs(60));
    }
}

// 6 ------------------------------------------------------------------------
fn inverse_transformation(o: &mut Outcome) {
    let setup = RunSetup::new(1.0, 256, 1, 200_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let f = TestFunctional::CosEnd { a: 1.0 };
    for k in ["rank1:b=0.3", "remark_gencv:b1=-2,b2=-3"] {
        let r = verify_inverse(&setup, &spec(k), &f, &opts).unwrap();
        // dropping the diagonal of q costs an O(Δ) bias (0.67% for the dual
        // density at N = 256), which the tolerance half of the band absorbs
        for name in ["density_normalization", "density_normalization_dual"] {
            let c = r.comparison(name).unwrap();
            let (ok, z) = verdict_band(c);
            o.require(
                ok && c.passed && c.rhs.mean == 1.0,
                format!("{k} {name}: {:.5} z {z:+.2} ({:?})", c.lhs.mean, c.method),
            );
        }
        let path = r.check("pathwise_composition").unwrap();
        o.require(path.passed && path.tolerance <= 1e-8, format!("{k}: pathwise {:.1e}", path.value));
        o.require(r.passed(), format!("{k}: verdict {:?}", r.verdict));
    }
}

// 7 ------------------------------------------------------------------------
fn surjective_identity(o: &mut Outcome) {
    let setup = RunSetup::new(1.0, 256, 1, 200_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let want = (0.5 * 0.5f64.exp()).powf(-0.5);
    o.require((want - 1.1014).abs() < 5e-5, format!("oracle {want:.5}"));
    let r = verify_surjective(&setup, &spec("rank1:b=0.5"), &TestFunctional::One, &opts).unwrap();
    let det = r.provenance.values["det2_factor"];
    o.require((det / want - 1.0).abs() <= 1e-6, format!("det side {det:.7}"));
    let c = r.primary.as_ref().unwrap();
    let mc = c.lhs.mean;
    // Λ = 1/2 leaves e^{q} without a second moment: the band is nominal
    let band = 3.0 * c.nominal_std_error;
    o.require(
        c.method == Method::Consistency && c.passed && (mc - want).abs() <= band.max(0.02 * want),
        format!("MC side {mc:.5} (nominal 3σ {band:.1e}, {:?})", c.method),
    );
    check_names(o, &r);
    let sweep = sweep_laplace(&setup, &spec("rank1:b=0.5"), &[0.25, 0.5, 0.75], &TestFunctional::One, &opts).unwrap();
    for r in &sweep {
        o.require(r.passed(), format!("{} {:?}", r.name, r.verdict));
    }
}

// 8 ------------------------------------------------------------------------
fn integrability_boundary(o: &mut Outcome) {
    let g = grid(256);
    let setup = RunSetup::new(1.0, 256, 1, 50_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let r = verify_integrability_bound(&setup, &spec("rank1:b=0.5"), &opts).unwrap();
    let (exact, bound) = (r.provenance.values["exact"], r.provenance.values["bound"]);
    let closed = rank_one_exp_moment(0.5);
    let bound_oracle = (0.5f64 * (0.5 + 0.5 / (3.0 * 0.125)) * 0.25).exp();
    o.require((exact - closed).abs() <= 1e-6, format!("exact {exact:.4}"));
    o.require(
        (bound - 1.2575).abs() < 1e-4 && (bound - bound_oracle).abs() < 1e-9 && (integrability_bound(0.5, 0.5) - bound).abs() < 1e-12,
        format!("bound {bound:.5} ≈ 1.2575"),
    );
    o.require(exact <= bound, format!("{exact:.4} ≤ {bound:.4}"));
    for a in [1.0, 1.5] {
        let r = verify_integrability_bound(&setup, &spec(&format!("rank1:b={a}")), &opts).unwrap();
        o.require(r.verdict == Verdict::RejectedByHypothesis, format!("a={a} {:?}", r.verdict));
    }
    let guard = exp_q_moment_guard(&kernel_zoo("rank1:b=0.6", g, 1).unwrap()).unwrap().0;
    o.require(guard == MomentGuard::OkNoCi, format!("a=0.6 guard {guard:?}"));
}

// 9 ------------------------------------------------------------------------
fn cameron_martin(o: &mut Outcome) {
    let setup = RunSetup::new(1.0, 512, 1, 200_000, SEED).unwrap();
    let opts = ScenarioOptions::default();
    let f = TestFunctional::CosEnd { a: 1.0 };
    let r = verify_cameron_martin(&setup, &spec("const_phi:c=1"), &f, &opts).unwrap();
    let det = r.provenance.values["fredholm_det"];
    o.require((det - 1.5).abs() <= 1e-3 * 1.5, format!("Fredholm det {det:.6}"));
    let c = r.primary.as_ref().unwrap();
    let (ok, z) = strict_3_sigma(c);
    o.require(ok, format!("identity z {z:+.2}"));
    check_names(o, &r);
}

// 10 -----------------------------------------------------------------------
fn variance_constant(o: &mut Outcome) {
    let g = grid(256);
    for a in [0.5, -1.0] {
        let eta = kernel_zoo(&format!("rank1:b={a}"), g, 1).unwrap();
        let q = map_paths(g, 1, 100_000, SEED + 10, |b| quadratic_form(&eta, b)).unwrap();
        let n = q.len() as f64;
        let m = q.iter().sum::<f64>() / n;
        let var = q.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = q.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var) / n).sqrt();
        let want = 0.5 * eta.l2_norm().powi(2);
        let z = (var - want) / se;
        o.require(z.abs() <= 5.0, format!("a={a}: Var q = {var:.5} vs ½‖η‖² = {want:.5} z {z:+.2}"));
    }
}

// 11 -----------------------------------------------------------------------
fn determinism(o: &mut Outcome) {
    let text = r#"
samples = 20000
[grid]
n_steps = 64
[[scenario]]
kind = "transf"
[[scenario]]
kind = "surjective"
[[scenario]]
kind = "laplace"
lambdas = [0.5]
[[scenario]]
kind = "harmonic"
[[scenario]]
kind = "cameron-martin"
[[scenario]]
kind = "finite-dim"
"#;
    let config = parse_config(text).unwrap();
    let json_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| reports_json(&run(&config).unwrap()).unwrap())
    };
    let one = json_with(1);
    let four = json_with(4);
    let again = json_with(4);
    o.require(one == four, format!("1 vs 4 threads: {} bytes", one.len()));
    o.require(four == again, "rerun identical");
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Outcome)); 11] = [
        ("operator round-trips", operator_round_trips),
        ("det2 closed forms", det2_closed_forms),
        ("non-injectivity witness", non_injectivity_witness),
        ("harmonic oscillator", harmonic_oscillator),
        ("order-one change of variables", transformation_identity),
        ("inverse transformation", inverse_transformation),
        ("surjectivity onto quadratic forms", surjective_identity),
        ("integrability boundary", integrability_boundary),
        ("Cameron-Martin linear transformation", cameron_martin),
        ("variance constant", variance_constant),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let mut outcome = Outcome::new();
        let start = Instant::now();
        run(&mut outcome);
        let secs = start.elapsed().as_secs_f64();
        let status = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("{status} [{:>2}] {name} ({secs:.1}s)", k + 1);
        for f in &outcome.failures {
            println!("       failed: {f}");
        }
        for n in &outcome.notes {
            println!("       ok: {n}");
        }
        if !outcome.failures.is_empty() {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
