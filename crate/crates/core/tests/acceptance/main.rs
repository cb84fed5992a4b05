//! Acceptance criteria. Runs every criterion and prints one PASS/FAIL line
//! each. Exits nonzero if a criterion fails that is not listed in
//! `EXPECTED_FAILURES`. Positional arguments filter criteria by substring.

mod fixtures;

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use nonwoven::dataset::studies::{
    relative_spread, replicate_averaging, step_size_study, uncertainty_report, STEP_THRESHOLD_PERCENTILE,
};
use nonwoven::dataset::{row_seed, LaydownSimulator, Simulator, Split};
use nonwoven::explore::{local_search, random_search, ObjectiveSpec, Status};
use nonwoven::homogeneity::CvProfile;
use nonwoven::laydown::{simulate_fiber, LaydownConfig};
use nonwoven::params::{ParamRanges, ProcessParams, SampleWindow};
use nonwoven::surrogates::bayes::{fit_bayes, BayesConfig};
use nonwoven::surrogates::forest::{fit_forest, RfConfig};
use nonwoven::surrogates::linear::{fit_linear, LinearConfig, Regularization};
use nonwoven::surrogates::metrics::evaluate_matrices;
use nonwoven::surrogates::mlp::{Activation, Mlp};
use nonwoven::surrogates::svr::{kernel_matrix, solve_dual, tube_violation, SvrConfig};
use nonwoven::surrogates::sweep::degree_sweep;
use nonwoven::surrogates::{evaluate, train, FamilySpec, ModelSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn fmt7(v: &[f64; 7]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn random_params(rng: &mut impl Rng, ranges: &ParamRanges) -> ProcessParams {
    ranges.denormalize(std::array::from_fn(|_| rng.gen::<f64>()))
}

// ---------------------------------------------------------------- laydown

/// Sample autocorrelation at lag `k` with the series mean removed.
fn autocorrelation(xs: &[f64], k: usize) -> f64 {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let ck: f64 = (0..n - k).map(|i| (xs[i] - m) * (xs[i + k] - m)).sum();
    ck / c0
}

fn stationarity() -> Outcome {
    let cfg = LaydownConfig::default();
    let ranges = ParamRanges::default();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
    let steps = 1_000_000usize;
    let mut worst_std: f64 = 0.0;
    let mut worst_acf: f64 = 0.0;
    for i in 0..10 {
        let p = random_params(&mut rng, &ranges);
        let ds = p.step_size_mm();
        let drift = p.speed_ratio * ds;
        let fiber = simulate_fiber(&p, 0.0, steps as f64 * drift, 1000 + i, &cfg).unwrap();
        let x1: Vec<f64> = fiber.points.iter().enumerate().map(|(k, q)| q[0] - k as f64 * drift).collect();
        let x2: Vec<f64> = fiber.points.iter().map(|q| q[1]).collect();
        let rho = (-p.noise_amplitude * ds / cfg.reference_length).exp();
        for (xs, sigma) in [(&x1, p.sigma1), (&x2, p.sigma2)] {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            worst_std = worst_std.max((sd / sigma - 1.0).abs());
            for k in 1..=30 {
                worst_acf = worst_acf.max((autocorrelation(xs, k) - rho.powi(k as i32)).abs());
            }
        }
    }
    Outcome::new(
        worst_std <= 0.02 && worst_acf <= 0.02,
        format!("max |std/sigma - 1| = {worst_std:.4} (tol 0.02), max |acf_k - rho^k| = {worst_acf:.4} (tol 0.02), 10 settings x 1e6 steps"),
    )
}

// -------------------------------------------------------------- studies

fn window_size_trend() -> Outcome {
    let desk = fixtures::desk();
    // Setting with the largest 50 mm spread across its campaign replicates.
    let (setting, spread) = desk
        .data
        .by_setting()
        .into_iter()
        .map(|(_, rows)| {
            let xs: Vec<f64> = rows.iter().filter_map(|r| r.profile()).map(|p| p.cv[6]).collect();
            (rows[0].params, relative_spread(&xs).unwrap_or(0.0))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let windows = [
        SampleWindow::desk(),
        SampleWindow::new(200.0, 100.0).unwrap(),
        SampleWindow::full(),
    ];
    let rep = uncertainty_report(fixtures::replay(), &setting, &windows, 20, 2024).unwrap();
    let c = &rep.cv_of_cv;
    let decreasing = (0..7).all(|r| c[0][r] > c[1][r] && c[1][r] > c[2][r]);
    let ratio = c[0][6] / c[2][6];
    Outcome::new(
        decreasing && ratio >= 2.0,
        format!(
            "setting {:?} (campaign 50 mm spread {spread:.3}); 5x5 {} 10x20 {} 25x50 {}; 50 mm ratio {ratio:.2} (need >= 2), strictly decreasing: {decreasing}",
            setting.to_array(),
            fmt7(&c[0]),
            fmt7(&c[1]),
            fmt7(&c[2])
        ),
    )
}

fn sqrt5_averaging() -> Outcome {
    let desk = fixtures::desk();
    let memo = fixtures::replay();
    let window = SampleWindow::desk();
    let settings: Vec<(usize, ProcessParams)> = desk
        .data
        .by_setting()
        .into_iter()
        .take(50)
        .map(|(id, rows)| (id, rows[0].params))
        .collect();
    let runs: Vec<Vec<CvProfile>> = settings
        .iter()
        .map(|(id, p)| {
            (0..15)
                .map(|rep| memo.profile(p, &window, row_seed(fixtures::DESK_CAMPAIGN_SEED, *id, rep)).unwrap())
                .collect()
        })
        .collect();
    let rep = replicate_averaging(&runs, 5).unwrap();
    let worst = rep.ratio.iter().fold(0.0f64, |a, r| a.max((r - 1.0).abs()));
    Outcome::new(
        worst <= 0.25,
        format!(
            "{} settings x 3 groups of 5; averaged/(single/sqrt5) per resolution {} (need within 25%)",
            rep.settings,
            fmt7(&rep.ratio)
        ),
    )
}

fn step_size() -> Outcome {
    let desk = fixtures::desk();
    let points: Vec<ProcessParams> = desk.data.by_setting().into_iter().take(100).map(|(_, r)| r[0].params).collect();
    let rep = step_size_study(
        fixtures::replay(),
        &points,
        &SampleWindow::desk(),
        0.025,
        0.05,
        STEP_THRESHOLD_PERCENTILE,
        fixtures::DESK_CAMPAIGN_SEED,
    )
    .unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Outcome::new(
        rep.exceedance_fraction <= 0.05,
        format!(
            "ds 0.025 vs 0.05 mm over {} LHS settings: threshold {:.4}, exceedance {:.1}% (need <= 5%), mean step dev {:.4} vs mean noise dev {:.4}",
            points.len(),
            rep.threshold,
            100.0 * rep.exceedance_fraction,
            mean(&rep.step_deviation),
            mean(&rep.noise_deviation)
        ),
    )
}

// ---------------------------------------------------------- surrogates

/// Brute-force metrics straight from the definitions.
fn metric_oracle(y: &Array2<f64>, p: &Array2<f64>) -> (f64, f64, f64) {
    let (m, n) = y.dim();
    let (mut ape, mut se, mut ss_tot) = (0.0, 0.0, 0.0);
    for j in 0..n {
        let mut mean = 0.0;
        for i in 0..m {
            mean += y[[i, j]];
        }
        mean /= m as f64;
        for i in 0..m {
            ape += ((y[[i, j]] - p[[i, j]]) / y[[i, j]]).abs();
            se += (y[[i, j]] - p[[i, j]]).powi(2);
            ss_tot += (y[[i, j]] - mean).powi(2);
        }
    }
    let mn = (m * n) as f64;
    (100.0 * ape / mn, se / mn, 1.0 - se / ss_tot)
}

fn metric_oracles() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let y = Array2::from_shape_fn((20, 7), |_| rng.gen_range(0.5..2.0));
        let p = Array2::from_shape_fn((20, 7), |_| rng.gen_range(0.3..2.5));
        let (mape, mse, r2) = metric_oracle(&y, &p);
        let got = evaluate_matrices(y.view(), p.view()).unwrap().pooled;
        worst = worst.max((got.mape - mape).abs()).max((got.mse - mse).abs()).max((got.r2 - r2).abs());
    }
    Outcome::new(worst <= 1e-9, format!("max |implementation - oracle| = {worst:.2e} over 100 random 20x7 matrices (tol 1e-9)"))
}

fn centered(a: &Array2<f64>) -> Array2<f64> {
    let m = a.mean_axis(Axis(0)).unwrap();
    a - &m
}

fn model_suite() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    let mut notes = Vec::new();
    let mut pass = true;

    // Ridge: normal-equation residual of the centred problem.
    let x = Array2::from_shape_fn((60, 5), |_| rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_fn((60, 3), |_| rng.gen_range(-1.0..1.0));
    let lambda = 0.7;
    let ridge = fit_linear(
        x.view(),
        y.view(),
        &LinearConfig {
            regularization: Regularization::L2,
            strength: lambda,
            ..Default::default()
        },
    )
    .unwrap();
    let (xc, yc) = (centered(&x), centered(&y));
    let lhs = xc.t().dot(&xc).dot(&ridge.coef) + &ridge.coef * lambda;
    let rhs = xc.t().dot(&yc);
    let rel = (&lhs - &rhs).iter().map(|v| v * v).sum::<f64>().sqrt() / rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    pass &= rel <= 1e-8;
    notes.push(format!("ridge residual {rel:.1e}"));

    // Lasso: an irrelevant feature must come out exactly zero, and the
    // subgradient condition must hold for it.
    let xl = Array2::from_shape_fn((200, 4), |_| rng.gen_range(-1.0..1.0));
    let yl = Array2::from_shape_fn((200, 1), |(i, _)| 3.0 * xl[[i, 0]] - 2.0 * xl[[i, 1]] + 0.5 * xl[[i, 3]] + 0.01 * rng.gen_range(-1.0..1.0));
    let lasso = fit_linear(
        xl.view(),
        yl.view(),
        &LinearConfig {
            regularization: Regularization::L1,
            strength: 0.1,
            ..Default::default()
        },
    )
    .unwrap();
    let (xlc, ylc) = (centered(&xl), centered(&yl));
    let resid = &ylc - &xlc.dot(&lasso.coef);
    let corr = xlc.column(2).dot(&resid.column(0)).abs() / 200.0;
    let zero = lasso.coef[[2, 0]] == 0.0 && corr <= 0.1 + 1e-12;
    pass &= zero;
    notes.push(format!("lasso w3 = {} (|x3'r|/n = {corr:.3} <= 0.1)", lasso.coef[[2, 0]]));

    // Bayesian MAP with fixed alpha, noise variance equals ridge with
    // lambda = alpha * noise variance.
    let (alpha, s2) = (2.5, 0.3);
    let bayes = fit_bayes(
        x.view(),
        y.view(),
        &BayesConfig {
            alpha,
            noise_variance: s2,
            degree: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let ridge2 = fit_linear(
        x.view(),
        y.view(),
        &LinearConfig {
            regularization: Regularization::L2,
            strength: alpha * s2,
            ..Default::default()
        },
    )
    .unwrap();
    let d_bayes = (&bayes.coef - &ridge2.coef).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    pass &= d_bayes <= 1e-10;
    notes.push(format!("bayes MAP vs ridge {d_bayes:.1e}"));

    // Random forest: one unpruned tree interpolates; a forest is the mean of
    // its trees.
    let xf: Array2<f64> = Array2::from_shape_fn((80, 3), |_| rng.gen::<f64>());
    let yf = Array2::from_shape_fn((80, 2), |(i, j)| (xf[[i, 0]] * 3.0 + j as f64).sin() + xf[[i, 1]] * xf[[i, 2]]);
    let one = fit_forest(
        xf.view(),
        yf.view(),
        &RfConfig {
            trees: 1,
            bootstrap: false,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let train_err = (&one.predict(xf.view()) - &yf).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let many = fit_forest(xf.view(), yf.view(), &RfConfig { trees: 9, ..Default::default() }, 4).unwrap();
    let pm = many.predict(xf.view());
    let mut mean_ok = true;
    for (i, row) in xf.rows().into_iter().enumerate() {
        let mut acc = [0.0; 2];
        for t in &many.trees {
            for (a, v) in acc.iter_mut().zip(t.predict_row(row)) {
                *a += v;
            }
        }
        for j in 0..2 {
            mean_ok &= pm[[i, j]] == acc[j] / 9.0;
        }
    }
    pass &= train_err == 0.0 && mean_ok;
    notes.push(format!("single-tree train error {train_err:.1e}, forest = tree mean: {mean_ok}"));

    // SVR: tube complementarity at the solver's stopping point.
    let xs: Array2<f64> = Array2::from_shape_fn((120, 2), |_| rng.gen_range(-2.0..2.0));
    let zs = Array1::from_shape_fn(120, |i| xs[[i, 0]].sin() + 0.3 * xs[[i, 1]] + rng.gen_range(-0.05..0.05));
    let cfg = SvrConfig::default();
    let k = kernel_matrix(xs.view(), xs.view(), cfg.gamma);
    let sol = solve_dual(&k, zs.view(), &cfg).unwrap();
    let kkt = tube_violation(&sol, &k, zs.view(), &cfg);
    pass &= kkt <= 1e-3;
    notes.push(format!("svr KKT violation {kkt:.1e}"));

    // MLP: analytic gradient against central differences on 2-3-2.
    let mut worst_grad: f64 = 0.0;
    for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
        let net = Mlp::<f64>::new(&[2, 3, 2], &[act, Activation::Identity], 5).unwrap();
        let xb = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let yb = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let (_, grads) = net.loss_and_grad(xb.view(), yb.view());
        let h = 1e-6;
        for (l, g) in grads.iter().enumerate() {
            let numeric = |perturb: &dyn Fn(&mut Mlp<f64>, f64)| {
                let (mut a, mut b) = (net.clone(), net.clone());
                perturb(&mut a, h);
                perturb(&mut b, -h);
                (a.mse(xb.view(), yb.view()) - b.mse(xb.view(), yb.view())) / (2.0 * h)
            };
            for ((i, j), &an) in g.weights.indexed_iter() {
                let nu = numeric(&|m: &mut Mlp<f64>, d| m.layers[l].weights[[i, j]] += d);
                worst_grad = worst_grad.max((an - nu).abs() / an.abs().max(nu.abs()).max(1e-8));
            }
            for (j, &an) in g.bias.indexed_iter() {
                let nu = numeric(&|m: &mut Mlp<f64>, d| m.layers[l].bias[j] += d);
                worst_grad = worst_grad.max((an - nu).abs() / an.abs().max(nu.abs()).max(1e-8));
            }
        }
    }
    pass &= worst_grad <= 1e-4;
    notes.push(format!("mlp gradient rel err {worst_grad:.1e}"));

    Outcome::new(pass, notes.join("; "))
}

fn desk_end_to_end() -> Outcome {
    let desk = fixtures::desk();
    let mlp = fixtures::desk_mlp();
    let lr = train(&ModelSpec::new(FamilySpec::Linear(LinearConfig::default()), 0), &desk.data).unwrap();
    let m = evaluate(mlp, &desk.data, Split::Test).unwrap();
    let l = evaluate(&lr, &desk.data, Split::Test).unwrap();
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| desk.data.split_rows(s).len() / 5);
    let beats = m.mape < l.mape && m.mse < l.mse && m.r2 > l.r2;
    Outcome::new(
        m.r2 >= 0.9 && m.mape <= 15.0 && beats && counts == [320, 80, 100],
        format!(
            "campaign {:.0} s this run; split {counts:?} settings; MLP test R2 {:.4} MAPE {:.2}% MSE {:.3e} ({} epochs, {:.0} s); LR R2 {:.4} MAPE {:.2}% MSE {:.3e}; need R2 >= 0.9, MAPE <= 15%, MLP better on all three",
            desk.seconds,
            m.r2,
            m.mape,
            m.mse,
            mlp.meta.iterations,
            mlp.meta.train_seconds,
            l.r2,
            l.mape,
            l.mse
        ),
    )
}

fn speedup() -> Outcome {
    let desk = fixtures::desk();
    let mlp = fixtures::desk_mlp();
    let sim = LaydownSimulator::default();
    let window = SampleWindow::desk();
    let points: Vec<ProcessParams> = desk.data.by_setting().into_iter().take(5).map(|(_, r)| r[0].params).collect();
    let t = Instant::now();
    for (i, p) in points.iter().enumerate() {
        sim.profile(p, &window, 77 + i as u64).unwrap();
    }
    let sim_ms = t.elapsed().as_secs_f64() * 1e3 / points.len() as f64;
    let reps = 200;
    let t = Instant::now();
    for i in 0..reps {
        std::hint::black_box(mlp.predict(&points[i % points.len()]).unwrap());
    }
    let pred_ms = t.elapsed().as_secs_f64() * 1e3 / reps as f64;
    let ratio = sim_ms / pred_ms;
    Outcome::new(
        ratio >= 100.0,
        format!("simulation {sim_ms:.1} ms/sample, MLP prediction {pred_ms:.4} ms/sample, speedup {ratio:.0}x (need >= 100x)"),
    )
}

fn degree_curve() -> Outcome {
    let max = 8;
    let sweep = degree_sweep(&fixtures::desk().data, max).unwrap();
    let ok: Vec<_> = sweep.points.iter().take_while(|p| p.train_mse.is_some()).collect();
    let train: Vec<f64> = ok.iter().map(|p| p.train_mse.unwrap()).collect();
    let val: Vec<f64> = ok.iter().map(|p| p.val_mse.unwrap()).collect();
    // Nested least-squares fits; allow only rounding-level increases.
    let non_increasing = train.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let (imin, vmin) = val.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let knee = val.len() >= 3 && vmin < val[0] && vmin < *val.last().unwrap();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    Outcome::new(
        non_increasing && knee,
        format!(
            "degrees 1..{} fitted; train [{}]; val [{}]; val minimum at degree {}",
            ok.len(),
            fmt(&train),
            fmt(&val),
            imin + 1
        ),
    )
}

fn explorer() -> Outcome {
    let mlp = fixtures::desk_mlp();
    let ranges = ParamRanges::default();
    let obj = ObjectiveSpec::default();
    let best_random = random_search(mlp, &ranges, 1000, 99, &obj).unwrap()[0].objective;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(100);
    let mut wins = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..20 {
        let start = random_params(&mut rng, &ranges);
        let ls = local_search(mlp, &ranges, &start, 1000, &obj).unwrap();
        if ls.best.objective <= best_random {
            wins += 1;
        }
        worst = worst.max(ls.best.objective);
    }
    // Exhaustive transition table against the declared edges.
    let legal = [
        (Status::Proposed, Status::Simulating),
        (Status::Simulating, Status::Simulated),
        (Status::Simulating, Status::Proposed),
        (Status::Simulated, Status::Accepted),
        (Status::Simulated, Status::Rejected),
    ];
    let mut table_ok = true;
    for from in Status::ALL {
        for to in Status::ALL {
            table_ok &= from.can_become(to) == legal.contains(&(from, to));
        }
    }
    Outcome::new(
        wins >= 16 && table_ok,
        format!(
            "local search <= best of 1000 random ({best_random:.5}) in {wins}/20 starts (need >= 16), worst local {worst:.5}; state table exhaustive check: {table_ok}"
        ),
    )
}

const CRITERIA: &[Criterion] = &[
    ("stationarity", stationarity),
    ("metric_oracles", metric_oracles),
    ("model_suite", model_suite),
    ("desk_end_to_end", desk_end_to_end),
    ("speedup", speedup),
    ("degree_sweep", degree_curve),
    ("explorer", explorer),
    ("step_size", step_size),
    ("sqrt5_averaging", sqrt5_averaging),
    ("window_size_trend", window_size_trend),
];

/// Criteria known not to hold for this model. They run and print FAIL like
/// any other, but do not fail the target.
const EXPECTED_FAILURES: &[&str] = &["step_size"];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut ran, mut passed, mut expected, mut unexpected) = (0, 0, 0, 0);
    for (name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        });
        let known = EXPECTED_FAILURES.contains(name);
        match (out.pass, known) {
            (true, _) => passed += 1,
            (false, true) => expected += 1,
            (false, false) => unexpected += 1,
        }
        println!(
            "{}{} {name} ({:.1} s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            if known && !out.pass { " [expected]" } else { "" },
            t.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!(
        "acceptance: {ran} run, {passed} passed, {} failed ({expected} expected, {unexpected} unexpected)",
        expected + unexpected
    );
    if unexpected > 0 {
        std::process::exit(1);
    }
}
