mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rrglmm::covstruct::{cov_to_sd_corr, num_params, CovKind};
use rrglmm::family::Family;
use rrglmm::formula::{build_design, parse_formula, DataTable};
use rrglmm::inference::{
    bootstrap_from_fits, bootstrap_p_value, observed_information, rank_sweep,
};
use rrglmm::laplace::{laplace_nll, JointModel, ParamVector, Prepared};
use rrglmm::optimize::{
    fit_model, outer_minimize, rng_stream, FitControl, FitResult, OuterControl, StartMethod,
};
use statrs::function::gamma::ln_gamma;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn model_for(data: &DataTable, formula: &str, family: Family) -> JointModel {
    JointModel::new(build_design(&parse_formula(formula).unwrap(), data).unwrap(), family).unwrap()
}

/// The converged fit, or the best run when none converged.
fn fit_any(model: &JointModel, control: &FitControl) -> FitResult {
    match fit_model(model, control) {
        Ok(f) => f,
        Err(rrglmm::Error::NoConvergence { best: Some(b), .. }) => *b,
        Err(e) => panic!("fit failed: {e}"),
    }
}

fn c1_parameter_counts() -> Verdict {
    let counts = [
        num_params(CovKind::Us, 9).unwrap(),
        num_params(CovKind::Rr { rank: 2 }, 9).unwrap(),
        num_params(CovKind::Us, 15).unwrap(),
        num_params(CovKind::Rr { rank: 3 }, 15).unwrap(),
    ];
    let data = common::species_table(12, 9, 1);
    let p = |f: &str| {
        let m = model_for(&data, f, Family::Poisson);
        m.n_params() - m.param_layout().n_beta
    };
    let through_model = [p("y ~ 1 + (Species + 0 | ID)"), p("y ~ 1 + rr(Species + 0 | ID, 2)")];
    let pass = counts == [45, 17, 120, 42] && through_model == [45, 17];
    verdict(pass, format!("counts {counts:?}, model {through_model:?}"))
}

/// Dense marginal gaussian negative log-likelihood.
fn gaussian_marginal_nll(model: &JointModel, psi: &ParamVector) -> f64 {
    let n = model.n_obs();
    let d = &model.design;
    let mut v = DMatrix::<f64>::identity(n, n) * psi.phi();
    for (t, r) in model.random().iter().enumerate() {
        let s = model.term_cov(psi, t);
        for i in 0..n {
            for j in 0..n {
                if r.group_index[i] == r.group_index[j] {
                    let zi = r.z.row(i);
                    let zj = r.z.row(j);
                    v[(i, j)] += (zi * &s * zj.transpose())[(0, 0)];
                }
            }
        }
    }
    let beta = nalgebra::DVector::from_vec(psi.beta.clone());
    let resid = nalgebra::DVector::from_vec(d.y.clone()) - &d.x * beta;
    let chol = v.cholesky().expect("marginal covariance is positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(&resid));
    0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

fn c2_gaussian_exactness() -> Verdict {
    let templates = [
        "(1 | {g})",
        "(x1 | {g})",
        "diag(x1 + x2 | {g})",
        "rr(x1 + x2 + x3 | {g}, 1)",
        "rr(x1 + x2 + x3 | {g}, 2)",
        "rr(f + 0 | {g}, 1)",
        "(f + 0 | {g})",
    ];
    let mut worst: f64 = 0.0;
    for k in 0..25u64 {
        let mut rng = rng_stream(2024, k);
        let n = rng.random_range(60..=400);
        let levels = [rng.random_range(4..16), rng.random_range(3..11), rng.random_range(5..21)];
        let mut data = DataTable::new();
        for name in ["x1", "x2", "x3", "y"] {
            let col: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            data = data.with_numeric(name, col).unwrap();
        }
        let f: Vec<String> = (0..n).map(|_| format!("f{}", rng.random_range(0..3))).collect();
        data = data.with_categorical_levels("f", &f, &["f0", "f1", "f2"]).unwrap();
        for (gi, &m) in levels.iter().enumerate() {
            let labels: Vec<String> = (0..n).map(|i| format!("l{}", i % m)).collect();
            data = data.with_categorical(&format!("g{gi}"), &labels).unwrap();
        }
        let n_terms = rng.random_range(1..=3);
        let mut formula = String::from("y ~ x1 + f");
        for g in 0..n_terms {
            let t = templates[rng.random_range(0..templates.len())];
            formula.push_str(" + ");
            formula.push_str(&t.replace("{g}", &format!("g{g}")));
        }
        let model = model_for(&data, &formula, Family::Gaussian);
        let values: Vec<f64> = (0..model.n_params())
            .map(|_| 0.6 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        let psi = model.unpack(&values).unwrap();
        let engine = laplace_nll(&model, &psi, None).nll;
        let oracle = gaussian_marginal_nll(&model, &psi);
        worst = worst.max((engine - oracle).abs() / oracle.abs());
    }
    verdict(worst <= 1e-6, format!("max relative error {worst:.2e} over 25 models"))
}

/// Gauss-Hermite nodes and weights for the weight `exp(-t^2)`, from the
/// eigen-decomposition of the Jacobi matrix.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

struct PoissonGlvm {
    groups: Vec<Vec<(f64, f64)>>,
    rule: (Vec<f64>, Vec<f64>),
    check: (Vec<f64>, Vec<f64>),
}

impl PoissonGlvm {
    /// Marginal nll of `y ~ Poisson(exp(b0 + b1 x + lambda u))`,
    /// `u ~ N(0, 1)`, by adaptive Gauss-Hermite quadrature per group. Points
    /// where the main rule and a coarser check rule disagree are reported as
    /// infinite, since the quadrature is not trustworthy there.
    fn nll(&self, p: &[f64]) -> f64 {
        let (b0, b1, lam) = (p[0], p[1], p[2]);
        let mut total = 0.0;
        for obs in &self.groups {
            let h = |u: f64| {
                obs.iter()
                    .map(|&(x, y)| {
                        let eta = b0 + b1 * x + lam * u;
                        y * eta - eta.exp() - ln_gamma(y + 1.0)
                    })
                    .sum::<f64>()
                    - 0.5 * u * u
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
            };
            let mut u = 0.0;
            let mut curv = 1.0;
            for _ in 0..100 {
                let (mut g, mut c) = (-u, 1.0);
                for &(x, y) in obs {
                    let mu = (b0 + b1 * x + lam * u).exp();
                    g += lam * (y - mu);
                    c += lam * lam * mu;
                }
                curv = c;
                let step = g / c;
                u += step;
                if step.abs() < 1e-12 {
                    break;
                }
            }
            let sigma = 1.0 / curv.sqrt();
            let log_integral = |(nodes, weights): &(Vec<f64>, Vec<f64>)| {
                let terms: Vec<f64> = nodes
                    .iter()
                    .zip(weights)
                    .map(|(&t, &w)| w.ln() + t * t + h(u + std::f64::consts::SQRT_2 * sigma * t))
                    .collect();
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (std::f64::consts::SQRT_2 * sigma).ln() + m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            let main = log_integral(&self.rule);
            if (main - log_integral(&self.check)).abs() > 1e-6 * main.abs().max(1.0) {
                return f64::INFINITY;
            }
            total -= main;
        }
        total
    }
}

fn c3_quadrature_oracle() -> Verdict {
    let (m, nj) = (50, 5);
    let mut rng = rng_stream(33, 1);
    let mut g = Vec::new();
    let mut x = Vec::new();
    for i in 0..m {
        for _ in 0..nj {
            g.push(format!("g{i:02}"));
            x.push(2.0 * rng.random::<f64>() - 1.0);
        }
    }
    let table = DataTable::new()
        .with_categorical("g", &g)
        .unwrap()
        .with_numeric("x", x.clone())
        .unwrap()
        .with_numeric("y", vec![0.0; m * nj])
        .unwrap();
    let (data, model, _) = common::simulate(
        table,
        "y ~ x + rr(1 | g, 1)",
        Family::Poisson,
        |m| common::params(m, vec![0.5, 0.3], vec![vec![0.8]], None),
        33,
    );
    let _ = data;
    let fit = fit_any(&model, &FitControl::default());
    let y = &model.design.y;
    let mut groups = vec![Vec::new(); m];
    for (k, &gi) in model.random()[0].group_index.iter().enumerate() {
        groups[gi].push((x[k], y[k]));
    }
    let oracle = PoissonGlvm {
        groups,
        rule: gauss_hermite(61),
        check: gauss_hermite(51),
    };
    let mut obj = |p: &[f64]| oracle.nll(p);
    let control = OuterControl {
        tol: 1e-7,
        ..OuterControl::default()
    };
    let r = outer_minimize(&mut obj, &[0.0, 0.0, 0.5], &control);
    let nll_err = (fit.nll - r.value).abs() / r.value.abs();
    let beta_err = (0..2).map(|k| (fit.psi_hat.beta[k] - r.x[k]).abs()).fold(0.0, f64::max);
    verdict(
        fit.converged && r.converged && nll_err <= 0.01 && beta_err <= 0.05,
        format!(
            "nll engine {:.4} vs quadrature {:.4} (rel {:.2e}); max beta diff {:.2e}",
            fit.nll, r.value, nll_err, beta_err
        ),
    )
}

fn c4_rr_full_rank_equivalence() -> Verdict {
    let cov = DMatrix::from_row_slice(2, 2, &[0.76, -0.64, -0.64, 0.98]);
    let (data, _, _) = common::simulate(
        common::species_table(142, 2, 44),
        "y ~ Zone + (Species + 0 | ID)",
        Family::Poisson,
        |m| common::params(m, vec![0.6, 0.07, -0.6], vec![common::cov_theta(CovKind::Us, &cov)], None),
        44,
    );
    let rr = model_for(&data, "y ~ Zone + rr(Species + 0 | ID, 2)", Family::Poisson);
    let us = model_for(&data, "y ~ Zone + (Species + 0 | ID)", Family::Poisson);
    let control = FitControl::default();
    let f_rr = fit_any(&rr, &control);
    let f_us = fit_any(&us, &control);
    let (sd_rr, c_rr) = cov_to_sd_corr(&rr.term_cov(&f_rr.psi_hat, 0));
    let (sd_us, c_us) = cov_to_sd_corr(&us.term_cov(&f_us.psi_hat, 0));
    let dll = (f_rr.loglik() - f_us.loglik()).abs();
    let dsd = sd_rr.iter().zip(&sd_us).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dcorr = (c_rr[(1, 0)] - c_us[(1, 0)]).abs();
    verdict(
        f_rr.converged && f_us.converged && dll <= 1e-4 && dsd <= 1e-2 && dcorr <= 1e-2,
        format!(
            "logLik {:.6} vs {:.6} (diff {dll:.2e}); sd diff {dsd:.2e}; corr {:.4} vs {:.4}",
            f_rr.loglik(),
            f_us.loglik(),
            c_rr[(1, 0)],
            c_us[(1, 0)]
        ),
    )
}

fn recovery_truth() -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = rng_stream(555, 0);
    let mut beta = vec![0.8];
    beta.extend((1..9).map(|_| rng.random::<f64>() - 0.5));
    beta.push(0.4);
    let norms: Vec<f64> = (0..9).map(|_| 0.4 + 0.5 * rng.random::<f64>()).collect();
    let angles: Vec<f64> = (0..9).map(|_| std::f64::consts::TAU * rng.random::<f64>()).collect();
    (beta, common::polar_loading(&norms, &angles))
}

fn c5_parameter_recovery() -> Verdict {
    let (beta, loading) = recovery_truth();
    let true_corr = cov_to_sd_corr(&(&loading * loading.transpose())).1;
    let (mut covered, mut total) = (0usize, 0usize);
    let (mut corr_err, mut n_corr) = (0.0, 0usize);
    let mut not_converged = 0;
    for seed in 0..20u64 {
        let (_, model, _) = common::simulate(
            common::species_table(300, 9, 500 + seed),
            "y ~ Species + x + rr(Species + 0 | ID, 2)",
            Family::Poisson,
            |m| common::params(m, beta.clone(), vec![common::rr_theta(&loading)], None),
            500 + seed,
        );
        let fit = fit_any(&model, &FitControl::default());
        if !fit.converged {
            not_converged += 1;
        }
        let se = observed_information(&model, &fit).standard_errors();
        for (k, &b) in beta.iter().enumerate() {
            total += 1;
            if (fit.psi_hat.beta[k] - b).abs() <= 2.0 * se[k] {
                covered += 1;
            }
        }
        let corr = cov_to_sd_corr(&model.term_cov(&fit.psi_hat, 0)).1;
        for i in 1..9 {
            for j in 0..i {
                corr_err += (corr[(i, j)] - true_corr[(i, j)]).abs();
                n_corr += 1;
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    let mae = corr_err / n_corr as f64;
    verdict(
        coverage >= 0.9 && mae <= 0.15,
        format!("coverage {covered}/{total} = {coverage:.3}; corr MAE {mae:.4}; {not_converged} fits not converged"),
    )
}

fn central_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], scale: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = scale * x[i].abs().max(1.0);
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

fn c6_gradient_hessian_numerics() -> Verdict {
    let (data, model, _) = common::simulate(
        common::species_table(30, 4, 66),
        "y ~ x + rr(Species + 0 | ID, 2) + (1 | Zone)",
        Family::Poisson,
        |m| {
            let l = DMatrix::from_row_slice(4, 2, &[0.6, 0.0, 0.3, 0.5, -0.4, 0.2, 0.2, -0.5]);
            common::params(m, vec![0.7, 0.3], vec![common::rr_theta(&l), vec![(0.4f64).ln()]], None)
        },
        66,
    );
    let _ = data;
    let mut rng = rng_stream(66, 2);
    let (mut worst_drift, mut worst_hess) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let mut x: Vec<f64> = (0..model.n_params())
            .map(|_| 0.4 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        x[0] += 0.5;
        let psi = model.unpack(&x).unwrap();
        let centre = laplace_nll(&model, &psi, None);
        let anchor = centre.v_hat.clone();
        let mut f = |p: &[f64]| laplace_nll(&model, &model.unpack(p).unwrap(), Some(&anchor)).nll;
        let g1 = central_gradient(&mut f, &x, 1e-3);
        let g2 = central_gradient(&mut f, &x, 5e-4);
        for (a, b) in g1.iter().zip(&g2) {
            worst_drift = worst_drift.max((a - b).abs() / b.abs().max(1.0));
        }

        let prep = Prepared::new(&model, &psi).unwrap();
        let mut v_points = vec![centre.v_hat.values.clone()];
        v_points.push(
            centre
                .v_hat
                .values
                .iter()
                .map(|v| v + 0.3 * { let z: f64 = StandardNormal.sample(&mut rng); z })
                .collect(),
        );
        for v in v_points {
            let h = prep.hessian(&v).to_dense();
            let dim = v.len();
            let mut probe = v.clone();
            let mut fd = DMatrix::<f64>::zeros(dim, dim);
            for j in 0..dim {
                let step = 1e-5 * v[j].abs().max(1.0);
                probe[j] = v[j] + step;
                let gp = prep.gradient(&probe);
                probe[j] = v[j] - step;
                let gm = prep.gradient(&probe);
                probe[j] = v[j];
                for i in 0..dim {
                    fd[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
                }
            }
            let scale = h.amax().max(1.0);
            worst_hess = worst_hess.max((&h - &fd).amax() / scale);
        }
    }
    verdict(
        worst_drift < 1e-3 && worst_hess <= 1e-4,
        format!("max gradient step-halving drift {worst_drift:.2e}; max Hessian relative error {worst_hess:.2e}"),
    )
}

fn c7_bootstrap() -> Verdict {
    let mut formula_ok = true;
    let mut rng = rng_stream(77, 0);
    for case in 0..50 {
        let r = rng.random_range(1..300);
        let reps: Vec<Option<f64>> = (0..r)
            .map(|_| (rng.random::<f64>() > 0.1).then(|| 10.0 * rng.random::<f64>()))
            .collect();
        let lr = if case % 5 == 0 { 5.0 } else { 12.0 * rng.random::<f64>() };
        let used: Vec<f64> = reps.iter().flatten().copied().collect();
        let k = used.iter().filter(|&&v| v >= lr).count();
        let expected = (k as f64 + 1.0) / (used.len() as f64 + 1.0);
        let (p, n_used) = bootstrap_p_value(lr, &reps);
        formula_ok &= p == expected && n_used == used.len();
    }
    let reps: Vec<Option<f64>> = (0..1000).map(|i| Some(i as f64 / 100.0)).collect();
    let (p1001, _) = bootstrap_p_value(27.35, &reps);
    formula_ok &= p1001 == 1.0 / 1001.0;

    let (runs, r, m, nj) = (200u64, 199usize, 10usize, 5usize);
    let mut g = Vec::new();
    for i in 0..m {
        for _ in 0..nj {
            g.push(format!("g{i}"));
        }
    }
    let mut rejections = 0;
    let mut failed = 0;
    for run in 0..runs {
        let mut xr = rng_stream(7000 + run, 1);
        let x: Vec<f64> = (0..m * nj).map(|_| 2.0 * xr.random::<f64>() - 1.0).collect();
        let table = DataTable::new()
            .with_categorical("g", &g)
            .unwrap()
            .with_numeric("x", x)
            .unwrap()
            .with_numeric("y", vec![0.0; m * nj])
            .unwrap();
        let (data, null, _) = common::simulate(
            table,
            "y ~ x",
            Family::Poisson,
            |md| common::params(md, vec![1.0, 0.5], vec![], None),
            7000 + run,
        );
        let alt = model_for(&data, "y ~ x + (1 | g)", Family::Poisson);
        let control = FitControl {
            seed: 7000 + run,
            ..FitControl::default()
        };
        let f0 = fit_any(&null, &control);
        let f1 = fit_any(&alt, &control);
        let b = bootstrap_from_fits(&null, &f0, &alt, &f1, r, &control).unwrap();
        failed += b.n_failed;
        if b.p_value <= 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / runs as f64;
    verdict(
        formula_ok && (0.02..=0.09).contains(&rate),
        format!(
            "p-value formula {}; 1/1001 case p = {p1001:.6}; size {rejections}/{runs} = {rate:.3} ({failed} failed replicates)",
            if formula_ok { "exact" } else { "MISMATCH" }
        ),
    )
}

fn windfarm_analogue() -> (DataTable, Vec<f64>) {
    let formula = "abundance ~ Zone * Year + diag(Zone * Year | Species) + (1 | Station) + rr(Species + 0 | ID, 2)";
    let mut rng = rng_stream(88, 0);
    let loading = common::random_loading(9, 2, 0.7, &mut rng);
    let beta = vec![0.5, 0.1, -0.4, 0.5, 0.2, -0.3];
    let (data, _, _) = common::simulate(
        common::windfarm_table(8, 9),
        formula,
        Family::Poisson,
        |m| {
            common::params(
                m,
                beta.clone(),
                vec![vec![(0.3f64).ln(); 6], vec![(0.3f64).ln()], common::rr_theta(&loading)],
                None,
            )
        },
        88,
    );
    (data, beta)
}

fn c8_rank_sweep() -> Verdict {
    let (data, _) = windfarm_analogue();
    let spec = parse_formula(
        "abundance ~ Zone * Year + diag(Zone * Year | Species) + (1 | Station) + rr(Species + 0 | ID, 2)",
    )
    .unwrap();
    let rows = rank_sweep(&spec, &data, Family::Poisson, 2, &[0, 1, 2, 3, 4], &FitControl::default()).unwrap();
    let ll: Vec<f64> = rows.iter().map(|(r, _)| r.loglik).collect();
    let monotone = ll.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let mut worst: f64 = 0.0;
    for a in 2..5 {
        for b in (a + 1)..5 {
            for (fa, fb) in rows[a].0.fixed.iter().zip(&rows[b].0.fixed) {
                let se = fa.coef.std_error.min(fb.coef.std_error);
                worst = worst.max((fa.coef.estimate - fb.coef.estimate).abs() / se);
            }
        }
    }
    let all_converged = rows.iter().all(|(r, _)| r.converged);
    verdict(
        monotone && worst < 0.5 && worst.is_finite() && all_converged,
        format!(
            "logLik by d {:?}; max pairwise fixed-effect shift for d=2..4 {worst:.3} SE; all converged {all_converged}",
            ll.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn c9_residual_start() -> Verdict {
    let mut wins = 0;
    let mut diffs = Vec::new();
    for seed in 0..20u64 {
        let mut rng = rng_stream(900 + seed, 3);
        let loading = common::random_loading(6, 2, 0.8, &mut rng);
        let beta: Vec<f64> = (0..6).map(|k| if k == 0 { 0.5 } else { rng.random::<f64>() - 0.5 }).collect();
        let (_, model, _) = common::simulate(
            common::species_table(100, 6, 900 + seed),
            "y ~ Species + rr(Species + 0 | ID, 2)",
            Family::Poisson,
            |m| common::params(m, beta.clone(), vec![common::rr_theta(&loading)], None),
            900 + seed,
        );
        let control = |start_method| FitControl {
            start_method,
            seed: 900 + seed,
            ..FitControl::default()
        };
        let res = fit_any(&model, &control(StartMethod::Res));
        let zero = fit_any(&model, &control(StartMethod::Zero));
        if res.nll <= zero.nll + 1e-6 {
            wins += 1;
        }
        diffs.push(res.nll - zero.nll);
    }
    let worst = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        wins >= 16,
        format!("res <= zero in {wins}/20 runs; largest res - zero nll gap {worst:.2e}"),
    )
}

fn c10_cli_contract() -> Verdict {
    let data = common::manifest_path("tests/fixtures/species.csv");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_rrglmm"))
            .args([
                "fit",
                "--data",
                data.to_str().unwrap(),
                "--formula",
                "y ~ Zone + rr(Species + 0 | ID, 2)",
                "--family",
                "poisson",
                "--seed",
                "1",
                "--out",
                d.path().to_str().unwrap(),
            ])
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return verdict(false, format!("fit exited with {status}"));
        }
    }
    let mut problems = Vec::new();
    for (file, schema) in [("fit.json", "fit"), ("varcorr.json", "varcorr")] {
        let value = common::read_json(&dirs[0].path().join(file));
        problems.extend(common::schema_errors(schema, &value).into_iter().map(|e| format!("{file}: {e}")));
    }
    let golden = common::manifest_path("tests/golden");
    let read_csv = |p: &std::path::Path| {
        let mut r = csv::Reader::from_path(p).unwrap();
        let h: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        let rows: Vec<Vec<String>> = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
        (h, rows)
    };
    let (h, rows) = read_csv(&dirs[0].path().join("ordination.csv"));
    let (gh, grows) = read_csv(&golden.join("ordination.csv"));
    if h != gh || rows.len() != grows.len() {
        problems.push("ordination.csv layout differs from golden".into());
    } else {
        for (a, b) in rows.iter().zip(&grows) {
            let close = a[3..].iter().zip(&b[3..]).all(|(x, y)| {
                let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
                (x - y).abs() <= 1e-6 * (1.0 + y.abs())
            });
            if a[..3] != b[..3] || !close {
                problems.push(format!("ordination row {:?} differs from golden", &a[..3]));
            }
        }
    }
    let fit = common::read_json(&dirs[0].path().join("fit.json"));
    let gfit = common::read_json(&golden.join("fit.json"));
    let (a, b) = (fit["loglik"].as_f64().unwrap(), gfit["loglik"].as_f64().unwrap());
    if (a - b).abs() > 1e-6 * b.abs() {
        problems.push(format!("logLik {a} differs from golden {b}"));
    }
    for f in ["fit.json", "varcorr.json", "ordination.csv", "latents.csv", "summary.txt"] {
        if std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap() {
            problems.push(format!("{f} differs between identical runs"));
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "schemas valid, golden match, byte-identical reruns".into()
        } else {
            problems.join("; ")
        },
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "parameter counts", Duration::from_secs(1), c1_parameter_counts),
        (2, "gaussian exactness", Duration::from_secs(30), c2_gaussian_exactness),
        (3, "quadrature oracle", Duration::from_secs(60), c3_quadrature_oracle),
        (4, "rr(2) equals unstructured for two responses", Duration::from_secs(120), c4_rr_full_rank_equivalence),
        (5, "parameter recovery", Duration::from_secs(600), c5_parameter_recovery),
        (6, "gradient and Hessian numerics", Duration::from_secs(60), c6_gradient_hessian_numerics),
        (7, "bootstrap p-value and size", Duration::from_secs(1200), c7_bootstrap),
        (8, "rank sweep monotonicity and stability", Duration::from_secs(600), c8_rank_sweep),
        (9, "residual start benefit", Duration::from_secs(600), c9_residual_start),
        (10, "CLI contract", Duration::from_secs(30), c10_cli_contract),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass && elapsed <= budget, v.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {detail} [{:.1} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
