//! The experiments behind each CLI verb. Each one fills an [`Artifacts`]
//! with CSV tables, checks and fitted constants; nothing here writes files.

use qdyn_core::bounds::{stability_compare, theorem_main_suite, EnergyGrid};
use qdyn_core::dynamics::{
    amplitude_evolution, amplitude_parseval, exponent_fit, growth_slope, moments, outside_probability,
    AmplitudeProfile, BoxSpec, EnergyQuadrature, FitMode, Geometry, Method,
};
use qdyn_core::potentials::{Potential, PotentialSpec};
use qdyn_core::quasiperiodic::{
    an_measure_estimate, cf_expand, cocycle_constants, fit_growth_constants, growth_site_scan, ir_decay_check,
    lyapunov_sandwich, weak_brjuno_profile,
};
use qdyn_core::tracemap::{
    band_structure, fib, iterate, koebe_annulus_check, schedule, triple_intersection_count,
};
use qdyn_core::transfer::{transfer, Direction};
use qdyn_core::{Complex64 as C64, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::report::{num, Artifacts, Status, Table};

/// Why an experiment stopped before producing its artifacts.
#[derive(Debug)]
pub enum Failure {
    /// The configuration asks for something the routines reject.
    Config(ConfigError),
    /// A computation failed (an inequality or structural check inside the library).
    Compute(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter { name, reason } => Failure::Config(ConfigError::new(name, reason)),
            other => Failure::Compute(other),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Runs `experiment` on a validated configuration.
pub fn run(experiment: Experiment, config: &RunConfig, art: &mut Artifacts) -> Outcome {
    match experiment {
        Experiment::Simulate => simulate(config, art, false),
        Experiment::Exponents => simulate(config, art, true),
        Experiment::Tracemap => tracemap(config, art),
        Experiment::Bands => bands(config, art),
        Experiment::VerifyBounds => verify_bounds(config, art),
        Experiment::Amo => amo(config, art),
        Experiment::Stability => stability(config, art),
    }
}

fn compiled(config: &RunConfig) -> Result<Potential, Failure> {
    let spec = config
        .potential
        .as_ref()
        .ok_or_else(|| ConfigError::new("potential", "required by this experiment"))?;
    Ok(spec.compile()?)
}

fn profile_at(potential: &Potential, config: &RunConfig, time: f64) -> Result<AmplitudeProfile, Failure> {
    let radius = config.radii.iter().map(|r| r.unsigned_abs() as usize).max().unwrap_or(0);
    let boxed = match config.box_half_width {
        Some(l) => BoxSpec::whole_line(l)?,
        None => BoxSpec::for_time(time, radius, Geometry::WholeLine)?,
    };
    Ok(match config.method {
        Method::Parseval => {
            let mut quad = EnergyQuadrature::for_time(time);
            if let Some(step) = config.energy_step {
                quad.step = step;
            }
            quad.exterior_nodes = config.exterior_nodes;
            amplitude_parseval(potential, time, &boxed, &quad)?
        }
        Method::Evolution => amplitude_evolution(potential, time, &boxed)?,
    })
}

fn simulate(config: &RunConfig, art: &mut Artifacts, fit_exponents: bool) -> Outcome {
    let potential = compiled(config)?;
    let mut mass = Table::new("mass", &["T", "mass", "exterior_mass", "edge_weight", "leak_warning"]);
    let mut outside = Table::new("outside", &["T", "N", "total", "right", "left"]);
    let mut moment_table = Table::new("moments", &["T", "p", "value"]);
    let mut curves: Vec<Vec<(f64, f64)>> = vec![Vec::new(); config.moments.len()];
    for &time in &config.times {
        let profile = profile_at(&potential, config, time)?;
        art.stage(format!("profile T={time}"));
        if !fit_exponents {
            art.table(Table::from_csv(format!("profile_T{time}"), &profile.to_csv()));
        }
        mass.push(vec![
            num(time),
            num(profile.mass),
            profile.exterior_mass.map(num).unwrap_or_default(),
            num(profile.edge_weight),
            profile.leak_warning.to_string(),
        ]);
        let (ok, value, limit) = match config.method {
            Method::Parseval => (
                (0.999..=1.0 + 1e-6).contains(&profile.mass),
                num(profile.mass),
                "[0.999, 1.000001]".to_string(),
            ),
            Method::Evolution => (!profile.leak_warning, num(profile.edge_weight), "0.001".to_string()),
        };
        art.check(format!("mass T={time}"), Status::from_bool(ok), value, limit);
        for &n in &config.radii {
            let p = outside_probability(&profile, n);
            outside.push(vec![num(time), n.to_string(), num(p.total), num(p.right), num(p.left)]);
        }
        for (i, &p) in config.moments.iter().enumerate() {
            let m = moments(&profile, p)?;
            moment_table.push(vec![num(time), num(p), num(m)]);
            curves[i].push((time, m));
        }
    }
    art.table(mass);
    if !config.radii.is_empty() {
        art.table(outside);
    }
    art.table(moment_table);
    if fit_exponents {
        let mut table = Table::new("exponents", &["p", "slope", "r_squared", "beta", "beta_lower", "beta_upper"]);
        for (i, &p) in config.moments.iter().enumerate() {
            let fit = growth_slope(&curves[i])?;
            let beta = fit.slope / p;
            let (lower, upper) = if curves[i].len() >= 4 {
                (
                    exponent_fit(&curves[i], FitMode::Lower).map(|s| num(s / p)).unwrap_or_default(),
                    exponent_fit(&curves[i], FitMode::Upper).map(|s| num(s / p)).unwrap_or_default(),
                )
            } else {
                (String::new(), String::new())
            };
            table.push(vec![num(p), num(fit.slope), num(fit.r_squared), num(beta), lower, upper]);
            art.constant(format!("beta({p})"), beta);
            if let Some([lo, hi]) = config.beta_range {
                art.check(
                    format!("beta({p}) in range"),
                    Status::from_bool((lo..=hi).contains(&beta)),
                    num(beta),
                    format!("[{lo}, {hi}]"),
                );
            }
        }
        art.table(table);
        art.stage("exponent fits");
    }
    Ok(())
}

fn tracemap(config: &RunConfig, art: &mut Artifacts) -> Outcome {
    let lambda = config.lambda;
    let half = lambda + 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let energies: Vec<C64> = (0..config.samples)
        .map(|_| C64::new(rng.gen_range(-half..=half), rng.gen_range(0.0..=config.im_max)))
        .collect();
    let fibonacci = PotentialSpec::Fibonacci { lambda }.compile()?;
    let inv_tol = 1e-9 * (lambda * lambda / 4.0).max(1.0);
    let mut samples = Table::new("samples", &["i", "re", "im", "escape_index", "saturated_at", "growth_ok"]);
    let mut consistency = Table::new("consistency", &["i", "k", "x_re", "x_im", "half_trace_re", "half_trace_im", "rel_error"]);
    let mut residuals = Table::new("residuals", &["i", "k", "residual"]);
    let (mut worst_rel, mut worst_res) = (0.0f64, 0.0f64);
    let mut growth_ok = true;
    for (i, &z) in energies.iter().enumerate() {
        let orbit = iterate(z, lambda, config.k_max, config.delta)?;
        art.table(Table::from_csv(format!("orbit_{i}"), &orbit.to_csv()));
        let growth = orbit.growth.as_ref().map(|g| g.passed());
        growth_ok &= growth != Some(false);
        samples.push(vec![
            i.to_string(),
            num(z.re),
            num(z.im),
            orbit.escape.index().map(|n| n.to_string()).unwrap_or_default(),
            orbit.saturated_at.map(|n| n.to_string()).unwrap_or_default(),
            growth.map(|g| g.to_string()).unwrap_or_default(),
        ]);
        for k in 1..=config.k_max.min(16) {
            let Some(x) = orbit.value(k as i64) else { break };
            let half_trace = transfer(&fibonacci, fib(k as u32)? as i64, z).trace() / 2.0;
            let rel = (x - half_trace).norm() / half_trace.norm().max(1.0);
            worst_rel = worst_rel.max(rel);
            consistency.push(vec![
                i.to_string(),
                k.to_string(),
                num(x.re),
                num(x.im),
                num(half_trace.re),
                num(half_trace.im),
                num(rel),
            ]);
        }
        for (k, r) in orbit.invariant_residuals() {
            worst_res = worst_res.max(r);
            residuals.push(vec![i.to_string(), k.to_string(), num(r)]);
        }
    }
    art.stage("orbits");
    art.check("trace consistency", Status::from_bool(worst_rel <= 1e-8), num(worst_rel), "1e-8");
    art.check("invariant residual", Status::from_bool(worst_res <= inv_tol), num(worst_res), num(inv_tol));
    art.check("post-escape growth", Status::from_bool(growth_ok), growth_ok.to_string(), "true");
    art.table(samples);
    art.table(consistency);
    art.table(residuals);
    let band_k = config.k_max.min(16);
    let set = band_structure(band_k, lambda, config.delta)?;
    let count_ok = set.bands.len() as u64 == fib(band_k as u32)?;
    art.check(
        format!("band count k={band_k}"),
        Status::from_bool(count_ok),
        set.bands.len().to_string(),
        fib(band_k as u32)?.to_string(),
    );
    art.table(Table::from_csv(format!("bands_k{band_k}"), &set.to_csv()));
    art.stage("bands");
    Ok(())
}

fn bands(config: &RunConfig, art: &mut Artifacts) -> Outcome {
    let (lambda, delta) = (config.lambda, config.delta);
    let half = lambda + 3.0;
    let mut counts = Table::new("band_counts", &["k", "bands", "expected", "disjoint", "triple_points"]);
    for k in config.k_min..=config.k_max {
        let set = band_structure(k, lambda, delta)?;
        let expected = fib(k as u32)?;
        let disjoint = set.bands.windows(2).all(|w| w[0].1 < w[1].0)
            && set.bands.iter().zip(&set.zeros).all(|((l, r), z)| l <= z && z <= r);
        let triple = triple_intersection_count(k, lambda, delta, -half, half, config.grid_points);
        counts.push(vec![
            k.to_string(),
            set.bands.len().to_string(),
            expected.to_string(),
            disjoint.to_string(),
            triple.to_string(),
        ]);
        art.check(
            format!("band count k={k}"),
            Status::from_bool(set.bands.len() as u64 == expected),
            set.bands.len().to_string(),
            expected.to_string(),
        );
        art.check(format!("disjoint k={k}"), Status::from_bool(disjoint), disjoint.to_string(), "true");
        art.check(format!("triple intersection k={k}"), Status::from_bool(triple == 0), triple.to_string(), "0");
        art.table(Table::from_csv(format!("bands_k{k}"), &set.to_csv()));
    }
    art.table(counts);
    art.stage("bands");
    Ok(())
}

fn verify_bounds(config: &RunConfig, art: &mut Artifacts) -> Outcome {
    let potential = compiled(config)?;
    let points: Vec<(f64, usize)> = if config.schedule {
        let lambda = config.fibonacci_lambda()?;
        let koebe = koebe_annulus_check(&[4, 5, 6, 7, 8], lambda, config.delta, 16)?;
        art.constant("c_delta", koebe.c_delta);
        art.constant("d_delta", koebe.d_delta);
        art.stage("koebe calibration");
        config
            .times
            .iter()
            .map(|&t| Ok((t, schedule(t, lambda, config.delta, config.nu, koebe.d_delta)?.n as usize)))
            .collect::<Result<_, Error>>()?
    } else {
        config.times.iter().copied().zip(config.radii.iter().map(|r| *r as usize)).collect()
    };
    let suite = theorem_main_suite(&potential, &points, Direction::Right)?;
    art.stage("bounds");
    let mut table = Table::new(
        "bounds",
        &["T", "N", "lhs_right", "lhs_left", "lhs_total", "log_rhs_exp", "log_rhs_int", "log_rhs", "log_i"],
    );
    for r in &suite.reports {
        table.push(vec![
            num(r.time),
            r.n.to_string(),
            num(r.lhs_right),
            num(r.lhs_left),
            num(r.lhs_total),
            num(r.log_rhs_exp),
            num(r.log_rhs_int),
            num(r.log_rhs),
            num(r.log_i),
        ]);
    }
    art.table(table);
    art.report("bound_report", &suite);
    art.constant("decay", suite.decay);
    art.constant("log_constant", suite.log_constant);
    art.constant("log_lower_constant", suite.log_lower_constant);
    art.check(
        "upper bound after calibration",
        Status::from_bool(suite.upper_holds()),
        suite.upper_violations.len().to_string(),
        "0",
    );
    art.check(
        "lower bound after calibration",
        Status::from_bool(suite.lower_holds()),
        suite.lower_violations.len().to_string(),
        "0",
    );
    if config.trend_checks {
        art.check(
            "P_r decreasing",
            Status::from_bool(suite.lhs_decreasing),
            suite.lhs_decreasing.to_string(),
            "true",
        );
        art.check(
            "log P_r / log T decreasing",
            Status::from_bool(suite.log_ratio_decreasing),
            suite.log_ratio_decreasing.to_string(),
            "true",
        );
    }
    Ok(())
}

fn amo(config: &RunConfig, art: &mut Artifacts) -> Outcome {
    let potential = compiled(config)?;
    let theta = config.trig_theta()?;
    let cf = cf_expand(theta, config.k_max + 1)?;
    art.check("continued fraction identities", Status::from_bool(cf.verify()), cf.verify().to_string(), "true");
    art.table(Table::from_csv("continued_fraction", &cf.to_csv()));
    let profile = weak_brjuno_profile(&cf)?;
    art.table(Table::from_csv("brjuno", &profile.to_csv()));
    art.stage("continued fraction");

    let sandwich = lyapunov_sandwich(&potential, config.lyapunov_steps, config.lyapunov_samples, 5, 3, 0.05)?;
    let mut table = Table::new("sandwich", &["re", "im", "gamma"]);
    for p in &sandwich.points {
        table.push(vec![num(p.re), num(p.im), num(p.gamma)]);
    }
    art.table(table);
    art.constant("herman_floor", sandwich.floor);
    art.constant("gamma_lower", sandwich.lower);
    art.constant("gamma_prime", sandwich.gamma_prime);
    art.check(
        "Lyapunov sandwich",
        Status::from_bool(sandwich.holds()),
        num(sandwich.lower),
        format!("[{}, {}]", num(sandwich.floor - sandwich.tolerance), num(sandwich.gamma_prime)),
    );
    art.stage("Lyapunov sandwich");

    let z = C64::new(config.z_re, config.z_im);
    let d = potential.trig_degree().unwrap_or(1);
    let mut an = Table::new(
        "an_sets",
        &["n", "omega_points", "gamma_hat", "c_hat", "measure", "interval_count", "max_intervals", "longest_interval"],
    );
    for &n in &config.an_blocks {
        let points = config.omega_points.unwrap_or(16 * n * d);
        let r = an_measure_estimate(&potential, n, z, points)?;
        an.push(vec![
            n.to_string(),
            points.to_string(),
            num(r.gamma_hat),
            num(r.c_hat),
            num(r.measure),
            r.interval_count.to_string(),
            r.max_intervals().to_string(),
            num(r.longest_interval),
        ]);
        art.check(format!("A_n structure n={n}"), Status::from_bool(r.holds()), num(r.measure), num(r.c_hat));
    }
    art.table(an);
    art.stage("A_n sets");

    let constants = cocycle_constants(&potential, z, config.lyapunov_steps, config.lyapunov_samples)?;
    let mut sites = Vec::new();
    let mut table = Table::new(
        "growth_sites",
        &["k", "q", "n_k", "j_k", "log_norm", "log_threshold", "lower_bound", "block_site", "dichotomy"],
    );
    for k in config.k_min..=config.k_max {
        let s = growth_site_scan(&potential, z, &cf, k, &constants)?;
        table.push(vec![
            k.to_string(),
            s.q.to_string(),
            s.n_k.to_string(),
            s.j_k.to_string(),
            num(s.log_norm),
            num(s.log_threshold),
            num(s.lower_bound),
            s.block_site.map(|j| j.to_string()).unwrap_or_default(),
            s.dichotomy.map(|b| b.to_string()).unwrap_or_default(),
        ]);
        let ok = s.j_k as f64 >= s.lower_bound && s.dichotomy != Some(false);
        art.check(format!("growth site k={k}"), Status::from_bool(ok), s.j_k.to_string(), num(s.lower_bound));
        sites.push(s);
    }
    art.table(table);
    let fitted = fit_growth_constants(&sites)?;
    art.constant("gamma_hat", constants.gamma_hat);
    art.constant("c_hat", constants.c_hat);
    art.constant("C1", fitted.c1);
    art.constant("C2", fitted.c2);
    art.constant("C3_growth", fitted.c3);
    art.stage("growth sites");

    let ks: Vec<usize> = (config.k_min..=config.k_max).collect();
    let grid = config.energy_step.map(|step| EnergyGrid { step });
    let report = ir_decay_check(&potential, &cf, &ks, config.alpha, fitted.c2, grid)?;
    art.table(Table::from_csv("ir_decay", &report.to_csv()));
    art.constant("C3", report.c3);
    art.constant("ir_fit_r_squared", report.fit.r_squared);
    art.constant("mirror_defect", report.mirror_defect);
    let status = if report.applicable {
        Status::from_bool(report.holds(config.min_r2, 1e-12))
    } else {
        Status::NotApplicable
    };
    art.check("I_r decay", status, num(report.c3), format!("C3 > 0, R² ≥ {}", config.min_r2));
    art.report("ir_decay", &report);
    art.stage("I_r decay");
    Ok(())
}

fn stability(config: &RunConfig, art: &mut Artifacts) -> Outcome {
    let spec = config
        .potential
        .clone()
        .ok_or_else(|| ConfigError::new("potential", "required by this experiment"))?;
    let first = spec.compile()?;
    let second = PotentialSpec::Perturbed {
        base: Box::new(spec),
        overrides: config.perturbation.iter().map(|s| (s.site, s.value)).collect(),
    }
    .compile()?;
    let report = stability_compare(&first, &second, &config.eps, config.energies)?;
    let mut table = Table::new("stability", &["eps", "n_max", "max_log_ratio", "min_log_ratio", "exponent"]);
    for l in &report.levels {
        table.push(vec![
            num(l.eps),
            l.n_max.to_string(),
            num(l.max_log_ratio),
            num(l.min_log_ratio),
            num(l.exponent),
        ]);
    }
    art.table(table);
    art.report("stability", &report);
    art.constant("exponent", report.exponent);
    art.constant("log_uniform_constant", report.log_uniform_constant);
    if let Some(c) = report.log_a_priori_constant {
        art.constant("log_a_priori_constant", c);
    }
    let status = match report.bounded {
        Some(ok) => Status::from_bool(ok),
        None => Status::NotApplicable,
    };
    art.check(
        "uniformly bounded ratio",
        status,
        num(report.log_uniform_constant),
        report.log_a_priori_constant.map(num).unwrap_or_default(),
    );
    art.stage("stability");
    Ok(())
}
