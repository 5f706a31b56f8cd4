use crate::report;
use crate::{Command, Common};
use anyhow::{bail, Context, Result};
use slq_core::convexity::Verdict;
use slq_core::{
    assess_convexity, estimate_cost, feedback_from, load_scenario, riccati_direct, riccati_iterate, simulate,
    verify_value_function, ControlPath, ControlPolicy, ConvexityOptions, Error, RiccatiOptions, RiccatiSolution64,
    Scenario64, SimOptions, VerifyOptions,
};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAULT: u8 = 1;
pub const EXIT_REJECTED: u8 = 2;
pub const EXIT_STATISTICAL: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;

/// Relative slack allowed between consecutive refinement discrepancies.
const REFINE_SLACK: f64 = 0.10;

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Solve(c) => solve(&c),
        Command::Simulate {
            common,
            zero_control,
            dump_trajectories,
        } => simulate_cmd(&common, zero_control, dump_trajectories),
        Command::Verify {
            common,
            perturbations,
            perturbation_paths,
            inject_bias,
        } => verify(&common, perturbations, perturbation_paths, inject_bias),
        Command::Convexity { common, eps0, basis } => convexity(&common, eps0, basis),
        Command::Refine {
            common,
            dims,
            full_path,
        } => refine(&common, &dims, full_path),
    }
}

fn load(c: &Common) -> Result<Scenario64> {
    let mut sc: Scenario64 = load_scenario(&c.scenario).with_context(|| format!("loading {}", c.scenario.display()))?;
    if let Some(seed) = c.seed_override {
        sc.seed = seed;
    }
    if let Some(paths) = c.paths {
        if paths == 0 {
            bail!("--paths must be positive");
        }
        sc.mc_paths = paths;
    }
    if let Some(&m) = c.grids.last() {
        sc = sc.with_steps(m)?;
    }
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(sc)
}

fn options(c: &Common) -> RiccatiOptions<f64> {
    RiccatiOptions {
        tol: c.tol,
        max_iter: c.max_iter,
        rank_tol: c.rank_tol,
    }
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

enum Solved {
    Certified(Box<RiccatiSolution64>, &'static str),
    Rejected(serde_json::Value, String),
}

/// Successive approximation first; when some `K_j` is singular the direct
/// pseudo-inverse integration may still produce a regular solution.
fn solve_scenario(sc: &Scenario64, opts: &RiccatiOptions<f64>) -> Result<Solved> {
    match riccati_iterate(&sc.model, &sc.coeffs, &sc.grid, opts) {
        Ok(sol) if sol.certificate.kind.is_certified() => Ok(Solved::Certified(Box::new(sol), "iterate")),
        Ok(sol) => {
            let value = sol.value(&sc.eta);
            let reason = format!("solution is {}", sol.certificate.kind.name());
            Ok(Solved::Rejected(report::certificate(&sol, "iterate", value), reason))
        }
        Err(Error::KNotInvertible {
            iteration,
            node,
            lambda_min,
        }) => {
            if let Ok(sol) = riccati_direct(&sc.model, &sc.coeffs, &sc.grid, opts.rank_tol) {
                if sol.certificate.kind.is_certified() {
                    return Ok(Solved::Certified(Box::new(sol), "direct"));
                }
            }
            let reason = format!(
                "K_{iteration} is not positive definite at node {node} (t = {}, lambda_min(K) = {lambda_min:e})",
                sc.grid.node(node)
            );
            Ok(Solved::Rejected(
                report::evidence_against(iteration, node, lambda_min, sc.grid.steps()),
                reason,
            ))
        }
        Err(e) => Err(e.into()),
    }
}

fn solve(c: &Common) -> Result<u8> {
    let sc = load(c)?;
    let opts = options(c);
    let extra_grids = &c.grids[..c.grids.len().saturating_sub(1)];
    if !extra_grids.is_empty() {
        let mut w = create(&c.out, "grids.csv")?;
        writeln!(w, "m,value,iterations,residual")?;
        for &m in extra_grids.iter().chain(c.grids.last()) {
            let sg = sc.with_steps(m)?;
            if let Solved::Certified(sol, _) = solve_scenario(&sg, &opts)? {
                writeln!(
                    w,
                    "{m},{},{},{}",
                    slq_core::io::fmt17(sol.value(&sg.eta)),
                    sol.iterations,
                    slq_core::io::fmt17(sol.residual)
                )?;
            }
        }
        w.flush()?;
    }
    match solve_scenario(&sc, &opts)? {
        Solved::Certified(sol, method) => {
            let value = sol.value(&sc.eta);
            let mut w = create(&c.out, "riccati.csv")?;
            sol.write_csv(&mut w)?;
            w.flush()?;
            write_json(&c.out, "certificate.json", &report::certificate(&sol, method, value))?;
            println!(
                "{}: <P(t0) eta, eta> = {value:.12e}, iterations = {}, kmin = {:.6e}, residual = {:.3e}",
                sol.certificate.kind.name(),
                sol.iterations,
                sol.certificate.kmin,
                sol.residual
            );
            Ok(EXIT_OK)
        }
        Solved::Rejected(doc, reason) => {
            write_json(&c.out, "certificate.json", &doc)?;
            eprintln!("not certified: {reason}");
            Ok(EXIT_REJECTED)
        }
    }
}

fn sim_options(c: &Common, sc: &Scenario64) -> SimOptions {
    SimOptions {
        threads: c.threads,
        ..SimOptions::for_scenario(sc)
    }
}

fn simulate_cmd(c: &Common, zero_control: bool, dump: bool) -> Result<u8> {
    let sc = load(c)?;
    let (policy, name, value) = if zero_control {
        let u = ControlPath::zeros(sc.grid, sc.control_dim());
        (ControlPolicy::OpenLoop(u), "zero", None)
    } else {
        match solve_scenario(&sc, &options(c))? {
            Solved::Certified(sol, _) => {
                let theta = feedback_from(&sol, &sc.coeffs, c.rank_tol)?;
                (ControlPolicy::Feedback(theta), "feedback", Some(sol.value(&sc.eta)))
            }
            Solved::Rejected(_, reason) => {
                eprintln!("no feedback available: {reason}");
                return Ok(EXIT_REJECTED);
            }
        }
    };
    let opts = SimOptions {
        record: dump,
        coarse_shadow: sc.grid.steps() % 2 == 0,
        ..sim_options(c, &sc)
    };
    let ens = simulate(&sc, &policy, &opts)?;
    let est = estimate_cost(&sc, &policy, &ens);

    let mut w = create(&c.out, "ensemble.csv")?;
    ens.write_summary_csv(&mut w, &sc.coeffs.g)?;
    w.flush()?;
    if dump {
        let mut w = create(&c.out, "states.csv")?;
        ens.write_states_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&c.out, "controls.csv")?;
        ens.write_controls_csv(&mut w)?;
        w.flush()?;
    }
    write_json(&c.out, "cost.json", &report::cost(&est, name, value))?;
    println!(
        "{name}: mean cost = {:.10e} +- {:.3e} over {} paths",
        est.mean, est.stderr, est.n_paths
    );
    Ok(EXIT_OK)
}

fn verify(c: &Common, perturbations: usize, perturbation_paths: Option<usize>, inject_bias: f64) -> Result<u8> {
    let sc = load(c)?;
    let sol = match solve_scenario(&sc, &options(c))? {
        Solved::Certified(sol, _) => sol,
        Solved::Rejected(_, reason) => {
            eprintln!("cannot verify: {reason}");
            return Ok(EXIT_REJECTED);
        }
    };
    let mut opts = VerifyOptions::for_scenario(&sc);
    opts.threads = c.threads;
    opts.rank_tol = c.rank_tol;
    opts.perturbations = perturbations;
    opts.inject_bias = inject_bias;
    if let Some(p) = perturbation_paths {
        opts.perturbation_paths = p;
    }
    let r = verify_value_function(&sc, &sol, &opts)?;
    write_json(&c.out, "verify.json", &report::verify(&r))?;
    println!(
        "value = {:.10e}, MC = {:.10e} (stderr {:.3e}, bias {:.3e}), z = {:.3}",
        r.value, r.mc_mean, r.stderr, r.bias, r.z
    );
    for (i, p) in r.perturbations.iter().enumerate() {
        if !p.identity_ok() || !p.margin_ok {
            eprintln!(
                "perturbation {i} ({}): z = {:.3}, margin = {:.3e}",
                p.kind.name(),
                p.z,
                p.margin
            );
        }
    }
    Ok(if r.all_ok() { EXIT_OK } else { EXIT_STATISTICAL })
}

fn convexity(c: &Common, eps0: Option<f64>, basis: Option<usize>) -> Result<u8> {
    let sc = load(c)?;
    let mut opts = ConvexityOptions::for_scenario(&sc);
    opts.riccati = options(c);
    if let Some(e) = eps0 {
        opts.eps0 = e;
    }
    if let Some(b) = basis {
        opts.hessian_basis = b;
    }
    let pool = match c.threads {
        Some(t) => Some(rayon_pool(t)?),
        None => None,
    };
    let r = match &pool {
        Some(p) => p.install(|| assess_convexity(&sc, &opts)),
        None => assess_convexity(&sc, &opts),
    };
    write_json(&c.out, "convexity.json", &report::convexity(&r))?;
    match &r.verdict {
        Verdict::CertifiedConvex { lambda, witness } => {
            println!("CertifiedConvex via {} (lambda = {lambda:.6e})", witness.name());
            Ok(EXIT_OK)
        }
        Verdict::EvidenceAgainst { witness } => {
            println!("EvidenceAgainst: {witness}");
            Ok(EXIT_REJECTED)
        }
        Verdict::Inconclusive { reason } => {
            println!("Inconclusive: {reason}");
            Ok(EXIT_INCONCLUSIVE)
        }
    }
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?)
}

/// True when every entry is at most `(1 + slack)` times its predecessor.
fn non_increasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-14)
}

fn refine(c: &Common, dims: &[usize], full_path: bool) -> Result<u8> {
    let sc = load(c)?;
    if dims.len() < 2 {
        bail!("configuration error: --dims needs at least two truncation levels");
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        bail!("configuration error: --dims must be strictly increasing");
    }
    if dims[0] == 0 || *dims.last().unwrap() > sc.state_dim() {
        bail!("configuration error: --dims entries must lie in 1..={}", sc.state_dim());
    }
    let opts = options(c);
    let mut solutions = Vec::with_capacity(dims.len());
    for &d in dims {
        let sub = sc.truncate(d)?;
        match solve_scenario(&sub, &opts)? {
            Solved::Certified(sol, _) => solutions.push(sol),
            Solved::Rejected(_, reason) => {
                eprintln!("truncation n = {d} not certified: {reason}");
                return Ok(EXIT_REJECTED);
            }
        }
    }
    let reference = solutions.last().unwrap();
    let n_max = *dims.last().unwrap();
    // P_{n_i} padded with zeros to n_max, and its leading block of P_{n_max}
    let compare = |p: &nalgebra::DMatrix<f64>, q: &nalgebra::DMatrix<f64>| {
        let d = p.nrows();
        let mut padded = nalgebra::DMatrix::zeros(n_max, n_max);
        padded.view_mut((0, 0), (d, d)).copy_from(p);
        let full = (padded - q).norm();
        let block = (p - q.view((0, 0), (d, d))).norm();
        (full, block)
    };

    let mut w = create(&c.out, "refine.csv")?;
    writeln!(w, "n,discrepancy,block_discrepancy")?;
    let mut column = Vec::with_capacity(dims.len());
    for (sol, &d) in solutions.iter().zip(dims) {
        let (full, block) = compare(sol.p.first(), reference.p.first());
        writeln!(w, "{d},{},{}", slq_core::io::fmt17(full), slq_core::io::fmt17(block))?;
        println!("n = {d}: discrepancy = {full:.6e} (block {block:.6e})");
        column.push(full);
    }
    w.flush()?;

    if full_path {
        let mut w = create(&c.out, "refine_path.csv")?;
        writeln!(w, "n,node,time,discrepancy,block_discrepancy")?;
        for (sol, &d) in solutions.iter().zip(dims) {
            for i in 0..=sc.grid.steps() {
                let (full, block) = compare(sol.p.node(i), reference.p.node(i));
                writeln!(
                    w,
                    "{d},{i},{},{},{}",
                    slq_core::io::fmt17(sc.grid.node(i)),
                    slq_core::io::fmt17(full),
                    slq_core::io::fmt17(block)
                )?;
            }
        }
        w.flush()?;
    }

    if non_increasing(&column, REFINE_SLACK) {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "discrepancies are not non-increasing within {:.0}%",
            REFINE_SLACK * 100.0
        );
        Ok(EXIT_REJECTED)
    }
}
