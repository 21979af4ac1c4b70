//! Subcommand bodies. Data goes to `--out` (or stdout); progress and
//! verification lines go to stderr.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use fscdma_core::montecarlo::{
    analytic_sweep, hex_digest, sweep, sweep_users, write_curve_rows, BerCurve, CsvLayout, RunConfig,
};
use fscdma_core::orthocodes::{build, verify};
use fscdma_core::rng::{substream, Domain};
use fscdma_core::sensing::{pd_rayleigh, pfa, sample_energy, DetectorConfig};

use crate::config::Settings;
use crate::CliError;

/// Which curves `ber` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Analytic,
    Simulate,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
        }
    }

    /// Preset layer applied beneath the config file.
    pub fn preset(self) -> &'static [(&'static str, &'static str)] {
        &[
            ("params.n_subcarriers", "32"),
            ("run.target_pd", "0.95"),
            ("params.pr_h1", "0.2"),
        ]
    }
}

/// Output header: command, resolved settings, seed and digest.
pub fn header(command: &str, settings: &Settings, extra: &str, digest: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# fscdma {command}");
    s.push_str(&settings.comment_block());
    s.push_str(extra);
    let _ = writeln!(s, "# seed={}", settings.raw("run.master_seed"));
    let _ = writeln!(s, "# digest={digest}");
    s
}

fn write_output(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| CliError::Io(p.display().to_string(), e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io("stdout".into(), e))
        }
    }
}

/// `fscdma codes <n>`.
pub fn codes(n: usize, out: Option<&Path>, stderr: &mut dyn Write) -> Result<bool, CliError> {
    let code = build(n).map_err(|e| CliError::Failed(e.to_string()))?;
    let report = verify(&code.to_rows());
    write_output(out, &code.to_string())?;
    let diag: Vec<String> = report.diagonal().map(|d| d.to_string()).collect();
    let ok = report.is_orthogonal && report.all_nonzero;
    let _ = writeln!(stderr, "gram_diag: {}", diag.join(" "));
    let _ = writeln!(stderr, "orthogonal: {}", report.is_orthogonal);
    let _ = writeln!(stderr, "nonzero: {}", report.all_nonzero);
    Ok(ok)
}

fn detector(settings: &Settings, threshold: f64) -> Result<DetectorConfig, CliError> {
    let cfg = settings.run_config()?;
    Ok(DetectorConfig::new(
        cfg.sensing_samples,
        threshold,
        cfg.detector_snr_db(),
    )?)
}

/// `fscdma sensing roc`.
pub fn sensing_roc(
    settings: &Settings,
    validate: bool,
    out: Option<&Path>,
    stderr: &mut dyn Write,
) -> Result<bool, CliError> {
    let base = detector(settings, 0.0)?;
    let points: usize = settings.get("roc.points")?;
    if points < 2 {
        return Err(CliError::Failed("roc.points must be at least 2".into()));
    }
    let zeta_max = match settings.raw("roc.zeta_max") {
        "auto" => 2.0 * (2.0 * base.samples as f64 + 2.0 * base.mean_snr_linear()),
        _ => settings.get("roc.zeta_max")?,
    };
    if !(zeta_max > 0.0 && zeta_max.is_finite()) {
        return Err(CliError::Failed(format!(
            "roc.zeta_max must be positive, got {zeta_max}"
        )));
    }
    let grid: Vec<f64> = (0..points).map(|i| zeta_max * i as f64 / (points - 1) as f64).collect();
    let mut body = String::from("zeta,pfa,pd\n");
    let rows: Vec<(f64, f64, f64)> = grid
        .iter()
        .map(|&z| {
            let cfg = base.with_threshold(z);
            (z, pfa(&cfg), pd_rayleigh(&cfg))
        })
        .collect();
    for (z, a, b) in &rows {
        let _ = writeln!(body, "{z},{a:.9e},{b:.9e}");
    }
    let extra = format!(
        "# detector.window_snr_db={}\n# roc.zeta_max_resolved={zeta_max}\n",
        base.mean_snr_db
    );
    let text = header("sensing roc", settings, &extra, &hex_digest(body.as_bytes())) + &body;
    write_output(out, &text)?;

    if !validate {
        return Ok(true);
    }
    let draws: usize = settings.get("roc.validate_draws")?;
    let seed: u64 = settings.get("run.master_seed")?;
    let energies = |occupied: bool| -> Vec<f64> {
        let mut e: Vec<f64> = (0..draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, Domain::SensingValidation, occupied as u64, i);
                sample_energy(&base, occupied, &mut rng)
            })
            .collect();
        e.sort_by(f64::total_cmp);
        e
    };
    let (h0, h1) = (energies(false), energies(true));
    let tail = |sorted: &[f64], z: f64| (sorted.len() - sorted.partition_point(|&e| e <= z)) as f64 / draws as f64;
    let mut worst: f64 = 0.0;
    for (z, a, b) in &rows {
        for (formula, sorted) in [(*a, &h0), (*b, &h1)] {
            let se = (formula * (1.0 - formula) / draws as f64).sqrt();
            let dev = (tail(sorted, *z) - formula).abs();
            let zscore = if se > 0.0 {
                dev / se
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(zscore);
        }
    }
    let ok = worst <= 3.0;
    let _ = writeln!(
        stderr,
        "validate: max deviation {worst:.3} stderr over {points} thresholds, {draws} draws per hypothesis: {}",
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

/// Output file for one curve of a multi-curve run: `dir/stem_<tag>.ext`.
pub fn curve_path(out: &Path, tag: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    out.with_file_name(name)
}

fn sensing_lines(cfg: &RunConfig, users: &[usize]) -> Result<String, CliError> {
    let mut s = String::new();
    for &k in users {
        let d = cfg.sensing_design(k)?;
        let _ = writeln!(
            s,
            "# sensing k_users={k} zeta={} pd_local={:.9e} pfa_local={:.9e} qd={:.9e} qfa={:.9e}",
            d.detector.threshold, d.per_user.pd, d.per_user.pfa, d.fused.qd, d.fused.qfa
        );
    }
    Ok(s)
}

fn render_curve(command: &str, settings: &Settings, curve: &BerCurve, layout: CsvLayout, sensing: &str) -> String {
    let mut rows = Vec::new();
    write_curve_rows(&mut rows, curve, layout).expect("writing to memory");
    header(command, settings, sensing, &curve.config_digest) + &String::from_utf8(rows).expect("ascii")
}

/// `fscdma ber`.
pub fn ber(
    settings: &Settings,
    mode: Mode,
    figure: Option<Figure>,
    out: Option<&Path>,
    stderr: &mut dyn Write,
) -> Result<bool, CliError> {
    let cfg = settings.run_config()?;
    cfg.validate()?;
    let simulate = mode != Mode::Analytic;
    let mut command = format!("ber --mode {}", mode_name(mode));
    if let Some(f) = figure {
        let _ = write!(command, " --figure {}", f.name());
    }
    let run_snr = |cfg: &RunConfig| if simulate { sweep(cfg) } else { analytic_sweep(cfg) };

    // (tag, rendered file) per curve.
    let mut files: Vec<(String, String)> = Vec::new();
    match figure {
        None => {
            let curve = run_snr(&cfg)?;
            report(stderr, &curve);
            let layout = if simulate {
                CsvLayout::Simulated
            } else {
                CsvLayout::Analytic
            };
            let sensing = sensing_lines(&cfg, &[cfg.params.n_users])?;
            files.push((
                String::new(),
                render_curve(&command, settings, &curve, layout, &sensing),
            ));
        }
        Some(Figure::Fig2) => {
            for k in settings.list::<usize>("fig2.users")? {
                let cfg_k = RunConfig {
                    params: fscdma_core::SystemParams {
                        n_users: k,
                        ..cfg.params
                    },
                    ..cfg.clone()
                };
                let curve = run_snr(&cfg_k)?;
                report(stderr, &curve);
                let layout = if simulate {
                    CsvLayout::Simulated
                } else {
                    CsvLayout::Analytic
                };
                let sensing = sensing_lines(&cfg_k, &[k])?;
                files.push((
                    format!("k{k}"),
                    render_curve(&command, settings, &curve, layout, &sensing),
                ));
            }
        }
        Some(Figure::Fig3) => {
            let users: Vec<usize> = settings.list("fig3.users")?;
            for snr in settings.list::<f64>("fig3.snr_db")? {
                let curve = sweep_users(&cfg, &users, snr, simulate)?;
                report(stderr, &curve);
                let layout = if simulate {
                    CsvLayout::UsersSimulated
                } else {
                    CsvLayout::UsersAnalytic
                };
                let sensing = sensing_lines(&cfg, &users)?;
                files.push((
                    format!("snr{snr}"),
                    render_curve(&command, settings, &curve, layout, &sensing),
                ));
            }
        }
    }
    match out {
        Some(path) if files.len() > 1 || !files[0].0.is_empty() => {
            for (tag, body) in &files {
                write_output(Some(&curve_path(path, tag)), body)?;
            }
        }
        Some(path) => write_output(Some(path), &files[0].1)?,
        None => {
            let joined: Vec<&str> = files.iter().map(|(_, b)| b.as_str()).collect();
            write_output(None, &joined.join("\n"))?;
        }
    }
    Ok(true)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Analytic => "analytic",
        Mode::Simulate => "simulate",
        Mode::Both => "both",
    }
}

fn report(stderr: &mut dyn Write, curve: &BerCurve) {
    for p in &curve.points {
        let sim = match p.ber_simulated {
            Some(b) if p.upper_bound => format!(" sim<{:.3e}", p.ci_halfwidth.unwrap_or(0.0).max(b)),
            Some(b) => format!(" sim={b:.3e}"),
            None => String::new(),
        };
        let _ = writeln!(
            stderr,
            "ber: K={} snr={} dB analytic={:.3e}{sim} trials={} errors={}",
            p.n_users, p.snr_db, p.ber_analytic, p.trials, p.errors
        );
    }
}
