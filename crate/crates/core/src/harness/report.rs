//! Summaries and plot data from a directory of result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::metrics::{self, ExperimentResult};

use super::sweep::{rows_from_csv, SweepRow};
use super::HarnessError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

enum Parsed {
    Sweep(Vec<SweepRow>),
    Run(Vec<ExperimentResult>),
}

fn parse_file(path: &Path, text: &str) -> Option<Parsed> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => rows_from_csv(text)
            .ok()
            .map(Parsed::Sweep)
            .or_else(|| metrics::from_csv(text).ok().map(Parsed::Run)),
        Some("json") => serde_json::from_str(text)
            .ok()
            .map(Parsed::Sweep)
            .or_else(|| metrics::from_json(text).ok().map(Parsed::Run)),
        _ => None,
    }
}

#[derive(Default)]
struct Acc {
    count: usize,
    sum: f64,
}

impl Acc {
    fn add(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Per-key means of `value`, skipping rows where it is missing.
fn means<K: Ord, F, G>(rows: &[SweepRow], key: F, value: G) -> BTreeMap<K, Acc>
where
    F: Fn(&SweepRow) -> K,
    G: Fn(&SweepRow) -> Option<f64>,
{
    let mut out: BTreeMap<K, Acc> = BTreeMap::new();
    for r in rows {
        let acc = out.entry(key(r)).or_default();
        if let Some(v) = value(r) {
            acc.add(v);
        }
    }
    out
}

fn dat<K, F>(header: &str, series: &BTreeMap<K, Acc>, x: F) -> String
where
    F: Fn(&K) -> String,
{
    let mut s = format!("# {header}\n");
    for (k, acc) in series {
        let _ = writeln!(s, "{} {:.3}", x(k), acc.mean());
    }
    s
}

/// Plot files (name, contents) for one experiment.
fn plots(experiment: &str, rows: &[SweepRow]) -> Vec<(String, String)> {
    let by_n = |value: fn(&SweepRow) -> Option<f64>| means(rows, |r| r.n, value);
    match experiment {
        "pairwise_time" => {
            let series = means(rows, |r| (r.step, r.n), |r| Some(r.mean_pairwise_us));
            let mut steps: Vec<usize> = series.keys().map(|k| k.0).collect();
            steps.dedup();
            steps
                .into_iter()
                .map(|step| {
                    let sub: BTreeMap<usize, Acc> = means(
                        &rows
                            .iter()
                            .filter(|r| r.step == step)
                            .cloned()
                            .collect::<Vec<_>>(),
                        |r| r.n,
                        |r| Some(r.mean_pairwise_us),
                    );
                    (
                        format!("pairwise_time_step{step}.dat"),
                        dat("n mean_pairwise_us", &sub, |n| n.to_string()),
                    )
                })
                .collect()
        }
        "individual_time" => vec![(
            "individual_time.dat".into(),
            dat(
                "n mean_individual_us",
                &by_n(|r| Some(r.mean_individual_us)),
                |n| n.to_string(),
            ),
        )],
        "scalability" => vec![(
            "scalability.dat".into(),
            dat("n max_msgs", &by_n(|r| Some(r.max_msgs as f64)), |n| {
                n.to_string()
            }),
        )],
        "energy" => vec![(
            "energy.dat".into(),
            dat("n energy_units", &by_n(|r| Some(r.energy_units)), |n| {
                n.to_string()
            }),
        )],
        "detection" => {
            let mut tps: Vec<u64> = rows.iter().map(|r| r.t_p_us).collect();
            tps.sort_unstable();
            tps.dedup();
            tps.into_iter()
                .map(|tp| {
                    let sub: Vec<SweepRow> =
                        rows.iter().filter(|r| r.t_p_us == tp).cloned().collect();
                    let series = means(
                        &sub,
                        |r| (r.p_detect * 1000.0).round() as u64,
                        |r| r.help_latency_us.map(|v| v as f64),
                    );
                    (
                        format!("detection_tp{tp}.dat"),
                        dat("p_detect mean_help_latency_us", &series, |p| {
                            format!("{:.3}", *p as f64 / 1000.0)
                        }),
                    )
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn summary_block(experiment: &str, rows: &[SweepRow], out: &mut String) {
    let _ = writeln!(out, "== {experiment} ({} runs)", rows.len());
    let key = |r: &SweepRow| (r.step, r.n, r.t_p_us, (r.p_detect * 1000.0).round() as u64);
    let mut groups: BTreeMap<_, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r);
    }
    for ((step, n, tp, _), g) in groups {
        let m = |f: &dyn Fn(&SweepRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
        let mut line = String::new();
        if step > 0 {
            let _ = write!(line, "step={step} ");
        }
        let _ = write!(
            line,
            "n={n} runs={} success={:.3} pairwise_us={:.0} individual_us={:.0} max_msgs={:.1} energy={:.0}",
            g.len(),
            m(&|r| r.success_rate),
            m(&|r| r.mean_pairwise_us),
            m(&|r| r.mean_individual_us),
            m(&|r| r.max_msgs as f64),
            m(&|r| r.energy_units),
        );
        if experiment == "detection" {
            let lat: Vec<f64> = g
                .iter()
                .filter_map(|r| r.help_latency_us.map(|v| v as f64))
                .collect();
            let mean_lat = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
            let _ = write!(
                line,
                " p_detect={:.2} t_p_us={tp} detected={}/{} help_latency_us={mean_lat:.0} coverage={:.3}",
                g[0].p_detect,
                lat.len(),
                g.len(),
                m(&|r| r.coverage.unwrap_or(0.0)),
            );
        }
        let _ = writeln!(out, "{line}");
    }
}

/// Summarizes every result file in `dir` grouped by experiment and writes
/// two-column plot files into `dir/plots`. Returns the summary text.
pub fn cmd_report(dir: &Path) -> Result<String, HarnessError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut sweeps: BTreeMap<String, Vec<SweepRow>> = BTreeMap::new();
    let mut runs: Vec<(PathBuf, ExperimentResult)> = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        match parse_file(&path, &text) {
            Some(Parsed::Sweep(rows)) => {
                for r in rows {
                    sweeps.entry(r.experiment.clone()).or_default().push(r);
                }
            }
            Some(Parsed::Run(rows)) => runs.extend(rows.into_iter().map(|r| (path.clone(), r))),
            None => log::warn!("skipping {}: not a result file", path.display()),
        }
    }
    if sweeps.values().all(Vec::is_empty) && runs.is_empty() {
        return Err(HarnessError::NoResults(dir.to_path_buf()));
    }

    let mut out = String::new();
    let plot_dir = dir.join("plots");
    for (experiment, rows) in &sweeps {
        summary_block(experiment, rows, &mut out);
        let files = plots(experiment, rows);
        if !files.is_empty() {
            fs::create_dir_all(&plot_dir).map_err(io_err(&plot_dir))?;
        }
        for (name, body) in files {
            let p = plot_dir.join(&name);
            fs::write(&p, body).map_err(io_err(&p))?;
            let _ = writeln!(out, "   plot data: plots/{name}");
        }
    }
    if !runs.is_empty() {
        let _ = writeln!(out, "== run ({} results)", runs.len());
        for (path, r) in &runs {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{name}: n={} seed={} success={:.3} pairwise_us={:.0} max_msgs={} energy={:.0}",
                r.n, r.seed, r.success_rate, r.mean_pairwise_us, r.max_msgs, r.energy_units
            );
        }
    }
    Ok(out)
}
