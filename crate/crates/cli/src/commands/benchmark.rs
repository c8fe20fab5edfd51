use std::path::{Path, PathBuf};

use clap::Args;

use polyrbf::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkRow};
use polyrbf::protocols::{hcp_like_scheme, DEFAULT_REPLICATIONS, TABLE1_PROTOCOLS, TRAIN_FRACTION};
use polyrbf::{generate_phantom, PhantomSpec};

use super::load_dwi;
use crate::config::ModelConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Real data; a layered phantom on the reference design when omitted.
    #[arg(long, requires_all = ["bvals", "bvecs"])]
    pub dwi: Option<PathBuf>,
    #[arg(long)]
    pub bvals: Option<PathBuf>,
    #[arg(long)]
    pub bvecs: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Phantom grid.
    #[arg(long, num_args = 3, default_values_t = [16, 16, 16])]
    pub dims: Vec<usize>,
    /// Phantom noise standard deviation (S0 = 1000).
    #[arg(long, default_value_t = 20.0)]
    pub sigma: f64,
    /// `table1`, or per-shell direction counts such as `60,30,15;15,30,60`.
    #[arg(long, default_value = "table1")]
    pub protocols: String,
    #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
    pub replications: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Summary CSV: one row per method, one column per protocol.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-replication CSV.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

pub fn parse_protocols(text: &str) -> Result<Vec<Vec<usize>>> {
    if text.eq_ignore_ascii_case("table1") {
        return Ok(TABLE1_PROTOCOLS.iter().map(|p| p.to_vec()).collect());
    }
    text.split(';')
        .map(|p| {
            p.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Usage(format!("bad direction count {c:?} in --protocols")))
                })
                .collect()
        })
        .collect()
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_summary(rows: &[BenchmarkRow], n_protocols: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["method".to_string()];
    header.extend((1..=n_protocols).map(|p| format!("Protocol-{p}")));
    w.write_record(&header).map_err(csv_err(path))?;
    let methods: [(&str, fn(&BenchmarkRow) -> f64); 2] =
        [("baseline", |r| r.baseline_mse), ("Poly-RBF", |r| r.polyrbf_mse)];
    for (name, get) in methods {
        let mut record = vec![name.to_string()];
        for p in 1..=n_protocols {
            let vals: Vec<f64> = rows.iter().filter(|r| r.protocol == p).map(get).collect();
            record.push(format!("{:.6}", vals.iter().sum::<f64>() / vals.len() as f64));
        }
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_details(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "protocol",
        "replication",
        "directions",
        "n_train",
        "n_test",
        "polyrbf_mse",
        "baseline_mse",
    ])
    .map_err(csv_err(path))?;
    for r in rows {
        let dirs: Vec<String> = r.counts.iter().map(|c| c.to_string()).collect();
        w.write_record([
            r.protocol.to_string(),
            r.replication.to_string(),
            dirs.join("/"),
            r.n_train.to_string(),
            r.n_test.to_string(),
            format!("{:e}", r.polyrbf_mse),
            format!("{:e}", r.baseline_mse),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn run(args: &BenchmarkArgs, seed: u64) -> Result<()> {
    let model = ModelConfig::load(args.config.as_deref())?;
    let protocols = parse_protocols(&args.protocols)?;
    let (volume, scheme) = match (&args.dwi, &args.bvals, &args.bvecs) {
        (Some(dwi), Some(bvals), Some(bvecs)) => load_dwi(dwi, bvals, bvecs, args.mask.as_deref())?,
        _ => {
            let d = &args.dims;
            let scheme = hcp_like_scheme()?;
            let spec = PhantomSpec::layered([d[0], d[1], d[2]], args.sigma, seed);
            (generate_phantom(&spec, &scheme)?.raw, scheme)
        }
    };
    let cfg = BenchmarkConfig {
        n: model.n,
        k: model.fixed_k()?,
        taper_mult: model.taper_mult,
        ridge: model.ridge(),
        train_fraction: TRAIN_FRACTION,
        replications: args.replications,
        seed,
    };
    let rows = run_benchmark(&volume, &scheme, &protocols, &cfg)?;
    for p in 1..=protocols.len() {
        let sel: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.protocol == p).collect();
        let wins = sel.iter().filter(|r| r.polyrbf_mse < r.baseline_mse).count();
        log::info!("protocol {p}: Poly-RBF better in {wins}/{} replications", sel.len());
    }
    write_summary(&rows, protocols.len(), &args.out)?;
    if let Some(path) = &args.details {
        write_details(&rows, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_lists() {
        assert_eq!(parse_protocols("table1").unwrap().len(), 6);
        assert_eq!(
            parse_protocols("60,30,15; 15,30,60").unwrap(),
            vec![vec![60, 30, 15], vec![15, 30, 60]]
        );
        assert!(parse_protocols("60,x").is_err());
    }
}
