use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qdpair::correlator::{correlate_iter, CoincidenceHistogram};
use qdpair::io_util::write_atomic;
use qdpair::timetag::StreamReader;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{streams_in, CorrelationFlags, HIST_DIR};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, out_dir, Manifest};

/// Histograms every `.qtt` stream in `input` into `<out>/<label>.csv` and
/// writes `singles.csv` with per-file singles and rates.
pub fn run(input: &Path, out: Option<PathBuf>, flags: &CorrelationFlags) -> CliResult<Vec<CoincidenceHistogram>> {
    let streams = streams_in(input)?;
    if streams.is_empty() {
        return Err(CliError::Data(format!("no .qtt files in {}", input.display())));
    }
    let cfg = RunConfig::find_in(input)?;
    let (params, a, b) = flags.resolve(cfg.as_ref());
    let nominal = Manifest::read(input)?.map(|m| m.combination_duration_s);
    let out = out_dir(&out, input, HIST_DIR);
    ensure_dir(&out)?;

    let hists = streams
        .par_iter()
        .map(|p| -> CliResult<CoincidenceHistogram> {
            let reader = StreamReader::open(p)?;
            let label = reader.header().basis_label;
            let mut h = correlate_iter(reader, a, b, params)?;
            h.basis_label = label;
            if let Some(d) = nominal {
                h.duration_s = d;
            }
            Ok(h)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut singles = String::from("file,basis,singles_a,singles_b,coincidences,duration_s,rate_a_hz,rate_b_hz\n");
    for (p, h) in streams.iter().zip(&hists) {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("stream");
        let label = h.label_str();
        let name = if label.contains('-') { stem.to_string() } else { label.clone() };
        h.write_csv(out.join(format!("{name}.csv")))?;
        let rate = |n: u64| if h.duration_s > 0.0 { n as f64 / h.duration_s } else { 0.0 };
        let _ = writeln!(
            singles,
            "{},{},{},{},{},{},{},{}",
            p.file_name().and_then(|s| s.to_str()).unwrap_or(""),
            label,
            h.singles_a,
            h.singles_b,
            h.total(),
            h.duration_s,
            rate(h.singles_a),
            rate(h.singles_b)
        );
    }
    write_atomic(&out.join("singles.csv"), singles.as_bytes())?;
    eprintln!("{} histogram(s) written to {}", hists.len(), out.display());
    Ok(hists)
}
