//! Subcommands. Each returns the process exit code and reports problems on
//! stderr.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use wdlab::sim::{analyze, compare, infnorm_probe, run};
use wdlab::Error;

use crate::config::{parse_config, PlannedRun};
use crate::csv_io::{read_trajectory_file, write_trajectory};
use crate::report;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_ABORTED: u8 = 2;

/// Writes through a hidden temporary file next to `path`, renamed into
/// place only once `fill` succeeds.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let name = path
        .file_name()
        .context("output path has no file name")?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        fill(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

enum RunResult {
    Written,
    Aborted(String),
    Failed(anyhow::Error),
}

fn execute(planned: &PlannedRun, out_dir: &Path) -> RunResult {
    let output = match run(&planned.config) {
        Ok(o) => o,
        Err(e @ Error::Aborted { .. }) => return RunResult::Aborted(e.to_string()),
        Err(e) => return RunResult::Failed(e.into()),
    };
    let written = (|| -> Result<()> {
        let phase = analyze(&output.trajectory, &planned.config)?;
        let probe = infnorm_probe(&output, &planned.config).ok();
        let stem = format!("run_{:03}", planned.index);
        write_atomic(&out_dir.join(format!("{stem}.csv")), |w| {
            write_trajectory(&output.trajectory, w)
        })?;
        let text = report::summary(planned, &phase, probe.as_deref());
        write_atomic(&out_dir.join(format!("{stem}.summary.txt")), |w| {
            Ok(w.write_all(text.as_bytes())?)
        })
    })();
    match written {
        Ok(()) => RunResult::Written,
        Err(e) => RunResult::Failed(e),
    }
}

/// Runs every configuration of the experiment file with at most `jobs`
/// runs in flight. Exit 1 on config or I/O errors, 2 if any run aborted.
pub fn cmd_run(config_path: &Path, out_dir: &Path, jobs: usize) -> u8 {
    let runs = match parse_config(config_path) {
        Ok(r) => r,
        Err(d) => {
            eprintln!("error: {d}");
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!(
            "error: cannot create output directory {}: {e}",
            out_dir.display()
        );
        return EXIT_FAILURE;
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    let results: Vec<RunResult> =
        pool.install(|| runs.par_iter().map(|r| execute(r, out_dir)).collect());

    let mut code = EXIT_OK;
    for (planned, result) in runs.iter().zip(results) {
        match result {
            RunResult::Written => {}
            RunResult::Aborted(msg) => {
                eprintln!("run {:03}: {msg}", planned.index);
                if code == EXIT_OK {
                    code = EXIT_ABORTED;
                }
            }
            RunResult::Failed(e) => {
                eprintln!("error: run {:03}: {e:#}", planned.index);
                code = EXIT_FAILURE;
            }
        }
    }
    code
}

pub fn cmd_compare(a: &Path, b: &Path, out: &Path) -> u8 {
    let result = (|| -> Result<()> {
        let ta = read_trajectory_file(a)?;
        let tb = read_trajectory_file(b)?;
        let cmp = compare(&ta, &tb)?;
        let text = report::comparison(
            &cmp,
            &a.display().to_string(),
            &b.display().to_string(),
            ta.num_steps(),
        );
        write_atomic(out, |w| Ok(w.write_all(text.as_bytes())?))
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

pub fn cmd_validate(config_path: &Path) -> u8 {
    match parse_config(config_path) {
        Ok(runs) => {
            println!("{}: ok, {} run(s)", config_path.display(), runs.len());
            EXIT_OK
        }
        Err(d) => {
            eprintln!("error: {d}");
            EXIT_FAILURE
        }
    }
}
